"""Two-stream encoders and the projection / fusion / order / saliency heads.

Every component owns a named parameter dict (``prefix.layer.w``) and a
``forward`` built from autodiff primitives.  Encoders are fully
convolutional with a global spatial mean, so the same parameters accept
any even input size (full frames, centre crops, spectrograms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add_bias,
    concat,
    conv2d,
    matmul,
    maxpool,
    pixel_softmax,
    relu,
    spatial_mean,
    upsample_nearest,
)

__all__ = [
    "EncoderConfig",
    "ConvEncoder",
    "MLPHead",
    "LinearHead",
    "SaliencyDecoder",
    "frames_to_input",
    "spectrograms_to_input",
]

# fixed affine input scalings; frames live in [0,1], log-spectrograms in
# roughly [-13.8, 4]
_FRAME_SHIFT = 0.5
_SPEC_SHIFT = 8.0
_SPEC_SCALE = 0.15


def frames_to_input(frames: np.ndarray) -> Tensor:
    """(N,H,W) or (H,W) video frames -> centred (N,1,H,W) Tensor."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"frames_to_input: expected (N,H,W), got {arr.shape}")
    return Tensor((arr - _FRAME_SHIFT)[:, None])


def spectrograms_to_input(specs) -> Tensor:
    """List of Spectrogram (or arrays) -> scaled (N,1,256,256) Tensor."""
    mats = [np.asarray(getattr(s, "values", s), dtype=np.float32) for s in specs]
    arr = np.stack(mats)
    return Tensor(((arr + _SPEC_SHIFT) * _SPEC_SCALE)[:, None])


@dataclass
class EncoderConfig:
    input_hw: tuple[int, int] = (64, 64)
    widths: tuple[int, int, int] = (16, 32, 64)
    feat_dim: int = 128
    proj_hidden: int = 128
    embed_dim: int = 64
    first_stride: int = 1

    def __post_init__(self):
        if len(self.widths) != 3 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be three positive ints, got {self.widths}")
        if self.feat_dim < 1 or self.embed_dim < 1 or self.proj_hidden < 1:
            raise ValueError("feature/embedding dims must be positive")
        if self.first_stride < 1:
            raise ValueError(f"first_stride must be >= 1, got {self.first_stride}")
        down = 8 * self.first_stride
        if self.input_hw[0] % down or self.input_hw[1] % down:
            raise ValueError(
                f"input {self.input_hw} not divisible by the encoder downsampling {down}"
            )


def _init(rng, fan_in, shape):
    # He bound. Without normalization layers a stack this deep loses the
    # input-dependent part of its activations under the usual 1/fan_in
    # scaling; the similarity head then sees near-identical embeddings
    # for every clip and the contrastive objective degenerates into ties.
    a = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-a, a, size=shape).astype(np.float32), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class ConvEncoder:
    """Three conv-relu-pool stages, spatial mean, linear to the feature dim."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, prefix: str):
        self.cfg = cfg
        self.prefix = prefix
        w1, w2, w3 = cfg.widths
        self.conv_w = [
            _init(rng, 1 * 9, (w1, 1, 3, 3)),
            _init(rng, w1 * 9, (w2, w1, 3, 3)),
            _init(rng, w2 * 9, (w3, w2, 3, 3)),
        ]
        self.conv_b = [_zeros((w1,)), _zeros((w2,)), _zeros((w3,))]
        self.fc_w = _init(rng, w3, (w3, cfg.feat_dim))
        self.fc_b = _zeros((cfg.feat_dim,))

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            out[f"{self.prefix}.conv{i}.w"] = w
            out[f"{self.prefix}.conv{i}.b"] = b
        out[f"{self.prefix}.fc.w"] = self.fc_w
        out[f"{self.prefix}.fc.b"] = self.fc_b
        return out

    def conv_features(self, x: Tensor) -> Tensor:
        """Feature maps before the spatial mean: (N, widths[2], H', W')."""
        h = x
        for i in range(3):
            stride = self.cfg.first_stride if i == 0 else 1
            h = conv2d(h, self.conv_w[i], stride=stride, padding=1)
            h = relu(add_bias(h, self.conv_b[i]))
            h = maxpool(h)
        return h

    def features(self, x: Tensor) -> Tensor:
        """(N,1,H,W) -> (N, feat_dim)."""
        pooled = spatial_mean(self.conv_features(x))
        return add_bias(matmul(pooled, self.fc_w), self.fc_b)


class MLPHead:
    """linear -> relu -> linear."""

    def __init__(self, in_dim, hidden, out_dim, rng, prefix):
        self.prefix = prefix
        self.w1 = _init(rng, in_dim, (in_dim, hidden))
        self.b1 = _zeros((hidden,))
        self.w2 = _init(rng, hidden, (hidden, out_dim))
        self.b2 = _zeros((out_dim,))

    def params(self):
        return {
            f"{self.prefix}.fc1.w": self.w1,
            f"{self.prefix}.fc1.b": self.b1,
            f"{self.prefix}.fc2.w": self.w2,
            f"{self.prefix}.fc2.b": self.b2,
        }

    def forward(self, x: Tensor) -> Tensor:
        h = relu(add_bias(matmul(x, self.w1), self.b1))
        return add_bias(matmul(h, self.w2), self.b2)

    def forward_concat(self, parts) -> Tensor:
        return self.forward(concat(parts))


class LinearHead:
    """Single linear layer, used as the fresh downstream classifier."""

    def __init__(self, in_dim, out_dim, rng, prefix):
        self.prefix = prefix
        self.w = _init(rng, in_dim, (in_dim, out_dim))
        self.b = _zeros((out_dim,))

    def params(self):
        return {f"{self.prefix}.fc.w": self.w, f"{self.prefix}.fc.b": self.b}

    def forward(self, x: Tensor) -> Tensor:
        return add_bias(matmul(x, self.w), self.b)


class SaliencyDecoder:
    """Upsample encoder maps back to frame size; per-pixel softmax output.

    Two nearest-neighbour upsampling stages with 3x3 convs in between; the
    split of the total upsampling factor is 2 then factor/2.
    """

    def __init__(self, in_channels, total_factor, rng, prefix, hidden=16):
        if total_factor < 2 or total_factor % 2:
            raise ValueError(f"total upsampling factor must be even, got {total_factor}")
        self.prefix = prefix
        self.factor_a = 2
        self.factor_b = total_factor // 2
        self.wa = _init(rng, in_channels * 9, (hidden, in_channels, 3, 3))
        self.ba = _zeros((hidden,))
        self.wb = _init(rng, hidden * 9, (1, hidden, 3, 3))
        self.bb = _zeros((1,))

    def params(self):
        return {
            f"{self.prefix}.conv_a.w": self.wa,
            f"{self.prefix}.conv_a.b": self.ba,
            f"{self.prefix}.conv_b.w": self.wb,
            f"{self.prefix}.conv_b.b": self.bb,
        }

    def forward(self, feats: Tensor) -> Tensor:
        """(N,C,h,w) -> (N,1,h*factor,w*factor) probability maps (sum 1)."""
        h = upsample_nearest(feats, self.factor_a)
        h = relu(add_bias(conv2d(h, self.wa, padding=1), self.ba))
        h = upsample_nearest(h, self.factor_b)
        h = add_bias(conv2d(h, self.wb, padding=1), self.bb)
        return pixel_softmax(h)
