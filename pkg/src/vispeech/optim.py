"""SGD with momentum, global gradient clipping and the step LR schedule."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore", "sgd_update", "lr_at_epoch", "global_grad_norm"]


class MissingGradient(RuntimeError):
    pass


class ParamStore:
    """Named map of trainable tensors plus per-parameter momentum buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        self._momentum[name] = np.zeros_like(tensor.data)
        return tensor

    def update(self, other: "ParamStore"):
        for name, t in other._params.items():
            self.add(name, t)
            self._momentum[name] = other._momentum[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def momentum(self, name: str) -> np.ndarray:
        return self._momentum[name]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name->array view of parameters and momentum for checkpoints."""
        out: dict[str, np.ndarray] = {}
        for name, t in self._params.items():
            out[name] = t.data
        for name, m in self._momentum.items():
            out["momentum/" + name] = m
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter: {name}")
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: {src.shape} vs {t.data.shape}"
                )
            t.data[...] = src
            mkey = "momentum/" + name
            if mkey in arrays:
                self._momentum[name][...] = arrays[mkey]
            else:
                self._momentum[name][...] = 0.0


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            g = t.grad.astype(np.float64, copy=False)
            total += float((g * g).sum())
    return math.sqrt(total)


def sgd_update(
    store: ParamStore,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    clip_norm: float = 5.0,
) -> float:
    """One SGD step over every parameter in the store.

    The global gradient norm (over all parameters jointly) is rescaled to
    at most ``clip_norm`` before anything else.  Then, per parameter:
    ``g = grad + weight_decay * p``, ``m = momentum * m + g``,
    ``p = p - lr * m``.  Returns the pre-clip gradient norm.

    A parameter whose gradient is None sat outside this batch's graph (a
    batch without pair samples never touches the speech branch); it is
    left untouched, momentum included.  All gradients missing at once
    means backward never ran, which is an error.
    """
    if lr < 0 or momentum < 0 or weight_decay < 0 or clip_norm <= 0:
        raise ValueError("sgd_update: hyperparameters must be non-negative (clip_norm > 0)")
    live = []
    for name, t in store.items():
        if t.grad is None:
            continue
        if not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        live.append((name, t))
    if not live:
        raise MissingGradient("no parameter has a gradient; was backward() called?")
    norm = global_grad_norm(store)
    cs = 1.0 if norm <= clip_norm else clip_norm / norm
    for name, t in live:
        g = t.grad * np.float32(cs) if cs != 1.0 else t.grad
        g = g + np.float32(weight_decay) * t.data
        m = store._momentum[name]
        m *= np.float32(momentum)
        m += g
        t.data -= np.float32(lr) * m
    return norm


def lr_at_epoch(
    epoch: int,
    base_lr: float = 1e-3,
    decay_every: int = 20,
    decay_factor: float = 10.0,
) -> float:
    """Step schedule: the base rate divided by ``decay_factor`` every
    ``decay_every`` epochs (``1e-3 -> 1e-4`` at epoch 20, and so on)."""
    if epoch < 0:
        raise ValueError(f"lr_at_epoch: epoch must be >= 0, got {epoch}")
    if decay_every < 1 or decay_factor <= 0 or base_lr <= 0:
        raise ValueError("lr_at_epoch: bad schedule parameters")
    return base_lr * decay_factor ** (-(epoch // decay_every))
