"""Hard pair sampling and the frame-order pretext task.

Positive pairs couple a video frame of a clip with a 0.6 s speech segment
drawn from inside the same clip; hard negatives keep the frame but take
the speech from a clip ``delta`` clips away (``delta`` uniform in
``[1, shift_range]``, forward if that clip exists, else backward).

The order task draws four distinct frames from a clip, centre-crops them
to half size, and asks for the shuffle permutation up to time reversal:
24 permutations of four frames collapse into 12 equivalence classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .audio import SAMPLE_RATE, SEGMENT_SAMPLES, Spectrogram, log_spectrogram, AudioBuffer
from .synth import ClipInterval, ScanSequence

__all__ = [
    "SamplerConfig",
    "TrainingPair",
    "OrderSample",
    "PERM_CLASSES",
    "canonical_perm_class",
    "sample_hard_pairs",
    "sample_order_clip",
    "center_crop",
]

_MIN_CLIP_FRAMES_FOR_SPEECH = 18  # 0.6 s at 30 fps


def _build_perm_classes():
    reps = sorted({min(p, tuple(reversed(p))) for p in permutations(range(4))})
    return tuple(reps)


PERM_CLASSES = _build_perm_classes()
_CLASS_OF = {p: i for i, rep in enumerate(PERM_CLASSES) for p in (rep, tuple(reversed(rep)))}


def canonical_perm_class(perm) -> int:
    """Class id of a 4-permutation, identifying ``p`` with ``reversed(p)``."""
    p = tuple(int(v) for v in perm)
    if sorted(p) != [0, 1, 2, 3]:
        raise ValueError(f"not a permutation of (0,1,2,3): {perm}")
    return _CLASS_OF[p]


@dataclass
class SamplerConfig:
    groups: int = 2       # positive/negative pairs per clip
    shift_range: int = 5  # max negative offset, in clips

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.shift_range < 1:
            raise ValueError(f"shift_range must be >= 1, got {self.shift_range}")


@dataclass
class TrainingPair:
    frame: np.ndarray          # (H, W) float32
    spectrogram: Spectrogram
    label: int                 # 1 correlated, 0 uncorrelated
    group: int                 # 1..groups
    frame_index: int           # absolute frame index in the scan
    speech_start: int          # absolute sample index of the 0.6 s segment


@dataclass
class OrderSample:
    frames: np.ndarray         # (4, H/2, W/2) centre crops, shuffled order
    perm_class: int
    frame_indices: np.ndarray  # absolute indices, in presented order


def center_crop(frame: np.ndarray) -> np.ndarray:
    """Central 50% crop of a (H, W) frame."""
    H, W = frame.shape
    return frame[H // 4 : H // 4 + H // 2, W // 4 : W // 4 + W // 2]


def _clip_audio_span(scan: ScanSequence, clip: ClipInterval):
    rate = scan.audio.sample_rate
    s0 = clip.start * rate // scan.fps
    s1 = (clip.start + clip.length) * rate // scan.fps
    return s0, s1


def _segment(scan: ScanSequence, start: int) -> Spectrogram:
    seg = scan.audio.samples[start : start + SEGMENT_SAMPLES]
    return log_spectrogram(AudioBuffer(seg, scan.audio.sample_rate))


def sample_hard_pairs(
    scan: ScanSequence,
    clip: ClipInterval,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> list[TrainingPair]:
    """Sample ``groups`` positive and ``groups`` hard negative pairs.

    Returns positives first, then negatives, so labels read
    ``(1,)*groups + (0,)*groups``.  The negative of group ``k`` reuses the
    positive's video frame and swaps in speech from the shifted clip.
    """
    if scan.audio.sample_rate != SAMPLE_RATE:
        raise ValueError(f"sample_hard_pairs: audio must be {SAMPLE_RATE} Hz")
    if clip.length < _MIN_CLIP_FRAMES_FOR_SPEECH:
        raise ValueError(
            f"clip too short for a {SEGMENT_SAMPLES}-sample speech segment: {clip.length} frames"
        )
    total = len(scan.frames)
    delta = int(rng.integers(1, cfg.shift_range + 1))
    fwd = clip.start + delta * clip.length
    bwd = clip.start - delta * clip.length
    if fwd + clip.length <= total:
        shifted = ClipInterval(clip.scan_id, fwd, clip.length)
    elif bwd >= 0:
        shifted = ClipInterval(clip.scan_id, bwd, clip.length)
    else:
        raise ValueError(
            f"no clip at offset +/-{delta} of clip@{clip.start} fits a scan of {total} frames"
        )

    own0, own1 = _clip_audio_span(scan, clip)
    sh0, sh1 = _clip_audio_span(scan, shifted)
    pos_hi = own1 - SEGMENT_SAMPLES
    neg_hi = sh1 - SEGMENT_SAMPLES

    positives, negatives = [], []
    for k in range(1, cfg.groups + 1):
        fidx = clip.start + int(rng.integers(clip.length))
        frame = scan.frames[fidx]
        pos_start = int(rng.integers(own0, pos_hi + 1))
        neg_start = int(rng.integers(sh0, neg_hi + 1))
        positives.append(
            TrainingPair(frame, _segment(scan, pos_start), 1, k, fidx, pos_start)
        )
        negatives.append(
            TrainingPair(frame, _segment(scan, neg_start), 0, k, fidx, neg_start)
        )
    return positives + negatives


def sample_order_clip(
    scan: ScanSequence,
    clip: ClipInterval,
    rng: np.random.Generator,
) -> OrderSample:
    """Four distinct frames, centre-cropped and shuffled; target is the
    permutation class of the shuffle (reversal-invariant)."""
    if clip.length < 4:
        raise ValueError(f"clip too short for order sampling: {clip.length} frames")
    picks = np.sort(rng.choice(clip.length, size=4, replace=False)) + clip.start
    perm = rng.permutation(4)
    shuffled = picks[perm]
    crops = np.stack([center_crop(scan.frames[i]) for i in shuffled])
    return OrderSample(crops, canonical_perm_class(tuple(perm)), shuffled)
