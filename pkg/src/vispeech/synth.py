"""Synthetic correlated video/audio scan generator and corpus management.

Each scan is a contiguous tiling of fixed-length clips.  A clip shows a
class-specific moving pattern (blob group plus an oriented texture
grating, drifting smoothly out of the central region) and carries either
a class-indexed tone chord (speech-like, ground-truth HIGH affinity) or
low-amplitude broadband noise (ground-truth LOW).  With probability
``rho`` the tone matches the video class, otherwise a uniformly random
other class is played: the knob that controls how much cross-modal
correlation there is to learn.

Fixations sit at the pattern centroid with 2 px Gaussian jitter, which
gives the gaze-saliency transfer task a learnable target.

Generation is driven by a single numpy Generator, so a seed pins every
byte of the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Affinity, AudioBuffer, read_wav, write_wav
from .records import read_tensor_records, write_tensor_records

__all__ = [
    "FPS",
    "CLIP_LEN",
    "ClipInterval",
    "ScanSequence",
    "DatasetManifest",
    "generate_synthetic_scan",
    "generate_corpus",
    "save_scan",
    "load_scan",
    "save_manifest",
    "load_manifest",
    "tone_fundamental",
]

FPS = 30
CLIP_LEN = 60  # frames per clip: 2 s of video, 2 s of audio

_TONE_AMP = 0.5
_NOISE_AMP = 0.02


@dataclass
class ClipInterval:
    """A clip's frame interval inside one scan."""

    scan_id: int
    start: int
    length: int

    def audio_span(self, fps: int = FPS, rate: int = SAMPLE_RATE) -> tuple[int, int]:
        s0 = self.start * rate // fps
        s1 = (self.start + self.length) * rate // fps
        return s0, s1


@dataclass
class ScanSequence:
    """Frames plus synchronized audio, with optional ground-truth sidecar data."""

    frames: np.ndarray  # (T, H, W) float32 in [0, 1]
    audio: AudioBuffer
    clip_len: int = CLIP_LEN
    fps: int = FPS
    labels: np.ndarray | None = None       # (T,) per-frame class ids
    fixations: np.ndarray | None = None    # (T, 2) row, col
    clip_affinity: list[Affinity] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"ScanSequence: frames must be (T,H,W), got {self.frames.shape}")
        if len(self.frames) % self.clip_len:
            raise ValueError(
                f"ScanSequence: {len(self.frames)} frames not a multiple of clip_len {self.clip_len}"
            )

    @property
    def num_clips(self) -> int:
        return len(self.frames) // self.clip_len

    def clips(self, scan_id: int = 0) -> list[ClipInterval]:
        return [
            ClipInterval(scan_id, i * self.clip_len, self.clip_len)
            for i in range(self.num_clips)
        ]


def tone_fundamental(class_id: int) -> float:
    """Fundamental frequency of a class tone chord, in Hz."""
    return 400.0 + 200.0 * class_id


def _render_clip_video(rng, class_id, num_frames, hw):
    H, W = hw
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float32)
    # Class look: blob count, grating frequency/orientation, and two
    # channels a pooled representation can read directly, blob brightness
    # and grating contrast.  Orientation alone averages out under global
    # pooling, so without these the encoder would see 3 classes, not 12.
    freq = 1.5 + 0.5 * (class_id // 4)
    theta = (class_id % 4) * (np.pi / 4)
    n_blobs = 1 + class_id % 3
    blob_amp = 0.36 + 0.10 * (class_id // 4)
    tex_amp = 0.05 + 0.03 * (class_id % 4)
    ct, st = np.cos(theta), np.sin(theta)

    # Background kept faint: a strong per-clip gradient is a clip
    # fingerprint the pair tasks would happily memorize.
    plane_t = rng.uniform(0, 2 * np.pi)
    plane = (xx * np.cos(plane_t) + yy * np.sin(plane_t)) / max(H, W)
    bg = 0.28 + 0.04 * plane

    # drift: start near the centre, travel out past the central-crop edge
    angle = rng.uniform(0, 2 * np.pi)
    start = np.array([H / 2, W / 2]) + rng.uniform(-4, 4, size=2)
    travel = rng.uniform(19.0, 25.0)
    delta = np.array([np.sin(angle), np.cos(angle)]) * travel
    curve = rng.uniform(-3.0, 3.0, size=2)
    offsets = rng.uniform(-7.0, 7.0, size=(n_blobs, 2))
    offsets[0] = 0.0
    sigma = 4.5
    phase0 = rng.uniform(0, 2 * np.pi)

    frames = np.empty((num_frames, H, W), dtype=np.float32)
    centroids = np.empty((num_frames, 2), dtype=np.float32)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    for t in range(num_frames):
        u = t / max(1, num_frames - 1)
        center = start + delta * u + curve * np.sin(np.pi * u)
        phase = phase0 + 2.0 * np.pi * freq * (center[1] * ct + center[0] * st) / W
        tex = tex_amp * np.sin(2 * np.pi * freq * (xx * ct + yy * st) / W + phase)
        img = bg + tex
        blob_centers = center[None, :] + offsets
        for by, bx in blob_centers:
            # Lighting falls off toward the frame edges, so a blob's
            # pooled mass tracks how far it has drifted from the centre;
            # frame order stays decodable after spatial averaging.
            r2 = ((by - cy) ** 2 + (bx - cx) ** 2) / (W / 2.0) ** 2
            fade = 1.0 - 0.4 * min(1.0, r2)
            d2 = (yy - by) ** 2 + (xx - bx) ** 2
            img = img + blob_amp * fade * np.exp(-d2 / (2 * sigma * sigma))
        frames[t] = np.clip(img, 0.0, 1.0)
        centroids[t] = blob_centers.mean(axis=0)
    return frames, centroids


def _render_clip_audio(rng, class_id, n_samples, rate):
    # Chord shape doubles as a class code that survives feature pooling:
    # harmonic count and rolloff vary with the class, so the overall
    # spectral texture identifies it even when absolute line positions
    # wash out.  The fundamental stays dominant for DFT decoding.
    t = np.arange(n_samples, dtype=np.float64) / rate
    f0 = tone_fundamental(class_id)
    n_harm = 2 + class_id % 3
    rolloff = 0.35 + 0.15 * (class_id // 4)
    chord = np.zeros_like(t)
    for k in range(1, n_harm + 1):
        phase = rng.uniform(0, 2 * np.pi)
        chord += rolloff ** (k - 1) * np.sin(2 * np.pi * k * f0 * t + phase)
    chord /= np.abs(chord).max()
    return (_TONE_AMP * chord).astype(np.float32)


def generate_synthetic_scan(
    seed,
    num_clips: int,
    rho: float,
    noise_fraction: float,
    num_classes: int = 12,
    frame_hw: tuple[int, int] = (64, 64),
    clip_len: int = CLIP_LEN,
    fps: int = FPS,
    sample_rate: int = SAMPLE_RATE,
) -> ScanSequence:
    """Generate one scan; identical arguments give bit-identical output."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0,1], got {rho}")
    if not 0.0 <= noise_fraction <= 1.0:
        raise ValueError(f"noise_fraction must be in [0,1], got {noise_fraction}")
    if num_clips < 1 or num_classes < 2:
        raise ValueError("need num_clips >= 1 and num_classes >= 2")
    rng = np.random.default_rng(seed)
    H, W = frame_hw
    T = num_clips * clip_len
    samples_per_clip = clip_len * sample_rate // fps

    frames = np.empty((T, H, W), dtype=np.float32)
    labels = np.empty(T, dtype=np.int64)
    fixations = np.empty((T, 2), dtype=np.int64)
    audio = np.empty(num_clips * samples_per_clip, dtype=np.float32)
    affinity: list[Affinity] = []

    for ci in range(num_clips):
        cls = int(rng.integers(num_classes))
        fsl = slice(ci * clip_len, (ci + 1) * clip_len)
        vid, centroids = _render_clip_video(rng, cls, clip_len, frame_hw)
        frames[fsl] = vid
        labels[fsl] = cls
        jitter = rng.normal(0.0, 2.0, size=(clip_len, 2))
        fix = np.rint(centroids + jitter).astype(np.int64)
        fix[:, 0] = np.clip(fix[:, 0], 0, H - 1)
        fix[:, 1] = np.clip(fix[:, 1], 0, W - 1)
        fixations[fsl] = fix

        asl = slice(ci * samples_per_clip, (ci + 1) * samples_per_clip)
        if rng.uniform() < noise_fraction:
            audio[asl] = rng.uniform(-_NOISE_AMP, _NOISE_AMP, samples_per_clip).astype(np.float32)
            affinity.append(Affinity.LOW)
        else:
            if rng.uniform() < rho:
                tone_cls = cls
            else:
                others = [c for c in range(num_classes) if c != cls]
                tone_cls = int(others[rng.integers(len(others))])
            audio[asl] = _render_clip_audio(rng, tone_cls, samples_per_clip, sample_rate)
            affinity.append(Affinity.HIGH)

    params = {
        "seed": _seed_repr(seed),
        "num_clips": num_clips,
        "rho": rho,
        "noise_fraction": noise_fraction,
        "num_classes": num_classes,
        "frame_hw": list(frame_hw),
    }
    return ScanSequence(
        frames=frames,
        audio=AudioBuffer(audio, sample_rate),
        clip_len=clip_len,
        fps=fps,
        labels=labels,
        fixations=fixations,
        clip_affinity=affinity,
        params=params,
    )


def _seed_repr(seed):
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return str(seed)


# ---------------------------------------------------------------------------
# bundle IO: <prefix>.frames / <prefix>.wav / <prefix>.json


def save_scan(scan: ScanSequence, prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_tensor_records(prefix.with_suffix(".frames"), {"frames": scan.frames})
    write_wav(prefix.with_suffix(".wav"), scan.audio)
    sidecar = {
        "version": 1,
        "clip_len": scan.clip_len,
        "fps": scan.fps,
        "labels": None if scan.labels is None else [int(v) for v in scan.labels],
        "fixations": None if scan.fixations is None else [[int(a), int(b)] for a, b in scan.fixations],
        "clip_affinity": None
        if scan.clip_affinity is None
        else [a.value for a in scan.clip_affinity],
        "generator": scan.params,
    }
    prefix.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_scan(prefix) -> ScanSequence:
    """Load a bundle; a missing sidecar leaves annotations absent."""
    prefix = Path(prefix)
    frames_path = prefix.with_suffix(".frames")
    wav_path = prefix.with_suffix(".wav")
    if not frames_path.exists():
        raise FileNotFoundError(f"missing frames file: {frames_path}")
    if not wav_path.exists():
        raise FileNotFoundError(f"missing audio file: {wav_path}")
    recs = read_tensor_records(frames_path)
    if "frames" not in recs:
        raise ValueError(f"{frames_path}: no 'frames' record")
    audio = read_wav(wav_path)
    side_path = prefix.with_suffix(".json")
    labels = fixations = affinity = None
    clip_len, fps, params = CLIP_LEN, FPS, {}
    if side_path.exists():
        side = json.loads(side_path.read_text())
        clip_len = int(side.get("clip_len", CLIP_LEN))
        fps = int(side.get("fps", FPS))
        if side.get("labels") is not None:
            labels = np.asarray(side["labels"], dtype=np.int64)
        if side.get("fixations") is not None:
            fixations = np.asarray(side["fixations"], dtype=np.int64)
        if side.get("clip_affinity") is not None:
            affinity = [Affinity(v) for v in side["clip_affinity"]]
        params = side.get("generator", {})
    return ScanSequence(
        frames=recs["frames"],
        audio=audio,
        clip_len=clip_len,
        fps=fps,
        labels=labels,
        fixations=fixations,
        clip_affinity=affinity,
        params=params,
    )


# ---------------------------------------------------------------------------
# corpus manifest


@dataclass
class DatasetManifest:
    """A corpus: scan bundle prefixes plus disjoint split assignments."""

    root: Path
    scans: list[str]
    splits: dict[str, list[int]]
    params: dict = field(default_factory=dict)

    SPLITS = ("pretrain", "finetune_train", "finetune_test")

    def __post_init__(self):
        self.root = Path(self.root)
        seen: set[int] = set()
        for name in self.splits:
            if name not in self.SPLITS:
                raise ValueError(f"unknown split name: {name}")
            for idx in self.splits[name]:
                if not 0 <= idx < len(self.scans):
                    raise ValueError(f"split index {idx} out of range")
                if idx in seen:
                    raise ValueError(f"scan {idx} assigned to two splits")
                seen.add(idx)

    def scan_prefixes(self, split: str) -> list[Path]:
        return [self.root / self.scans[i] for i in self.splits.get(split, [])]

    def load_split(self, split: str) -> list[ScanSequence]:
        return [load_scan(p) for p in self.scan_prefixes(split)]


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    doc = {
        "version": 1,
        "scans": manifest.scans,
        "splits": manifest.splits,
        "params": manifest.params,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("version") != 1:
        raise ValueError(f"{path}: unsupported manifest version {doc.get('version')}")
    man = DatasetManifest(
        root=path.parent,
        scans=list(doc["scans"]),
        splits={k: list(v) for k, v in doc["splits"].items()},
        params=doc.get("params", {}),
    )
    for prefix in (path.parent / s for s in man.scans):
        if not prefix.with_suffix(".frames").exists():
            raise FileNotFoundError(f"manifest references missing scan: {prefix}")
    return man


def generate_corpus(
    out_dir,
    num_scans: int,
    clips_per_scan: int,
    rho: float,
    noise_fraction: float,
    num_classes: int = 12,
    seed: int = 0,
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> DatasetManifest:
    """Generate scan bundles plus a manifest under ``out_dir``.

    Scans are split, in order, into pretrain / finetune-train /
    finetune-test partitions following ``split_fractions``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if num_scans < 3 and any(f > 0 for f in split_fractions[1:]):
        raise ValueError("need at least 3 scans for a three-way split")
    names = []
    for i in range(num_scans):
        scan = generate_synthetic_scan(
            np.random.SeedSequence(entropy=(int(seed), i)),
            num_clips=clips_per_scan,
            rho=rho,
            noise_fraction=noise_fraction,
            num_classes=num_classes,
        )
        name = f"scan{i:03d}"
        save_scan(scan, out_dir / name)
        names.append(name)
    n_pre = max(1, int(round(split_fractions[0] * num_scans)))
    n_ft = max(1, int(round(split_fractions[1] * num_scans)))
    n_pre = min(n_pre, num_scans - 2)
    idx = list(range(num_scans))
    splits = {
        "pretrain": idx[:n_pre],
        "finetune_train": idx[n_pre : n_pre + n_ft],
        "finetune_test": idx[n_pre + n_ft :],
    }
    man = DatasetManifest(
        root=out_dir,
        scans=names,
        splits=splits,
        params={
            "seed": int(seed),
            "num_scans": num_scans,
            "clips_per_scan": clips_per_scan,
            "rho": rho,
            "noise_fraction": noise_fraction,
            "num_classes": num_classes,
        },
    )
    save_manifest(man, out_dir / "manifest.json")
    return man
