"""Audio front end: resampling, log-spectrograms, energy-based VAD, file IO."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "SAMPLE_RATE",
    "SEGMENT_SECONDS",
    "SEGMENT_SAMPLES",
    "SPECTROGRAM_SHAPE",
    "AudioBuffer",
    "Spectrogram",
    "Affinity",
    "AffinitySegment",
    "resample",
    "log_spectrogram",
    "vad_affinity",
    "read_wav",
    "write_wav",
    "write_pgm",
]

SAMPLE_RATE = 24000
SEGMENT_SECONDS = 0.6
SEGMENT_SAMPLES = 14400  # 0.6 s at 24 kHz
SPECTROGRAM_SHAPE = (256, 256)

_WIN = 240   # 10 ms analysis window
_HOP = 120   # 5 ms hop
_NFFT = 512  # zero-padded transform length
_LOG_EPS = 1e-6


@dataclass
class AudioBuffer:
    """Mono audio: float32 samples plus a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioBuffer: samples must be 1-D, got {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"AudioBuffer: sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer: non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """256x256 log-magnitude spectrogram of a 0.6 s segment (rows = bins 0..255)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != SPECTROGRAM_SHAPE:
            raise ValueError(f"Spectrogram: expected {SPECTROGRAM_SHAPE}, got {self.values.shape}")


class Affinity(Enum):
    LOW = "low"
    HIGH = "high"


@dataclass
class AffinitySegment:
    """Per-clip VAD verdict: affinity level and the speech-active frame fraction."""

    clip_index: int
    level: Affinity
    speech_fraction: float


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Linear-interpolation resampling to ``target_rate``.

    Output length is ``round(n * target / source)``.  Same-rate input is
    returned sample-exact.
    """
    if target_rate <= 0:
        raise ValueError(f"resample: target_rate must be positive, got {target_rate}")
    if len(buf.samples) == 0:
        raise ValueError("resample: empty input")
    n_in = len(buf.samples)
    n_out = int(round(n_in * target_rate / buf.sample_rate))
    t_out = np.arange(n_out, dtype=np.float64) / target_rate
    t_in = np.arange(n_in, dtype=np.float64) / buf.sample_rate
    out = np.interp(t_out, t_in, buf.samples.astype(np.float64))
    return AudioBuffer(out.astype(np.float32), target_rate)


def log_spectrogram(buf: AudioBuffer) -> Spectrogram:
    """Log-magnitude spectrogram of exactly 0.6 s of 24 kHz audio.

    Hann window of 240 samples, hop 120, zero-padded 512-point transform,
    bins 0..255 kept, ``log(1e-6 + magnitude)``, then the 119 analysis
    columns are linearly interpolated along time to 256.
    """
    if buf.sample_rate != SAMPLE_RATE:
        raise ValueError(f"log_spectrogram: expected {SAMPLE_RATE} Hz, got {buf.sample_rate}")
    if len(buf.samples) != SEGMENT_SAMPLES:
        raise ValueError(
            f"log_spectrogram: expected {SEGMENT_SAMPLES} samples, got {len(buf.samples)}"
        )
    n_cols = (SEGMENT_SAMPLES - _WIN) // _HOP + 1  # 119
    window = np.hanning(_WIN).astype(np.float64)
    starts = np.arange(n_cols) * _HOP
    frames = buf.samples[starts[:, None] + np.arange(_WIN)] * window
    spec = np.fft.rfft(frames, n=_NFFT, axis=1)
    mag = np.abs(spec[:, : SPECTROGRAM_SHAPE[0]])  # (119, 256) time x bin
    logmag = np.log(_LOG_EPS + mag).T  # (256 bins, 119 cols)
    t_new = np.linspace(0.0, n_cols - 1, SPECTROGRAM_SHAPE[1])
    t_old = np.arange(n_cols, dtype=np.float64)
    out = np.empty(SPECTROGRAM_SHAPE, dtype=np.float32)
    for b in range(SPECTROGRAM_SHAPE[0]):
        out[b] = np.interp(t_new, t_old, logmag[b])
    return Spectrogram(out)


def vad_affinity(buf: AudioBuffer, clip_spans: list[tuple[int, int]]) -> list[AffinitySegment]:
    """Energy VAD over 10 ms frames, then a per-clip affinity verdict.

    The noise floor is the mean energy of the lowest decile of frames
    (floored at 1e-10); a frame is speech-active iff its energy exceeds
    three times the floor.  A clip is HIGH iff at least half of its frames
    are active.  ``clip_spans`` are (start, end) sample indices.
    """
    frame_len = int(round(0.01 * buf.sample_rate))
    n = len(buf.samples)
    if n < frame_len:
        raise ValueError("vad_affinity: audio shorter than one VAD frame")
    n_frames = n // frame_len
    x = buf.samples[: n_frames * frame_len].astype(np.float64).reshape(n_frames, frame_len)
    energies = (x * x).mean(axis=1)
    k = max(1, n_frames // 10)
    floor = max(float(np.sort(energies)[:k].mean()), 1e-10)
    active = energies > 3.0 * floor
    out = []
    for idx, (start, end) in enumerate(clip_spans):
        if start < 0 or end > n or end <= start:
            raise ValueError(f"vad_affinity: clip span ({start}, {end}) outside audio of {n}")
        f0 = start // frame_len
        f1 = max(f0 + 1, end // frame_len)
        f1 = min(f1, n_frames)
        frac = float(active[f0:f1].mean()) if f1 > f0 else 0.0
        level = Affinity.HIGH if frac >= 0.5 else Affinity.LOW
        out.append(AffinitySegment(idx, level, frac))
    return out


def read_wav(path) -> AudioBuffer:
    """Read a mono 16-bit PCM WAV file into [-1, 1] floats."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write 16-bit PCM; samples are clipped to [-1, 1] and rounded."""
    q = np.clip(np.round(buf.samples.astype(np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate)
        w.writeframes(q.astype("<i2").tobytes())


def write_pgm(path, values: np.ndarray) -> None:
    """Write a 2-D array as a binary 8-bit PGM, min-max scaled to 0..255."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"write_pgm: need a 2-D array, got {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo)
    img = np.round(scaled * 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
