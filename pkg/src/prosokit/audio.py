"""Waveform container, WAV I/O, and level helpers shared across the pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

PIPELINE_SAMPLE_RATE = 16_000
INT16_SCALE = 32_767
PEAK_LIMIT = 0.99
_TINY = 1e-12


class SampleRateError(ValueError):
    """Audio entered the pipeline at a rate other than 16 kHz."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples in [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono audio, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"invalid sample rate {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def require_pipeline_rate(w: Waveform, where: str = "") -> None:
    if w.sample_rate_hz != PIPELINE_SAMPLE_RATE:
        raise SampleRateError(
            f"{where or 'pipeline'} requires {PIPELINE_SAMPLE_RATE} Hz audio, "
            f"got {w.sample_rate_hz} Hz"
        )


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))


def amp_to_db(a) -> np.ndarray | float:
    return 20.0 * np.log10(np.maximum(a, _TINY))


def db_to_amp(db) -> np.ndarray | float:
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 20.0)


def power_to_db(p) -> np.ndarray | float:
    return 10.0 * np.log10(np.maximum(p, _TINY))


def frame_rms(samples: np.ndarray, hop: int) -> np.ndarray:
    """RMS of consecutive non-overlapping hop-length frames.

    The final partial frame is averaged over its true sample count, so a
    short tail is not diluted by zero padding.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0)
    n_frames = int(np.ceil(x.size / hop))
    padded = np.zeros(n_frames * hop)
    padded[: x.size] = x
    counts = np.full(n_frames, hop, dtype=np.float64)
    tail = x.size - (n_frames - 1) * hop
    counts[-1] = tail
    frames = padded.reshape(n_frames, hop)
    return np.sqrt(np.sum(frames * frames, axis=1) / counts)


def active_frames(samples: np.ndarray, hop: int, floor_db: float) -> np.ndarray:
    """Boolean mask of frames whose RMS exceeds the energy floor."""
    return amp_to_db(frame_rms(samples, hop)) > floor_db


def intensity_contour(samples: np.ndarray, hop: int, window: int | None = None) -> np.ndarray:
    """Short-time RMS contour at the frame rate, from overlapping Hann-weighted
    windows (default window 4*hop, i.e. 40 ms at the 10 ms frame grid).

    Wider-than-a-frame windows average over pitch periods, which keeps the
    contour free of pulse-count beating at low F0.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0)
    if window is None:
        window = 4 * hop
    n_frames = int(np.ceil(x.size / hop))
    half = window // 2
    padded = np.pad(x * x, (half, half + window), mode="constant")
    w = np.hanning(window)
    w = w / np.sum(w)
    centers = np.arange(n_frames) * hop + half
    idx = centers[:, None] + np.arange(window)[None, :] - half
    return np.sqrt(np.maximum(np.sum(padded[idx] * w[None, :], axis=1), 0.0))


def peak_guard(samples: np.ndarray, limit: float = PEAK_LIMIT) -> np.ndarray:
    """Rescale to `limit` peak if |samples| exceeds 1.0; the gain is logged."""
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        gain = limit / peak
        log.info("peak %.4f exceeds full scale, rescaling by %.4f", peak, gain)
        return samples * gain
    return samples


def read_wav(path: str | Path) -> Waveform:
    """Read a 16-bit PCM mono WAV file."""
    sr, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono WAV, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / INT16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, sr)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write 16-bit PCM mono, clipping anything outside [-1, 1]."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    data = np.round(clipped * INT16_SCALE).astype(np.int16)
    wavfile.write(str(path), w.sample_rate_hz, data)
