"""Binary sidecar files for pipeline caching.

Three record types share the same framing: a 4-byte magic, a u32 version,
a length-prefixed JSON config block, then little-endian float64/uint8
arrays. Written and read with plain struct/numpy, byte-stable for a given
payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dialog import FutureActivityLabels
from .evaluate import ProbabilityStream
from .vocoder import (
    AperiodicityFrames,
    F0Track,
    SpectralFrames,
    VocoderConfig,
    VocoderFrames,
)

MAGIC_FRAMES = b"PKVF"
MAGIC_LABELS = b"PKLB"
MAGIC_STREAM = b"PKPS"
VERSION = 1


class SidecarFormatError(ValueError):
    """File is not a recognizable sidecar of the expected type."""


def _write_header(fh, magic: bytes, config: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<I", VERSION))
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_header(fh, magic: bytes, path) -> dict:
    got = fh.read(4)
    if got != magic:
        raise SidecarFormatError(f"{path}: expected magic {magic!r}, found {got!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != VERSION:
        raise SidecarFormatError(f"{path}: unsupported version {version}")
    (blob_len,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(blob_len).decode("utf-8"))


def save_frames(path: str | Path, frames: VocoderFrames) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_FRAMES, asdict(frames.config))
        n = frames.n_frames
        n_bins = frames.envelope.power.shape[1] if n else frames.config.n_bins
        fh.write(struct.pack("<QI", n, n_bins))
        fh.write(frames.f0.f0_hz.astype("<f8").tobytes())
        fh.write(frames.envelope.power.astype("<f8").tobytes())
        fh.write(frames.aperiodicity.ratio.astype("<f8").tobytes())


def load_frames(path: str | Path) -> VocoderFrames:
    with open(path, "rb") as fh:
        config = VocoderConfig(**_read_header(fh, MAGIC_FRAMES, path))
        n, n_bins = struct.unpack("<QI", fh.read(12))
        f0 = np.frombuffer(fh.read(8 * n), dtype="<f8")
        power = np.frombuffer(fh.read(8 * n * n_bins), dtype="<f8").reshape(n, n_bins)
        ratio = np.frombuffer(fh.read(8 * n), dtype="<f8")
    return VocoderFrames(
        F0Track(f0.copy(), config.frame_period_ms),
        SpectralFrames(power.copy() if n else np.zeros((0, n_bins))),
        AperiodicityFrames(ratio.copy()),
        config,
    )


def save_labels(path: str | Path, labels: FutureActivityLabels) -> None:
    n, channels, horizon = labels.bins.shape
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_LABELS, {"frame_rate_hz": labels.frame_rate_hz})
        fh.write(struct.pack("<QII", n, channels, horizon))
        fh.write(labels.bins.astype(np.uint8).tobytes())
        fh.write(labels.valid.astype(np.uint8).tobytes())


def load_labels(path: str | Path) -> FutureActivityLabels:
    with open(path, "rb") as fh:
        config = _read_header(fh, MAGIC_LABELS, path)
        n, channels, horizon = struct.unpack("<QII", fh.read(16))
        bins = np.frombuffer(fh.read(n * channels * horizon), dtype=np.uint8)
        valid = np.frombuffer(fh.read(n), dtype=np.uint8)
    return FutureActivityLabels(
        bins.reshape(n, channels, horizon).astype(bool),
        valid.astype(bool),
        config["frame_rate_hz"],
    )


def save_stream(path: str | Path, stream: ProbabilityStream) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_STREAM, {"frame_rate_hz": stream.frame_rate_hz})
        fh.write(struct.pack("<Q", stream.p_shift.size))
        fh.write(stream.p_shift.astype("<f8").tobytes())


def load_stream(path: str | Path) -> ProbabilityStream:
    with open(path, "rb") as fh:
        config = _read_header(fh, MAGIC_STREAM, path)
        (n,) = struct.unpack("<Q", fh.read(8))
        p = np.frombuffer(fh.read(8 * n), dtype="<f8")
    return ProbabilityStream(p.copy(), config["frame_rate_hz"])
