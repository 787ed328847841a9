"""Dialog activity and turn-taking events from word timings.

Word timings come in as per-channel tokens (JSON lines or CTM); everything
downstream works on a 100 Hz two-channel voice-activity track: shift/hold
events at mutual-silence gaps, mid-turn sample points, and future-activity
label matrices at 20 Hz.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeds import derive_seed

VAD_RATE_HZ = 100
LABEL_RATE_HZ = 20
LABEL_HORIZON_S = 2.0

SHIFT = "shift"
HOLD = "hold"


class WordOverlapError(ValueError):
    """Two tokens on the same channel overlap in time."""


@dataclass(frozen=True)
class WordToken:
    text: str
    start_s: float
    end_s: float
    channel: int

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"word {self.text!r}: start {self.start_s} >= end {self.end_s}")
        if self.channel not in (0, 1):
            raise ValueError(f"word {self.text!r}: channel must be 0 or 1")


@dataclass
class VadTrack:
    """Per-frame activity booleans at 100 Hz, shape (2, n_frames)."""

    active: np.ndarray
    frame_rate_hz: float = VAD_RATE_HZ

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        if self.active.ndim != 2 or self.active.shape[0] != 2:
            raise ValueError(f"expected (2, n) activity array, got {self.active.shape}")

    @property
    def n_frames(self) -> int:
        return self.active.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate_hz


@dataclass(frozen=True)
class TurnEvent:
    kind: str  # shift | hold
    silence_start_s: float
    silence_end_s: float
    prev_speaker: int
    next_speaker: int

    def __post_init__(self):
        expected = SHIFT if self.prev_speaker != self.next_speaker else HOLD
        if self.kind != expected:
            raise ValueError(f"kind {self.kind} inconsistent with speakers")


@dataclass(frozen=True)
class MidTurnPoint:
    t_s: float
    speaker: int


@dataclass
class FutureActivityLabels:
    """20 Hz label frames: for each frame, a (2, 40) matrix of 50 ms future
    activity bins over a 2 s horizon, plus a validity flag (false when the
    horizon crosses the session end)."""

    bins: np.ndarray  # (n_frames, 2, 40) bool
    valid: np.ndarray  # (n_frames,) bool
    frame_rate_hz: float = LABEL_RATE_HZ

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.bins.ndim != 3 or self.bins.shape[1] != 2:
            raise ValueError(f"expected (n, 2, h) bins, got {self.bins.shape}")
        if self.valid.shape[0] != self.bins.shape[0]:
            raise ValueError("valid flags do not match label frames")


def merge_word_intervals(
    words: list[WordToken], channel: int, bridge_ms: float = 100.0
) -> list[tuple[float, float]]:
    """Merge one channel's word intervals, bridging gaps <= bridge_ms."""
    tokens = sorted((w for w in words if w.channel == channel), key=lambda w: w.start_s)
    for a, b in zip(tokens, tokens[1:]):
        if b.start_s < a.end_s - 1e-9:
            raise WordOverlapError(
                f"channel {channel}: {a.text!r} [{a.start_s:.3f},{a.end_s:.3f}] overlaps "
                f"{b.text!r} [{b.start_s:.3f},{b.end_s:.3f}]"
            )
    merged: list[tuple[float, float]] = []
    for w in tokens:
        if merged and w.start_s - merged[-1][1] <= bridge_ms / 1000.0 + 1e-9:
            merged[-1] = (merged[-1][0], max(merged[-1][1], w.end_s))
        else:
            merged.append((w.start_s, w.end_s))
    return merged


def ipu_segments(
    words: list[WordToken], channel: int, bridge_ms: float = 100.0
) -> list[tuple[float, float]]:
    """Inter-pausal units for one channel (alias of the merge rule)."""
    return merge_word_intervals(words, channel, bridge_ms)


def words_to_vad(
    words: list[WordToken],
    bridge_ms: float = 100.0,
    duration_s: float | None = None,
) -> VadTrack:
    """Discretize word timings to a 100 Hz two-channel activity track.

    A frame counts as active when word intervals cover at least half of it.
    """
    if duration_s is None:
        duration_s = max((w.end_s for w in words), default=0.0)
    n = int(np.ceil(duration_s * VAD_RATE_HZ - 1e-9))
    active = np.zeros((2, n), dtype=bool)
    frame = 1.0 / VAD_RATE_HZ
    for channel in (0, 1):
        overlap = np.zeros(n)
        for s, e in merge_word_intervals(words, channel, bridge_ms):
            i0 = max(0, int(np.floor(s * VAD_RATE_HZ)))
            i1 = min(n, int(np.ceil(e * VAD_RATE_HZ)))
            if i1 <= i0:
                continue
            idx = np.arange(i0, i1)
            lo = np.maximum(s, idx * frame)
            hi = np.minimum(e, (idx + 1) * frame)
            overlap[idx] += np.maximum(hi - lo, 0.0)
        active[channel] = overlap >= 0.5 * frame - 1e-9
    return VadTrack(active)


def extract_events(
    vad: VadTrack, min_silence_ms: float = 200.0, context_s: float = 1.0
) -> list[TurnEvent]:
    """Shift/hold events at mutual-silence gaps.

    A gap qualifies when it lasts strictly longer than `min_silence_ms` and
    exactly one speaker is continuously active for `context_s` immediately
    before it and one immediately after (any activity by the other channel
    in those windows, i.e. overlap, skips the gap). Shift vs hold follows
    whether the speakers differ.
    """
    a = vad.active
    n = vad.n_frames
    rate = vad.frame_rate_hz
    ctx = int(round(context_s * rate))
    both_silent = ~a[0] & ~a[1]

    events: list[TurnEvent] = []
    i = 0
    while i < n:
        if not both_silent[i]:
            i += 1
            continue
        j = i
        while j < n and both_silent[j]:
            j += 1
        gap_frames = j - i
        if gap_frames / rate > min_silence_ms / 1000.0 and i - ctx >= 0 and j + ctx <= n:
            prev = _sole_continuous_speaker(a[:, i - ctx : i])
            nxt = _sole_continuous_speaker(a[:, j : j + ctx])
            if prev is not None and nxt is not None:
                kind = SHIFT if prev != nxt else HOLD
                events.append(TurnEvent(kind, i / rate, j / rate, prev, nxt))
        i = j
    return events


def _sole_continuous_speaker(window: np.ndarray) -> int | None:
    """Channel index if exactly one channel is active on every frame of the
    window and the other on none; else None."""
    for c in (0, 1):
        if window[c].all() and not window[1 - c].any():
            return c
    return None


def sample_midturn(
    vad: VadTrack,
    events: list[TurnEvent],
    margin_s: float = 2.0,
    stride_s: float = 1.0,
    seed: int = 0,
) -> list[MidTurnPoint]:
    """Mid-turn sample points on a stride grid inside single-speaker
    stretches, at least `margin_s` away from the stretch edges and from any
    event silence; the count is capped at the shift count (seeded
    subsample) for class balance."""
    a = vad.active
    n = vad.n_frames
    rate = vad.frame_rate_hz
    solo = a[0] ^ a[1]
    silences = [(e.silence_start_s, e.silence_end_s) for e in events]

    points: list[MidTurnPoint] = []
    i = 0
    while i < n:
        if not solo[i]:
            i += 1
            continue
        speaker = 1 if a[1, i] else 0
        j = i
        while j < n and solo[j] and a[speaker, j]:
            j += 1
        t_lo, t_hi = i / rate + margin_s, j / rate - margin_s
        if t_hi >= t_lo - 1e-9:
            k0 = int(np.ceil(t_lo / stride_s - 1e-9))
            k1 = int(np.floor(t_hi / stride_s + 1e-9))
            for k in range(k0, k1 + 1):
                t = k * stride_s
                if all(t <= s - margin_s + 1e-9 or t >= e + margin_s - 1e-9
                       for s, e in silences):
                    points.append(MidTurnPoint(t, speaker))
        i = j

    n_shifts = sum(1 for e in events if e.kind == SHIFT)
    if len(points) > n_shifts:
        rng = np.random.default_rng(derive_seed(seed, "midturn"))
        keep = sorted(rng.choice(len(points), size=n_shifts, replace=False).tolist())
        points = [points[k] for k in keep]
    return points


def future_activity_labels(vad: VadTrack) -> FutureActivityLabels:
    """Downsample activity to 50 ms bins (>= 50% occupancy) and stack, for
    each 20 Hz frame, the next 2 s of bins per channel."""
    a = vad.active
    n = vad.n_frames
    per_bin = int(round(vad.frame_rate_hz / LABEL_RATE_HZ))
    n_bins = n // per_bin
    horizon = int(round(LABEL_HORIZON_S * LABEL_RATE_HZ))

    if n_bins == 0:
        return FutureActivityLabels(np.zeros((0, 2, horizon), dtype=bool),
                                    np.zeros(0, dtype=bool))
    trimmed = a[:, : n_bins * per_bin].reshape(2, n_bins, per_bin)
    binned = trimmed.sum(axis=2) * 2 >= per_bin  # >= 50% occupancy

    bins = np.zeros((n_bins, 2, horizon), dtype=bool)
    valid = np.zeros(n_bins, dtype=bool)
    for j in range(n_bins):
        end = j + horizon
        if end <= n_bins:
            bins[j] = binned[:, j:end]
            valid[j] = True
        else:
            avail = n_bins - j
            bins[j, :, :avail] = binned[:, j:]
    return FutureActivityLabels(bins, valid)


# ---------------------------------------------------------------------------
# I/O


def read_words_jsonl(path: str | Path) -> list[WordToken]:
    """JSON lines with keys text, start, end, channel."""
    words = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            words.append(WordToken(obj["text"], float(obj["start"]),
                                   float(obj["end"]), int(obj["channel"])))
    return words


def write_words_jsonl(path: str | Path, words: list[WordToken]) -> None:
    with open(path, "w") as fh:
        for w in words:
            fh.write(json.dumps({"text": w.text, "start": round(w.start_s, 6),
                                 "end": round(w.end_s, 6), "channel": w.channel}) + "\n")


def read_words_ctm(path: str | Path) -> list[WordToken]:
    """CTM rows: utterance channel start duration word."""
    words = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            _, chan, start, dur, text = parts[:5]
            chan_idx = {"A": 0, "B": 1, "0": 0, "1": 1}.get(chan)
            if chan_idx is None:
                raise ValueError(f"{path}: unknown CTM channel {chan!r}")
            words.append(WordToken(text, float(start), float(start) + float(dur), chan_idx))
    return words


def read_words(path: str | Path) -> list[WordToken]:
    path = Path(path)
    if path.suffix.lower() == ".ctm":
        return read_words_ctm(path)
    return read_words_jsonl(path)


def events_to_csv(path: str | Path, rows: list[tuple[str, TurnEvent]]) -> None:
    """Rows of (session_id, event)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "kind", "silence_start", "silence_end",
                         "prev_speaker", "next_speaker"])
        for sid, e in rows:
            writer.writerow([sid, e.kind, f"{e.silence_start_s:.3f}",
                             f"{e.silence_end_s:.3f}", e.prev_speaker, e.next_speaker])


def events_from_csv(path: str | Path) -> list[tuple[str, TurnEvent]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                (rec["session_id"],
                 TurnEvent(rec["kind"], float(rec["silence_start"]),
                           float(rec["silence_end"]), int(rec["prev_speaker"]),
                           int(rec["next_speaker"])))
            )
    return rows


def midturn_to_csv(path: str | Path, rows: list[tuple[str, MidTurnPoint]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "t", "speaker"])
        for sid, p in rows:
            writer.writerow([sid, f"{p.t_s:.3f}", p.speaker])


def midturn_from_csv(path: str | Path) -> list[tuple[str, MidTurnPoint]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["session_id"],
                         MidTurnPoint(float(rec["t"]), int(rec["speaker"]))))
    return rows
