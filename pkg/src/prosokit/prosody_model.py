"""Lightweight prosody-only shift/hold predictor.

Extracts pitch/intensity/timing features from a 2 s trailing window at an
event anchor and classifies shift vs hold with a from-scratch logistic
model. A seeded synthetic dyad corpus with planted pre-shift cues (final
pitch fall, intensity drop) verifies the whole path end to end.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, power_to_db
from .dialog import VadTrack, WordToken
from .seeds import derive_seed
from .vocoder import (
    AperiodicityFrames,
    F0Track,
    SpectralFrames,
    VocoderConfig,
    VocoderFrames,
    VOICED_AP_FLOOR,
    synthesize,
    twosided_mean,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "voiced_ratio",
    "f0_mean_st",
    "f0_slope_st_per_s",
    "f0_final_delta_st",
    "intensity_mean_db",
    "intensity_slope_db_per_s",
    "intensity_final_delta_db",
    "pause_fraction",
    "window_covered_s",
)

FINAL_WINDOW_S = 0.2


@dataclass(frozen=True)
class ProsodyFeatures:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite feature values")
        object.__setattr__(self, "values", v)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def _semitones(f0_hz: np.ndarray, reference_hz: float) -> np.ndarray:
    return 12.0 * np.log2(f0_hz / reference_hz)


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    if t.size < 2:
        return 0.0
    t0 = t - t.mean()
    denom = float(np.sum(t0 * t0))
    if denom == 0.0:
        return 0.0
    return float(np.sum(t0 * (y - y.mean())) / denom)


def extract_features(
    frames: VocoderFrames,
    vad: VadTrack,
    speaker: int,
    t_s: float,
    window_s: float = 2.0,
) -> ProsodyFeatures:
    """Features of the speaker's trailing `window_s` before `t_s`.

    Pitch statistics are in semitones relative to the speaker's session
    median F0; intensity comes from the envelope's per-frame power in dB.
    A fully unvoiced window zeroes the F0 fields and the voiced ratio.
    """
    cfg = frames.config
    rate = 1000.0 / cfg.frame_period_ms
    i1 = int(round(t_s * rate))
    if i1 <= 0 or i1 > frames.n_frames:
        raise ValueError(f"anchor {t_s:.3f}s outside the analyzed session")
    i0 = max(0, i1 - int(round(window_s * rate)))
    covered = (i1 - i0) / rate

    f0 = frames.f0.f0_hz[i0:i1]
    voiced = f0 > 0
    voiced_ratio = float(np.mean(voiced)) if f0.size else 0.0
    t_axis = np.arange(i0, i1) / rate
    n_final = int(round(FINAL_WINDOW_S * rate))

    session_voiced = frames.f0.f0_hz[frames.f0.f0_hz > 0]
    if np.any(voiced) and session_voiced.size:
        ref = float(np.median(session_voiced))
        st = _semitones(f0[voiced], ref)
        f0_mean = float(np.mean(st))
        f0_slope = _slope(t_axis[voiced], st)
        final_mask = voiced & (np.arange(f0.size) >= f0.size - n_final)
        if np.any(final_mask):
            f0_delta = float(np.mean(_semitones(f0[final_mask], ref))) - f0_mean
        else:
            f0_delta = 0.0
    else:
        f0_mean = f0_slope = f0_delta = 0.0

    power_db = np.asarray(power_to_db(frames.envelope.frame_power()[i0:i1]))
    active = vad.active[speaker, i0:i1] if vad.n_frames >= i1 else np.zeros(i1 - i0, bool)
    if np.any(active):
        int_mean = float(np.mean(power_db[active]))
        int_slope = _slope(t_axis[active], power_db[active])
        final_mask = active & (np.arange(power_db.size) >= power_db.size - n_final)
        if np.any(final_mask):
            int_delta = float(np.mean(power_db[final_mask])) - int_mean
        else:
            int_delta = 0.0
        pause_fraction = float(np.mean(~active))
    else:
        int_mean = int_slope = int_delta = 0.0
        pause_fraction = 1.0

    return ProsodyFeatures(np.array([
        voiced_ratio, f0_mean, f0_slope, f0_delta,
        int_mean, int_slope, int_delta, pause_fraction, covered,
    ]))


# ---------------------------------------------------------------------------
# logistic model


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    l2: float = 1e-4
    epochs: int = 800
    seed: int = 0


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    feature_names: tuple = FEATURE_NAMES

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("prosokit-logistic v1\n")
            fh.write("features: " + ",".join(self.feature_names) + "\n")
            fh.write("mean: " + ",".join(repr(float(v)) for v in self.feature_mean) + "\n")
            fh.write("std: " + ",".join(repr(float(v)) for v in self.feature_std) + "\n")
            fh.write("weights: " + ",".join(repr(float(v)) for v in self.weights) + "\n")
            fh.write(f"bias: {self.bias!r}\n")
            fh.write(f"learning_rate: {self.config.learning_rate!r}\n")
            fh.write(f"l2: {self.config.l2!r}\n")
            fh.write(f"epochs: {self.config.epochs}\n")
            fh.write(f"seed: {self.config.seed}\n")

    @classmethod
    def load(cls, path: str | Path) -> "LogisticModel":
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "prosokit-logistic v1":
                raise ValueError(f"unrecognized model file header {header!r}")
            fields = {}
            for line in fh:
                key, _, value = line.partition(":")
                fields[key.strip()] = value.strip()
        names = tuple(fields["features"].split(","))
        parse = lambda s: np.array([float(v) for v in s.split(",")])
        cfg = TrainConfig(float(fields["learning_rate"]), float(fields["l2"]),
                          int(fields["epochs"]), int(fields["seed"]))
        return cls(parse(fields["weights"]), float(fields["bias"]),
                   parse(fields["mean"]), parse(fields["std"]), cfg, names)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray,
             l2: float) -> float:
    """Mean binary cross-entropy plus the L2 penalty on the weights."""
    z = x @ weights + bias
    # log(1 + exp(-|z|)) form is stable for large |z|
    loss = np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * y)
    return float(loss + 0.5 * l2 * np.sum(weights * weights))


def log_loss_gradient(weights: np.ndarray, bias: float, x: np.ndarray,
                      y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    p = _sigmoid(x @ weights + bias)
    err = p - y
    grad_w = x.T @ err / x.shape[0] + l2 * weights
    grad_b = float(np.mean(err))
    return grad_w, grad_b


def train_logistic(features: np.ndarray, labels: np.ndarray,
                   config: TrainConfig | None = None) -> LogisticModel:
    """Full-batch gradient descent on L2-regularized log loss.

    Features are standardized with training statistics; weights start at
    zero, so the run is deterministic (the seed is recorded for provenance
    only).
    """
    config = config or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (n, d) with matching labels")
    classes = np.unique(y)
    if set(classes.tolist()) != {0.0, 1.0}:
        raise ValueError("training needs both classes (labels 0 and 1)")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    xs = (x - mean) / std

    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(config.epochs):
        grad_w, grad_b = log_loss_gradient(w, b, xs, y, config.l2)
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b
    return LogisticModel(w, b, mean, std, config)


def predict(model: LogisticModel, features: ProsodyFeatures | np.ndarray) -> float:
    """Shift probability for one feature vector (training standardization
    applied)."""
    v = features.values if isinstance(features, ProsodyFeatures) else np.asarray(features)
    if v.shape != model.weights.shape:
        raise ValueError(
            f"feature length {v.shape} does not match model {model.weights.shape}"
        )
    z = float((v - model.feature_mean) / model.feature_std @ model.weights + model.bias)
    return float(_sigmoid(np.array([z]))[0])


# ---------------------------------------------------------------------------
# synthetic planted-cue corpus


@dataclass
class CueSession:
    session_id: str
    channels: list[Waveform]
    words: list[WordToken]
    event_kinds: list[str]  # planted gap kinds in timeline order


@dataclass
class CueCorpusConfig:
    events_per_session: int = 8
    shift_fraction: float = 0.5
    turn_s: tuple[float, float] = (2.3, 3.4)
    gap_s: tuple[float, float] = (0.3, 0.55)
    f0_fall_st: float = 5.0
    intensity_drop_db: float = 7.0
    cue_s: float = 0.5
    base_level_db: float = -23.0
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)


def synth_cue_corpus(n_sessions: int, seed: int,
                     config: CueCorpusConfig | None = None) -> list[CueSession]:
    """Vocoder-synthesized dyads with planted turn-taking cues.

    Pre-shift turn endings fall by `f0_fall_st` semitones and drop by
    `intensity_drop_db`; pre-hold endings stay flat. The requested
    shift:hold ratio is honored exactly per session. Deterministic per seed.
    """
    if n_sessions < 1:
        raise ValueError("need at least one session")
    config = config or CueCorpusConfig()
    return [
        _synth_session(f"cue{index:03d}", derive_seed(seed, "session", index), config)
        for index in range(n_sessions)
    ]


def _synth_session(session_id: str, seed: int, cc: CueCorpusConfig) -> CueSession:
    rng = np.random.default_rng(seed)
    cfg = cc.vocoder
    rate = 1000.0 / cfg.frame_period_ms

    n_events = cc.events_per_session
    n_shift = int(round(cc.shift_fraction * n_events))
    kinds = ["shift"] * n_shift + ["hold"] * (n_events - n_shift)
    kinds = [kinds[i] for i in rng.permutation(n_events)]

    f0_base = {0: rng.uniform(100, 130), 1: rng.uniform(180, 230)}
    turns: list[tuple[int, float, float, str]] = []  # speaker, start, end, end_kind
    t = 1.0
    speaker = int(rng.integers(0, 2))
    for kind in kinds:
        dur = rng.uniform(*cc.turn_s)
        turns.append((speaker, t, t + dur, kind))
        t = t + dur + rng.uniform(*cc.gap_s)
        if kind == "shift":
            speaker = 1 - speaker
    dur = rng.uniform(*cc.turn_s)
    turns.append((speaker, t, t + dur, "final"))
    total_s = t + dur + 1.0

    n_frames = int(math.ceil(total_s * rate))
    times = np.arange(n_frames) / rate
    channel_frames = []
    words: list[WordToken] = []
    for ch in (0, 1):
        f0 = np.zeros(n_frames)
        power = np.full(n_frames, cfg.floor_power)
        for (spk, start, end, kind) in turns:
            if spk != ch:
                continue
            mask = (times >= start) & (times < end)
            tt = times[mask]
            wiggle = 0.8 * np.sin(2 * np.pi * rng.uniform(0.7, 1.3) * (tt - start))
            st = wiggle
            level_db = cc.base_level_db + rng.uniform(-1.5, 1.5) + 0.5 * np.sin(
                2 * np.pi * rng.uniform(0.5, 1.0) * (tt - start)
            )
            if kind == "shift":
                ramp = np.clip((tt - (end - cc.cue_s)) / cc.cue_s, 0.0, 1.0)
                st = st - cc.f0_fall_st * ramp
                level_db = level_db - cc.intensity_drop_db * ramp
            f0[mask] = f0_base[ch] * 2.0 ** (st / 12.0)
            power[mask] = 10.0 ** (level_db / 10.0)
            words.extend(_turn_words(rng, ch, start, end))
        envelope = _voice_envelope(rng, cfg)[None, :] * power[:, None]
        ap = np.where(f0 > 0, VOICED_AP_FLOOR, 1.0)
        voiced_f0 = np.where(
            f0 > 0, np.clip(f0, cfg.f0_floor_hz, cfg.f0_ceil_hz), 0.0
        )
        channel_frames.append(VocoderFrames(
            F0Track(voiced_f0, cfg.frame_period_ms),
            SpectralFrames(envelope), AperiodicityFrames(ap), cfg,
        ))

    channels = [
        synthesize(channel_frames[ch], seed=derive_seed(seed, "synth", ch))
        for ch in (0, 1)
    ]
    kinds_in_order = [kind for (_, _, _, kind) in turns if kind != "final"]
    return CueSession(session_id, channels, sorted(words, key=lambda w: w.start_s),
                      kinds_in_order)


def _turn_words(rng: np.random.Generator, channel: int, start: float,
                end: float) -> list[WordToken]:
    """Fake word tokens tiling a turn, with sub-bridge intra-turn gaps."""
    words = []
    t = start
    i = 0
    while t < end - 0.12:
        dur = min(float(rng.uniform(0.2, 0.45)), end - t)
        words.append(WordToken(f"w{i}", round(t, 4), round(t + dur, 4), channel))
        t = t + dur + float(rng.uniform(0.02, 0.08))
        i += 1
    if not words:
        words.append(WordToken("w0", round(start, 4), round(end, 4), channel))
    return words


def _voice_envelope(rng: np.random.Generator, cfg: VocoderConfig) -> np.ndarray:
    """Unit-power vowel-like spectral shape with randomized formants."""
    f = np.fft.rfftfreq(cfg.fft_size, 1.0 / 16000)
    shape = np.full(f.size, 0.05)
    for lo, hi, bw in ((350, 900, 130), (1000, 2200, 200), (2300, 3400, 300)):
        fc = rng.uniform(lo, hi)
        shape = shape + np.exp(-0.5 * ((f - fc) / bw) ** 2)
    return shape / twosided_mean(shape[None, :])[0]
