"""Speech manipulation conditions.

Builds every cell of the condition matrix: prosody-matched noise (the
spectral envelope replaced by a pink shape while pitch and per-frame level
follow the source), pitch/intensity flattening, background-noise
construction, and SNR-calibrated mixing.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import (
    PIPELINE_SAMPLE_RATE,
    Waveform,
    amp_to_db,
    db_to_amp,
    frame_rms,
    intensity_contour,
    peak_guard,
    require_pipeline_rate,
    rms,
)
from .seeds import derive_seed
from .vocoder import (
    DEFAULT_CONFIG,
    FrameMismatchError,
    F0Track,
    SpectralFrames,
    AperiodicityFrames,
    VocoderConfig,
    VocoderFrames,
    analyze,
    flatten_f0_values,
    frame_count,
    synthesize,
    twosided_mean,
)

log = logging.getLogger(__name__)

GAIN_SMOOTH_MS = 50.0
PINK_CORNER_HZ = 20.0

PRESERVED = "preserved"
FLATTENED = "flattened"
REMOVED = "removed"

NOISE_KINDS = ("none", "prosody_matched", "babble", "speech", "music_file")
ADDITIVE_NOISE_KINDS = ("babble", "speech", "music_file")

_TINY = 1e-30


class ConditionError(ValueError):
    """Inconsistent condition specification."""


@dataclass(frozen=True)
class ConditionSpec:
    """One cell of the manipulation matrix.

    `lexical` is removed exactly when the envelope is replaced by the pink
    shape (prosody-matched noise). For additive noise kinds an SNR is
    mandatory; for prosody-matched noise it is optional (pure vocoded noise
    when absent, noise mixed with the original at `snr_db` when present).
    """

    lexical: str = PRESERVED
    pitch: str = PRESERVED
    intensity: str = PRESERVED
    noise_kind: str = "none"
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lexical not in (PRESERVED, REMOVED):
            raise ConditionError(f"bad lexical flag {self.lexical!r}")
        if self.pitch not in (PRESERVED, FLATTENED):
            raise ConditionError(f"bad pitch flag {self.pitch!r}")
        if self.intensity not in (PRESERVED, FLATTENED):
            raise ConditionError(f"bad intensity flag {self.intensity!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ConditionError(f"unknown noise kind {self.noise_kind!r}")
        if (self.lexical == REMOVED) != (self.noise_kind == "prosody_matched"):
            raise ConditionError(
                "lexical content is removed exactly by prosody-matched noise"
            )
        if self.noise_kind in ADDITIVE_NOISE_KINDS and self.snr_db is None:
            raise ConditionError(f"{self.noise_kind} noise requires snr_db")
        if self.noise_kind == "none" and self.snr_db is not None:
            raise ConditionError("snr_db given but no noise requested")

    @property
    def is_clean(self) -> bool:
        return (
            self.lexical == PRESERVED
            and self.pitch == PRESERVED
            and self.intensity == PRESERVED
            and self.noise_kind == "none"
        )


# CLI-facing condition names: noise-* are prosody-matched noises labelled by
# what they preserve; flat-* are intelligible speech with flattened prosody.
CONDITIONS: dict[str, dict] = {
    "clean": dict(),
    "flat-p": dict(pitch=FLATTENED),
    "flat-i": dict(intensity=FLATTENED),
    "flat-pi": dict(pitch=FLATTENED, intensity=FLATTENED),
    "noise-pi": dict(lexical=REMOVED, noise_kind="prosody_matched"),
    "noise-p": dict(lexical=REMOVED, noise_kind="prosody_matched", intensity=FLATTENED),
    "noise-i": dict(lexical=REMOVED, noise_kind="prosody_matched", pitch=FLATTENED),
    "babble": dict(noise_kind="babble"),
    "speech-noise": dict(noise_kind="speech"),
    "music": dict(noise_kind="music_file"),
}


def condition_from_name(name: str, snr_db: float | None = None, seed: int = 0) -> ConditionSpec:
    if name not in CONDITIONS:
        raise ConditionError(f"unknown condition {name!r}; known: {sorted(CONDITIONS)}")
    return ConditionSpec(snr_db=snr_db, seed=seed, **CONDITIONS[name])


def condition_name(spec: ConditionSpec) -> str:
    for name, kwargs in CONDITIONS.items():
        if ConditionSpec(snr_db=spec.snr_db, seed=spec.seed, **kwargs) == spec:
            return name
    return "custom"


def snr_grid(lo: float = -10.0, hi: float = 10.0, step: float = 2.5) -> list[float]:
    """The evaluation SNR grid; defaults give 9 levels from -10 to 10 dB."""
    n = int(round((hi - lo) / step)) + 1
    return [lo + i * step for i in range(n)]


# ---------------------------------------------------------------------------
# flattening


def flatten_pitch(
    frames: VocoderFrames, segments: list[tuple[int, int]] | None = None
) -> VocoderFrames:
    """Set every voiced frame's F0 to the voiced mean (per frame segment when
    given, else over the whole input). Envelope and aperiodicity untouched."""
    out = frames.copy()
    if not np.any(out.f0.voiced):
        log.info("flatten_pitch: no voiced frames, returning input unchanged")
        return out
    out.f0.f0_hz = flatten_f0_values(out.f0.f0_hz, segments)
    return out


def _smooth_within_runs(values: np.ndarray, active: np.ndarray, width: int) -> np.ndarray:
    """Moving-average smooth, restricted to each maximal active run."""
    out = values.copy()
    n = values.size
    i = 0
    half = width // 2
    while i < n:
        if not active[i]:
            i += 1
            continue
        j = i
        while j < n and active[j]:
            j += 1
        run = values[i:j]
        padded = np.concatenate([np.full(half, run[0]), run, np.full(half, run[-1])])
        kernel = np.ones(width) / width
        out[i:j] = np.convolve(padded, kernel, mode="valid")
        i = j
    return out


def flatten_intensity(
    w: Waveform,
    cfg: VocoderConfig = DEFAULT_CONFIG,
    segments: list[tuple[int, int]] | None = None,
) -> Waveform:
    """Drive each active frame's RMS (dB) to the mean active level.

    The mean is taken in the dB domain over active frames, per frame segment
    when segments are given. The per-frame gain contour is smoothed over
    50 ms inside active runs; frames under the energy floor keep their
    samples bit-unchanged.
    """
    require_pipeline_rate(w, "flatten_intensity")
    hop = cfg.hop(w.sample_rate_hz)
    levels = frame_rms(w.samples, hop)
    levels_db = np.asarray(amp_to_db(levels))
    active = levels_db > cfg.energy_floor_db
    if not np.any(active):
        return Waveform(w.samples.copy(), w.sample_rate_hz)

    n_frames = levels.size
    gains_db = np.zeros(n_frames)
    spans = segments if segments else [(0, n_frames)]
    for a, b in spans:
        m = active[a:b]
        if np.any(m):
            target = float(np.mean(levels_db[a:b][m]))
            gains_db[a:b][m] = target - levels_db[a:b][m]

    width = max(1, int(round(GAIN_SMOOTH_MS / cfg.frame_period_ms)))
    gains_db = _smooth_within_runs(gains_db, active, width)
    gains = np.where(active, db_to_amp(gains_db), 1.0)

    out = w.samples.copy()
    sample_gain = np.repeat(gains, hop)[: out.size]
    sample_active = np.repeat(active, hop)[: out.size]
    out[sample_active] = out[sample_active] * sample_gain[sample_active]
    return Waveform(peak_guard(out), w.sample_rate_hz)


# ---------------------------------------------------------------------------
# noise construction


def pink_spectrum(cfg: VocoderConfig = DEFAULT_CONFIG,
                  sample_rate_hz: int = PIPELINE_SAMPLE_RATE) -> np.ndarray:
    """Pink power shape on the rfft bin grid (1/f above 20 Hz, flat below),
    normalized so the two-sided mean is 1."""
    f = np.fft.rfftfreq(cfg.fft_size, 1.0 / sample_rate_hz)
    shape = 1.0 / np.maximum(f, PINK_CORNER_HZ)
    return shape / twosided_mean(shape[None, :])[0]


def pink_noise(duration_s: float, sample_rate_hz: int = PIPELINE_SAMPLE_RATE,
               seed: int = 0) -> Waveform:
    """Pink noise source: 1/f power above 20 Hz, RMS normalized to 1.0.

    Intended as a noise source ahead of later gain staging, so it is not
    peak-limited.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(seed)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    amp = 1.0 / np.sqrt(np.maximum(f, PINK_CORNER_HZ))
    spec = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) * amp
    spec[0] = 0.0
    if n % 2 == 0:
        spec[-1] = spec[-1].real
    x = np.fft.irfft(spec, n)
    return Waveform(x / max(rms(x), _TINY), sample_rate_hz)


def make_babble(sources: Sequence[Waveform], n_overlap: int, duration_s: float,
                seed: int = 0) -> Waveform:
    """Sum of n_overlap randomly offset, RMS-equalized source excerpts,
    renormalized to RMS 1.0."""
    if len(sources) < n_overlap:
        raise ValueError(f"need at least {n_overlap} sources, got {len(sources)}")
    if n_overlap < 1:
        raise ValueError("n_overlap must be >= 1")
    rates = {s.sample_rate_hz for s in sources}
    if len(rates) != 1:
        raise ValueError(f"sources disagree on sample rate: {sorted(rates)}")
    sr = rates.pop()
    n = int(round(duration_s * sr))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(sources), size=n_overlap, replace=False)
    acc = np.zeros(n)
    for i in picks:
        src = sources[int(i)].samples
        if src.size == 0:
            raise ValueError("empty noise source")
        offset = int(rng.integers(0, src.size))
        reps = int(np.ceil((offset + n) / src.size))
        excerpt = np.tile(src, reps)[offset : offset + n]
        acc += excerpt / max(rms(excerpt), _TINY)
    return Waveform(acc / max(rms(acc), _TINY), sr)


def loop_to_length(noise: Waveform, n: int) -> np.ndarray:
    """Loop or truncate noise samples to exactly n samples."""
    src = noise.samples
    if src.size == 0:
        raise ValueError("empty noise")
    if src.size >= n:
        return src[:n].copy()
    reps = int(np.ceil(n / src.size))
    return np.tile(src, reps)[:n]


def snr_gain(speech: Waveform, noise_samples: np.ndarray, snr_db: float,
             active_mask_samples: np.ndarray) -> float:
    """Noise gain that realizes `snr_db` over the speech-active span."""
    rs = rms(speech.samples[active_mask_samples])
    if rs <= 0:
        raise ValueError("speech is silent over the active mask; SNR undefined")
    rn = rms(noise_samples[active_mask_samples])
    if rn <= 0:
        raise ValueError("noise is silent over the active span")
    return rs / rn * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float,
               active_mask: np.ndarray | None = None,
               cfg: VocoderConfig = DEFAULT_CONFIG) -> Waveform:
    """Add noise to speech at a controlled SNR computed over active frames.

    The active mask is per-frame at the vocoder frame rate; when omitted it
    is derived from the speech level against the energy floor. The noise is
    looped or truncated to the speech length. Peak safety rescales speech
    and noise together, so the realized SNR is unaffected.
    """
    if speech.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("speech and noise sample rates differ")
    n = len(speech)
    hop = cfg.hop(speech.sample_rate_hz)
    if active_mask is None:
        active_mask = amp_to_db(frame_rms(speech.samples, hop)) > cfg.energy_floor_db
    mask_samples = np.repeat(np.asarray(active_mask, dtype=bool), hop)[:n]
    if mask_samples.size < n:
        mask_samples = np.pad(mask_samples, (0, n - mask_samples.size))
    if not np.any(mask_samples):
        raise ValueError("no active frames; SNR undefined")
    noise_samples = loop_to_length(noise, n)
    g = snr_gain(speech, noise_samples, snr_db, mask_samples)
    out = speech.samples + g * noise_samples
    return Waveform(peak_guard(out), speech.sample_rate_hz)


# ---------------------------------------------------------------------------
# prosody-matched noise

MATCH_BOTH = "match_both"
FLAT_PITCH = "flat_pitch"
FLAT_INTENSITY = "flat_intensity"
NOISE_VARIANTS = (MATCH_BOTH, FLAT_PITCH, FLAT_INTENSITY)


def prosody_matched_noise(
    frames: VocoderFrames,
    original: Waveform,
    variant: str = MATCH_BOTH,
    seed: int = 0,
    segments: list[tuple[int, int]] | None = None,
) -> Waveform:
    """Unintelligible noise whose pitch and level contours track the source.

    Every frame's envelope is replaced by the pink spectral shape scaled to
    the frame's power; the F0 track is kept (or flattened, per variant) and
    the analyzed aperiodicity is retained. After synthesis a smoothed
    per-frame gain matches the output short-time RMS contour to the
    original's (or to the flat contour for the flat-intensity variant).
    """
    if variant not in NOISE_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; known: {NOISE_VARIANTS}")
    cfg = frames.config
    require_pipeline_rate(original, "prosody_matched_noise")
    if frame_count(len(original), cfg) != frames.n_frames:
        raise FrameMismatchError(
            f"frames ({frames.n_frames}) do not match original "
            f"({frame_count(len(original), cfg)} frames)"
        )
    n = frames.n_frames
    sr = original.sample_rate_hz
    if n == 0:
        return Waveform(np.zeros(0), sr)

    pink = pink_spectrum(cfg, sr)
    orig_power = frames.envelope.frame_power()
    new_power = pink[None, :] * np.maximum(orig_power, cfg.floor_power)[:, None]

    f0_values = frames.f0.f0_hz.copy()
    if variant == FLAT_PITCH:
        f0_values = flatten_f0_values(f0_values, segments)
    shaped = VocoderFrames(
        f0=F0Track(f0_values, frames.f0.frame_period_ms),
        envelope=SpectralFrames(new_power),
        aperiodicity=AperiodicityFrames(frames.aperiodicity.ratio.copy()),
        config=cfg,
    )
    y = synthesize(shaped, seed=seed)

    hop = cfg.hop(sr)
    out = y.samples[: n * hop]
    orig_rms = intensity_contour(original.samples, hop)[:n]

    if variant == FLAT_INTENSITY:
        levels_db = np.asarray(amp_to_db(orig_rms))
        active = levels_db > cfg.energy_floor_db
        target = orig_rms.copy()
        spans = segments if segments else [(0, n)]
        for a, b in spans:
            m = active[a:b]
            if np.any(m):
                target_db = float(np.mean(levels_db[a:b][m]))
                target[a:b][m] = db_to_amp(target_db)
    else:
        target = orig_rms

    # two passes of 50 ms-smoothed per-frame gains: the second pass corrects
    # the residual the first smoothing left behind
    for _ in range(2):
        out_rms = intensity_contour(out, hop)[:n]
        gain = _smoothed_gain(target / np.maximum(out_rms, _TINY), cfg)
        frame_centers = (np.arange(n) + 0.5) * hop
        out = out * np.interp(np.arange(out.size), frame_centers, gain)
    return Waveform(peak_guard(out), sr)


def _smoothed_gain(gain: np.ndarray, cfg: VocoderConfig) -> np.ndarray:
    width = max(1, int(round(GAIN_SMOOTH_MS / cfg.frame_period_ms)))
    kernel = np.ones(width) / width
    half = width // 2
    padded = np.concatenate([np.full(half, gain[0]), gain, np.full(half, gain[-1])])
    return np.convolve(padded, kernel, mode="valid")[: gain.size]


# ---------------------------------------------------------------------------
# condition routing


def _variant_for(spec: ConditionSpec) -> str:
    if spec.pitch == FLATTENED:
        return FLAT_PITCH
    if spec.intensity == FLATTENED:
        return FLAT_INTENSITY
    return MATCH_BOTH


def apply_condition(
    channels: Sequence[Waveform],
    word_timings,
    spec: ConditionSpec,
    cfg: VocoderConfig = DEFAULT_CONFIG,
    noise: Waveform | Sequence[Waveform] | None = None,
    scope: str = "auto",
) -> list[Waveform]:
    """Route one condition over the session's channels.

    `word_timings` (WordToken sequence or None) supplies per-channel
    utterance segmentation for flattening scopes; `noise` supplies the
    background waveform for the additive noise kinds. Channels are processed
    independently with per-channel derived seeds.
    """
    if spec.is_clean:
        return [Waveform(ch.samples.copy(), ch.sample_rate_hz) for ch in channels]

    if spec.noise_kind in ADDITIVE_NOISE_KINDS and noise is None:
        raise ConditionError(f"{spec.noise_kind} condition requires a noise waveform")

    out: list[Waveform] = []
    for c, ch in enumerate(channels):
        require_pipeline_rate(ch, "apply_condition")
        ch_seed = derive_seed(spec.seed, "channel", c)
        segments = _scope_segments(ch, word_timings, c, scope, cfg)

        if spec.noise_kind == "prosody_matched":
            frames = analyze(ch, cfg)
            vocoded = prosody_matched_noise(
                frames, ch, _variant_for(spec), seed=ch_seed, segments=segments
            )
            if spec.snr_db is not None:
                vocoded = mix_at_snr(ch, vocoded, spec.snr_db, cfg=cfg)
            out.append(vocoded)
        elif spec.noise_kind in ADDITIVE_NOISE_KINDS:
            ch_noise = noise[c] if isinstance(noise, (list, tuple)) else noise
            out.append(mix_at_snr(ch, ch_noise, spec.snr_db, cfg=cfg))
        else:
            y = ch
            if spec.pitch == FLATTENED:
                frames = flatten_pitch(analyze(y, cfg), segments)
                y = synthesize(frames, seed=ch_seed)
                y = Waveform(y.samples[: len(ch)], y.sample_rate_hz)
            if spec.intensity == FLATTENED:
                y = flatten_intensity(y, cfg, segments)
            out.append(y)
    return out


def _scope_segments(ch, word_timings, channel, scope, cfg):
    if scope == "global":
        return None
    if scope in ("auto", "ipu"):
        if word_timings:
            from .dialog import ipu_segments

            rate = 1000.0 / cfg.frame_period_ms
            return [
                (int(round(s * rate)), int(round(e * rate)))
                for s, e in ipu_segments(word_timings, channel)
            ]
        if scope == "ipu":
            raise ConditionError("ipu scope requires word timings")
        return None
    if scope == "window":
        n = frame_count(len(ch), cfg)
        span = max(1, int(round(cfg.analysis_window_s * 1000.0 / cfg.frame_period_ms)))
        return [(a, min(a + span, n)) for a in range(0, n, span)]
    raise ConditionError(f"unknown scope {scope!r}")


# ---------------------------------------------------------------------------
# mixed-training plans


@dataclass(frozen=True)
class MixAssignment:
    session_id: str
    condition: str
    snr_db: float | None
    seed: int


@dataclass
class MixPlan:
    assignments: list[MixAssignment]
    clean_fraction: float
    seed: int

    @property
    def manipulated_fraction(self) -> float:
        return 1.0 - self.clean_fraction

    def n_manipulated(self) -> int:
        return sum(1 for a in self.assignments if a.condition != "clean")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["session_id", "condition", "snr_db", "seed"])
            for a in self.assignments:
                writer.writerow(
                    [a.session_id, a.condition,
                     "" if a.snr_db is None else f"{a.snr_db:g}", a.seed]
                )


def plan_mixed_training(
    session_ids: Sequence[str],
    clean_fraction: float = 0.75,
    seed: int = 0,
    manipulated_condition: str = "noise-pi",
    manipulated_snr_db: float = 0.0,
) -> MixPlan:
    """Deterministically demote a fraction of sessions to a manipulated
    condition (at 0 dB by default); the rest stay clean."""
    if not session_ids:
        raise ValueError("empty session list")
    if not 0.0 < clean_fraction < 1.0:
        raise ValueError("clean_fraction must be strictly between 0 and 1")
    ordered = sorted(str(s) for s in session_ids)
    n_manip = int(round(len(ordered) * (1.0 - clean_fraction)))
    rng = np.random.default_rng(seed)
    manip_idx = set(rng.choice(len(ordered), size=n_manip, replace=False).tolist())
    assignments = []
    for i, sid in enumerate(ordered):
        if i in manip_idx:
            assignments.append(
                MixAssignment(sid, manipulated_condition, manipulated_snr_db,
                              derive_seed(seed, sid))
            )
        else:
            assignments.append(MixAssignment(sid, "clean", None, derive_seed(seed, sid)))
    return MixPlan(assignments, clean_fraction, seed)
