"""Simplified analysis/synthesis vocoder.

Decomposes 16 kHz speech into a per-frame F0 track, a smoothed spectral
power envelope, and a scalar aperiodicity ratio on a fixed 10 ms frame grid,
and resynthesizes audio from (possibly manipulated) frames.

Conventions that the rest of the pipeline relies on:

* Frame i is centred at ``i * frame_period``; the frame count for a signal
  of n samples is ``ceil(n / hop)``. Analysis windows are reflected at the
  signal edges.
* Envelope bins hold linear power calibrated so that the mean over the
  two-sided spectrum equals the time-domain mean power of the frame.
  Synthesis honours the same convention, so frame RMS is recoverable from
  the envelope alone: ``rms = sqrt(twosided_mean(power))``.
* F0 values are 0 for unvoiced frames, otherwise within
  [f0_floor_hz, f0_ceil_hz].
* Long inputs are processed in ``analysis_window_s`` blocks of frames; the
  F0 continuity pass is seeded across block boundaries with the previous
  block's final state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .audio import (
    PIPELINE_SAMPLE_RATE,
    Waveform,
    amp_to_db,
    frame_rms,
    peak_guard,
    require_pipeline_rate,
)

log = logging.getLogger(__name__)

# F0 search: normalized cross-correlation candidates + continuity pass.
# HIGH_F0_BIAS breaks the exact subharmonic ambiguity of periodic signals;
# noise-excited low-frequency content (e.g. pink-shaped excitation) can tip
# the raw correlation slightly toward 2*T0, so the preference must exceed
# that perturbation.
VOICING_THRESHOLD = 0.45
OCTAVE_JUMP_COST = 0.35
VOICED_UNVOICED_COST = 0.14
HIGH_F0_BIAS = 0.03
MAX_CANDIDATES = 4

# Aperiodicity conventions (scalar per frame).
VOICED_AP_FLOOR = 0.05
VOICED_AP_CEIL = 0.5

# Cepstral smoothing: pitch-adaptive cutoff for voiced frames, fixed 1 ms
# cutoff for unvoiced frames.
ENVELOPE_QUEFRENCY_FRACTION = 0.8
UNVOICED_QUEFRENCY_S = 0.001

_LOG_FLOOR = 1e-12


class FrameMismatchError(ValueError):
    """Per-frame sequences that must align do not."""


@dataclass(frozen=True)
class VocoderConfig:
    frame_period_ms: float = 10.0
    fft_size: int = 512
    analysis_window_s: float = 30.0
    f0_floor_hz: float = 60.0
    f0_ceil_hz: float = 400.0
    energy_floor_db: float = -60.0

    def __post_init__(self):
        if self.frame_period_ms <= 0:
            raise ValueError("frame_period_ms must be positive")
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not 0 < self.f0_floor_hz < self.f0_ceil_hz:
            raise ValueError("need 0 < f0_floor_hz < f0_ceil_hz")

    def hop(self, sample_rate_hz: int = PIPELINE_SAMPLE_RATE) -> int:
        return int(round(sample_rate_hz * self.frame_period_ms / 1000.0))

    @property
    def floor_power(self) -> float:
        return 10.0 ** (self.energy_floor_db / 10.0)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


DEFAULT_CONFIG = VocoderConfig()


@dataclass
class F0Track:
    """Per-frame fundamental frequency in Hz; 0 encodes unvoiced."""

    f0_hz: np.ndarray
    frame_period_ms: float = 10.0

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)

    def __len__(self) -> int:
        return self.f0_hz.size

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz > 0


@dataclass
class SpectralFrames:
    """Per-frame linear power envelope, shape (n_frames, fft_size // 2 + 1)."""

    power: np.ndarray

    def __post_init__(self):
        self.power = np.atleast_2d(np.asarray(self.power, dtype=np.float64))

    def __len__(self) -> int:
        return self.power.shape[0] if self.power.size else 0

    def frame_power(self) -> np.ndarray:
        """Time-domain mean power implied by each frame (two-sided mean)."""
        return twosided_mean(self.power)


@dataclass
class AperiodicityFrames:
    """Per-frame noise-excitation ratio in [0, 1]; 1 means fully noise-excited."""

    ratio: np.ndarray

    def __post_init__(self):
        self.ratio = np.asarray(self.ratio, dtype=np.float64)

    def __len__(self) -> int:
        return self.ratio.size


@dataclass
class VocoderFrames:
    """Aligned analysis bundle: F0 track, spectral envelope, aperiodicity."""

    f0: F0Track
    envelope: SpectralFrames
    aperiodicity: AperiodicityFrames
    config: VocoderConfig = field(default_factory=VocoderConfig)

    def __post_init__(self):
        lengths = {len(self.f0), len(self.envelope), len(self.aperiodicity)}
        if len(lengths) != 1:
            raise FrameMismatchError(
                f"frame sequences disagree in length: f0={len(self.f0)}, "
                f"envelope={len(self.envelope)}, aperiodicity={len(self.aperiodicity)}"
            )

    @property
    def n_frames(self) -> int:
        return len(self.f0)

    def copy(self) -> "VocoderFrames":
        return VocoderFrames(
            f0=F0Track(self.f0.f0_hz.copy(), self.f0.frame_period_ms),
            envelope=SpectralFrames(self.envelope.power.copy()),
            aperiodicity=AperiodicityFrames(self.aperiodicity.ratio.copy()),
            config=self.config,
        )


def frame_count(n_samples: int, cfg: VocoderConfig = DEFAULT_CONFIG) -> int:
    return int(ceil(n_samples / cfg.hop())) if n_samples else 0


def frame_times(n_frames: int, cfg: VocoderConfig = DEFAULT_CONFIG) -> np.ndarray:
    return np.arange(n_frames) * cfg.frame_period_ms / 1000.0


def twosided_mean(power: np.ndarray) -> np.ndarray:
    """Mean of the full symmetric spectrum from one-sided rfft-grid bins."""
    power = np.atleast_2d(power)
    n_bins = power.shape[1]
    nfft = 2 * (n_bins - 1)
    total = power[:, 0] + power[:, -1] + 2.0 * np.sum(power[:, 1:-1], axis=1)
    return total / nfft


def _gather(x: np.ndarray, centers: np.ndarray, length: int) -> np.ndarray:
    """Gather length-sample windows centred on each sample index, edge-reflected."""
    half = length // 2
    pad = half + length
    if x.size > 1:
        padded = np.pad(x, (pad, pad), mode="reflect")
    else:
        padded = np.pad(x, (pad, pad), mode="edge")
    start = centers - half + pad
    idx = start[:, None] + np.arange(length)[None, :]
    return padded[idx]


PITCH_BAND_TOP_HZ = 1200.0


def _bandpass_for_pitch(x: np.ndarray, sr: int, cfg: "VocoderConfig") -> np.ndarray:
    """Zero-phase band-pass around the F0 search band before correlation.

    Sub-F0 rumble biases the correlation toward subharmonic lags, and
    broadband content above ~1 kHz makes the correlation peak so sharp that
    integer-lag sampling underestimates it (favouring near-integer
    subharmonic lags); restricting to the pitch band fixes both.
    """
    if x.size < 16:
        return x
    top = min(PITCH_BAND_TOP_HZ, 0.45 * sr)
    sos = butter(2, [cfg.f0_floor_hz / (sr / 2), top / (sr / 2)],
                 btype="bandpass", output="sos")
    # the default pad length is far too short for the low cutoff; the edge
    # transient would otherwise corrupt the first/last analysis windows
    padlen = min(x.size - 1, 4 * int(sr / cfg.f0_floor_hz))
    return sosfiltfilt(sos, x, padlen=padlen)


def _gather_inward(x: np.ndarray, centers: np.ndarray, length: int) -> np.ndarray:
    """Gather length-sample windows, shifted inward at the signal edges.

    Correlation-based measures degrade on reflected tails (the time reversal
    breaks periodicity), so windows near the edges slide inside the signal
    instead. Falls back to reflection when the signal is shorter than one
    window.
    """
    half = length // 2
    if x.size >= length:
        start = np.clip(centers - half, 0, x.size - length)
        idx = start[:, None] + np.arange(length)[None, :]
        return x[idx]
    return _gather(x, centers, length)


def _nccf(frames: np.ndarray, lag_min: int, lag_max: int) -> np.ndarray:
    """Normalized cross-correlation per frame for lags 0..lag_max.

    The correlated span has fixed length M = window - lag_max so that every
    lag compares equally long segments; values fall in [-1, 1].
    """
    n_frames, win = frames.shape
    m = win - lag_max
    nfft = 1 << int(np.ceil(np.log2(win + lag_max + 1)))
    spec_full = np.fft.rfft(frames, nfft)
    spec_head = np.fft.rfft(frames[:, :m], nfft)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), nfft)[:, : lag_max + 1]

    sq = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    e0 = sq[:, m] - sq[:, 0]
    lags = np.arange(lag_max + 1)
    e_lag = sq[:, lags + m] - sq[:, lags]
    denom = np.sqrt(np.maximum(e0[:, None] * e_lag, 1e-30))
    out = corr / denom
    out[:, :lag_min] = 0.0
    return out


def _parabolic_peak(y: np.ndarray, i: int) -> tuple[float, float]:
    """Refine a local maximum at integer index i; returns (index, value)."""
    if i <= 0 or i >= y.size - 1:
        return float(i), float(y[i])
    denom = 2.0 * y[i] - y[i - 1] - y[i + 1]
    if denom <= 0:
        return float(i), float(y[i])
    delta = 0.5 * (y[i + 1] - y[i - 1]) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    value = y[i] + 0.25 * (y[i + 1] - y[i - 1]) * delta
    return i + delta, float(value)


def _frame_candidates(nccf_row, silent, sr, cfg, lag_min, lag_max):
    """Voiced (f0, strength) candidates for one frame, plus the unvoiced option.

    Peaks are parabolically refined before ranking; raw integer-lag values
    underestimate peaks that fall between samples, which would otherwise
    push the true period out of the candidate set.
    """
    candidates = [(0.0, VOICING_THRESHOLD)]
    if silent:
        return candidates
    seg = nccf_row[lag_min : lag_max + 1]
    local_max = (seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:]) & (seg[1:-1] > 0.0)
    peaks = np.nonzero(local_max)[0] + 1 + lag_min
    if peaks.size == 0:
        return candidates
    refined = [_parabolic_peak(nccf_row, int(i)) for i in peaks]
    refined.sort(key=lambda lv: lv[1], reverse=True)
    for lag, value in refined[:MAX_CANDIDATES]:
        f0 = float(np.clip(sr / lag, cfg.f0_floor_hz, cfg.f0_ceil_hz))
        strength = value - HIGH_F0_BIAS * log2(lag * cfg.f0_floor_hz / sr)
        candidates.append((f0, float(strength)))
    return candidates


def _transition_cost(f_prev: float, f_next: float) -> float:
    if f_prev == 0.0 and f_next == 0.0:
        return 0.0
    if (f_prev == 0.0) != (f_next == 0.0):
        return VOICED_UNVOICED_COST
    return OCTAVE_JUMP_COST * abs(log2(f_next / f_prev))


def _continuity_pass(candidates, seed_state):
    """Best path through per-frame candidates (max total strength minus
    transition costs). `seed_state` is (f0, score) carried over from the
    previous analysis block, or None at the start of the signal."""
    chosen = np.zeros(len(candidates))
    if not candidates:
        return chosen, seed_state
    scores = []
    backptr = []
    first = candidates[0]
    if seed_state is None:
        scores.append([s for _, s in first])
    else:
        f_seed, s_seed = seed_state
        scores.append(
            [s_seed + s - _transition_cost(f_seed, f) for f, s in first]
        )
    backptr.append([-1] * len(first))
    for t in range(1, len(candidates)):
        row_scores = []
        row_back = []
        prev_sc = scores[-1]
        prev_cand = candidates[t - 1]
        for f, s in candidates[t]:
            best, best_i = -np.inf, 0
            for i, (fp, _sp) in enumerate(prev_cand):
                v = prev_sc[i] - _transition_cost(fp, f)
                if v > best:
                    best, best_i = v, i
            row_scores.append(best + s)
            row_back.append(best_i)
        scores.append(row_scores)
        backptr.append(row_back)
    j = int(np.argmax(scores[-1]))
    final_state = (candidates[-1][j][0], float(scores[-1][j]))
    for t in range(len(candidates) - 1, -1, -1):
        chosen[t] = candidates[t][j][0]
        j = backptr[t][j]
    return chosen, final_state


def estimate_f0(w: Waveform, cfg: VocoderConfig = DEFAULT_CONFIG) -> F0Track:
    """Estimate a per-frame F0 track.

    Candidate periods come from the normalized cross-correlation of each
    50 ms-scale window; a continuity pass with an octave-jump penalty picks
    the track, and frames whose best peak stays below the voicing threshold
    (or whose level sits under the energy floor) come out unvoiced.
    """
    require_pipeline_rate(w, "estimate_f0")
    sr = w.sample_rate_hz
    n = len(w)
    if n == 0:
        return F0Track(np.zeros(0), cfg.frame_period_ms)

    hop = cfg.hop(sr)
    n_frames = frame_count(n, cfg)
    lag_min = max(2, int(np.floor(sr / cfg.f0_ceil_hz)))
    lag_max = int(np.ceil(sr / cfg.f0_floor_hz))
    win = 3 * lag_max  # correlated span = 2 periods of the lowest F0

    filtered = _bandpass_for_pitch(w.samples, sr, cfg)
    block = max(1, int(round(cfg.analysis_window_s * 1000.0 / cfg.frame_period_ms)))
    f0 = np.zeros(n_frames)
    state = None
    for b0 in range(0, n_frames, block):
        b1 = min(b0 + block, n_frames)
        centers = np.arange(b0, b1) * hop
        frames = _gather_inward(filtered, centers, win)
        frames = frames - frames.mean(axis=1, keepdims=True)
        nccf = _nccf(frames, lag_min, lag_max)
        level_db = amp_to_db(np.sqrt(np.mean(frames * frames, axis=1)))
        silent = level_db <= cfg.energy_floor_db
        candidates = [
            _frame_candidates(nccf[i], silent[i], sr, cfg, lag_min, lag_max)
            for i in range(b1 - b0)
        ]
        chosen, state = _continuity_pass(candidates, state)
        f0[b0:b1] = chosen
    return F0Track(f0, cfg.frame_period_ms)


def _check_alignment(w: Waveform, track_len: int, cfg: VocoderConfig, what: str):
    expected = frame_count(len(w), cfg)
    if track_len != expected:
        raise FrameMismatchError(
            f"{what}: track has {track_len} frames, waveform implies {expected}"
        )


def estimate_envelope(
    w: Waveform, f0: F0Track, cfg: VocoderConfig = DEFAULT_CONFIG
) -> SpectralFrames:
    """Cepstrally smoothed power envelope, one row per frame.

    The periodogram of a Hann-windowed fft_size slice around each frame
    centre is smoothed in the log domain with a quefrency cutoff of
    0.8 periods for voiced frames (1 ms for unvoiced ones), which removes
    the harmonic comb while keeping formant structure. Frames under the
    energy floor return the flat floor envelope.
    """
    require_pipeline_rate(w, "estimate_envelope")
    _check_alignment(w, len(f0), cfg, "estimate_envelope")
    sr = w.sample_rate_hz
    n_frames = len(f0)
    if n_frames == 0:
        return SpectralFrames(np.zeros((0, cfg.n_bins)))

    hop = cfg.hop(sr)
    nfft = cfg.fft_size
    centers = np.arange(n_frames) * hop
    frames = _gather(w.samples, centers, nfft)
    window = np.hanning(nfft)
    wsum2 = float(np.sum(window * window))
    spec = np.fft.rfft(frames * window[None, :], nfft)
    power = (spec.real**2 + spec.imag**2) / wsum2

    silent = amp_to_db(frame_rms(w.samples, hop)) <= cfg.energy_floor_db

    log_power = np.log(np.maximum(power, _LOG_FLOOR))
    cepstra = np.fft.irfft(log_power, nfft)
    f0_for_cut = np.where(f0.f0_hz > 0, f0.f0_hz, cfg.f0_floor_hz)
    q_cut = np.where(
        f0.f0_hz > 0,
        ENVELOPE_QUEFRENCY_FRACTION * sr / np.maximum(f0_for_cut, cfg.f0_floor_hz),
        UNVOICED_QUEFRENCY_S * sr,
    )
    quefrency = np.minimum(np.arange(nfft), nfft - np.arange(nfft))
    keep = quefrency[None, :] <= q_cut[:, None]
    smooth = np.fft.rfft(cepstra * keep, nfft).real
    envelope = np.exp(smooth)

    # Log-domain smoothing shrinks linear power (geometric vs arithmetic
    # mean); rescale each frame so the two-sided mean matches the raw
    # periodogram, keeping envelope power consistent with frame RMS.
    raw_power = twosided_mean(power)
    smooth_power = twosided_mean(envelope)
    scale = raw_power / np.maximum(smooth_power, _LOG_FLOOR)
    envelope *= scale[:, None]

    envelope[silent, :] = cfg.floor_power
    return SpectralFrames(envelope)


def estimate_aperiodicity(
    w: Waveform, f0: F0Track, cfg: VocoderConfig = DEFAULT_CONFIG
) -> AperiodicityFrames:
    """Scalar aperiodicity: 1 - correlation strength at the F0 lag for voiced
    frames (clamped to [0.05, 0.5]); 1.0 for unvoiced frames."""
    require_pipeline_rate(w, "estimate_aperiodicity")
    _check_alignment(w, len(f0), cfg, "estimate_aperiodicity")
    sr = w.sample_rate_hz
    n_frames = len(f0)
    if n_frames == 0:
        return AperiodicityFrames(np.zeros(0))

    hop = cfg.hop(sr)
    lag_min = max(2, int(np.floor(sr / cfg.f0_ceil_hz)))
    lag_max = int(np.ceil(sr / cfg.f0_floor_hz))
    win = 3 * lag_max

    ratio = np.ones(n_frames)
    filtered = _bandpass_for_pitch(w.samples, sr, cfg)
    block = max(1, int(round(cfg.analysis_window_s * 1000.0 / cfg.frame_period_ms)))
    for b0 in range(0, n_frames, block):
        b1 = min(b0 + block, n_frames)
        voiced_idx = np.nonzero(f0.f0_hz[b0:b1] > 0)[0]
        if voiced_idx.size == 0:
            continue
        centers = (b0 + voiced_idx) * hop
        frames = _gather_inward(filtered, centers, win)
        frames = frames - frames.mean(axis=1, keepdims=True)
        nccf = _nccf(frames, lag_min, lag_max)
        for row, fi in enumerate(voiced_idx):
            lag = int(round(sr / f0.f0_hz[b0 + fi]))
            lag = min(max(lag, lag_min), lag_max)
            # the nominal lag can sit a bin off the true peak; look nearby
            lo, hi = max(lag_min, lag - 2), min(lag_max, lag + 2) + 1
            best = lo + int(np.argmax(nccf[row, lo:hi]))
            _, value = _parabolic_peak(nccf[row], best)
            ratio[b0 + fi] = float(
                np.clip(1.0 - value, VOICED_AP_FLOOR, VOICED_AP_CEIL)
            )
    return AperiodicityFrames(ratio)


def analyze(w: Waveform, cfg: VocoderConfig = DEFAULT_CONFIG) -> VocoderFrames:
    """Full decomposition: F0 track, spectral envelope, aperiodicity."""
    f0 = estimate_f0(w, cfg)
    envelope = estimate_envelope(w, f0, cfg)
    aperiodicity = estimate_aperiodicity(w, f0, cfg)
    return VocoderFrames(f0, envelope, aperiodicity, cfg)


def _pulse_positions(f0_per_sample: np.ndarray, sr: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractional sample positions of glottal pulses from a per-sample F0 curve."""
    phase = np.cumsum(f0_per_sample / sr)
    k = np.floor(phase)
    crossing = np.nonzero(np.diff(k, prepend=0.0) > 0)[0]
    if crossing.size == 0:
        return np.zeros(0), np.zeros(0)
    prev_phase = np.concatenate([[0.0], phase[:-1]])
    step = phase[crossing] - prev_phase[crossing]
    frac = (k[crossing] - prev_phase[crossing]) / np.maximum(step, 1e-12)
    positions = crossing - 1.0 + np.clip(frac, 0.0, 1.0)
    return np.maximum(positions, 0.0), f0_per_sample[crossing]


def synthesize(frames: VocoderFrames, seed: int = 0) -> Waveform:
    """Resynthesize audio from vocoder frames.

    Excitation is a pulse train following the F0 track (pulses placed with
    fractional-sample accuracy) blended with white noise per the frame
    aperiodicity; both parts are spectrally shaped by the envelope. The noise
    part is overlap-added with power-complementary sine windows so its
    variance tracks the envelope exactly. Deterministic for a given seed.
    """
    cfg = frames.config
    sr = PIPELINE_SAMPLE_RATE
    n_frames = frames.n_frames
    if n_frames == 0:
        return Waveform(np.zeros(0), sr)

    hop = cfg.hop(sr)
    nfft = cfg.fft_size
    half = nfft // 2
    n_out = n_frames * hop
    margin = 2 * nfft + hop
    buf = np.zeros(n_out + 2 * margin)

    power = np.maximum(frames.envelope.power, 0.0)
    ap = np.clip(frames.aperiodicity.ratio, 0.0, 1.0)
    amp_noise = np.sqrt(power * ap[:, None])
    amp_pulse = np.sqrt(power * (1.0 - ap[:, None]))

    # Noise branch: one independent fft_size noise slab per frame, shaped in
    # the frequency domain, then sine-windowed 2*hop segments at 50% overlap.
    # A phantom final frame keeps the tail at full variance before trimming.
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((n_frames + 1, nfft))
    rows = np.minimum(np.arange(n_frames + 1), n_frames - 1)
    shaped = np.fft.irfft(np.fft.rfft(white, nfft) * amp_noise[rows], nfft)
    seg_len = 2 * hop
    t = (np.arange(seg_len) + 0.5) / seg_len
    sine_win = np.sin(np.pi * t)
    noise_buf = np.zeros_like(buf)
    for i in range(n_frames + 1):
        start = margin + i * hop - hop
        noise_buf[start : start + seg_len] += shaped[i, :seg_len] * sine_win
    # pin each frame's realized noise RMS to the envelope target; the noise
    # draw should not perturb the energy contour the envelope encodes
    target_rms = np.sqrt(twosided_mean(power * ap[:, None]))
    for i in range(n_frames):
        seg = noise_buf[margin + i * hop : margin + (i + 1) * hop]
        realized = np.sqrt(np.mean(seg * seg))
        seg *= target_rms[i] / max(realized, 1e-30)
    buf += noise_buf

    # Pulse branch: per-sample F0 (frame-held), fractional pulse placement via
    # a linear phase ramp on the spectral amplitude. The excitation runs into
    # the margins so that response truncation at the buffer edges never lands
    # inside the output range.
    ext = nfft
    f0_per_sample = np.repeat(frames.f0.f0_hz, hop)[:n_out]
    f0_extended = np.concatenate([
        np.full(ext, f0_per_sample[0]), f0_per_sample, np.full(ext, f0_per_sample[-1])
    ])
    positions, pulse_f0 = _pulse_positions(f0_extended, sr)
    positions = positions - ext
    keep = (positions >= half - margin) & (positions <= n_out + margin - nfft + half)
    positions, pulse_f0 = positions[keep], pulse_f0[keep]
    if positions.size:
        k = np.arange(nfft // 2 + 1)
        centers = np.floor(positions).astype(int)
        mu = positions - centers
        frame_idx = np.clip(np.round(positions / hop).astype(int), 0, n_frames - 1)
        gains = np.sqrt(sr / pulse_f0)
        for b0 in range(0, positions.size, 2048):
            b1 = min(b0 + 2048, positions.size)
            spec = amp_pulse[frame_idx[b0:b1]] * np.exp(
                -2j * np.pi * k[None, :] * mu[b0:b1, None] / nfft
            )
            resp = np.roll(np.fft.irfft(spec, nfft), half, axis=1)
            for row, p in enumerate(range(b0, b1)):
                start = margin + centers[p] - half
                buf[start : start + nfft] += gains[p] * resp[row]

    out = buf[margin : margin + n_out]
    out = peak_guard(out)
    return Waveform(out, sr)


def flatten_f0_values(f0_hz: np.ndarray, segments: list[tuple[int, int]] | None = None) -> np.ndarray:
    """Replace voiced F0 values by the voiced mean, globally or per frame segment."""
    out = f0_hz.copy()
    spans = segments if segments else [(0, f0_hz.size)]
    for a, b in spans:
        chunk = out[a:b]
        voiced = chunk > 0
        if np.any(voiced):
            chunk[voiced] = float(np.mean(chunk[voiced]))
    return out
