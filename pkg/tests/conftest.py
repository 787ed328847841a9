"""Shared synthetic audio fixtures.

All fixtures are generated by additive synthesis, independent of the
vocoder under test, so round-trip and re-analysis checks have a ground
truth that does not share code with the implementation.
"""
import numpy as np
import pytest

from prosokit.audio import Waveform

SR = 16000


def sine(freq_hz: float, duration_s: float = 1.0, amplitude: float = 0.5) -> Waveform:
    t = np.arange(int(SR * duration_s)) / SR
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), SR)


def harmonic_tone(f0_base: float, duration_s: float = 2.0, vibrato_hz: float = 5.0,
                  vibrato_depth_hz: float = 5.0) -> tuple[Waveform, np.ndarray]:
    """Five-harmonic tone with vibrato; returns (waveform, per-sample F0)."""
    n = int(SR * duration_s)
    t = np.arange(n) / SR
    f0 = f0_base + vibrato_depth_hz * np.sin(2 * np.pi * vibrato_hz * t)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    sig = np.zeros(n)
    for h, a in ((1, 0.4), (2, 0.25), (3, 0.15), (4, 0.08), (5, 0.05)):
        sig += a * np.sin(h * phase)
    sig *= 0.5 / np.max(np.abs(sig))
    return Waveform(sig, SR), f0


def speech_like(seed: int, duration_s: float = 2.0,
                f0_base: float | None = None) -> Waveform:
    """Vowel-like utterance: harmonics under five moving formant bumps that
    span the full band, with a random F0 contour and syllable-rate amplitude
    modulation."""
    rng = np.random.default_rng(seed)
    if f0_base is None:
        f0_base = rng.uniform(110, 240)
    n = int(duration_s * SR)
    t = np.arange(n) / SR
    st = np.interp(t, np.linspace(0, duration_s, 8), rng.uniform(-2, 2, 8))
    f0 = f0_base * 2 ** (st / 12)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    lows = (300, 900, 1800, 3200, 5200)
    highs = (800, 1700, 3000, 5000, 7400)
    centers = [np.interp(t, np.linspace(0, duration_s, 4), rng.uniform(lo, hi, 4))
               for lo, hi in zip(lows, highs)]
    bandwidths = (130.0, 200.0, 280.0, 400.0, 500.0)
    sig = np.zeros(n)
    for h in range(1, int(7600 / np.max(f0)) + 1):
        fh = h * f0
        amp = np.full(n, 0.05)
        for fc, bw in zip(centers, bandwidths):
            amp += np.exp(-0.5 * ((fh - fc) / bw) ** 2)
        sig += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    am = 0.65 + 0.35 * np.sin(2 * np.pi * rng.uniform(2.5, 4.0) * t + rng.uniform(0, 6))
    sig *= am
    sig *= 0.35 / np.max(np.abs(sig))
    return Waveform(sig, SR)


@pytest.fixture(scope="session")
def sine_220() -> Waveform:
    return sine(220.0)


@pytest.fixture(scope="session")
def white_noise() -> Waveform:
    rng = np.random.default_rng(0)
    return Waveform(np.clip(0.3 * rng.standard_normal(SR), -1, 1), SR)
