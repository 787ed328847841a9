import numpy as np
import pytest

from prosokit.audio import SampleRateError, Waveform, frame_rms
from prosokit.vocoder import (
    DEFAULT_CONFIG,
    AperiodicityFrames,
    F0Track,
    FrameMismatchError,
    SpectralFrames,
    VocoderConfig,
    VocoderFrames,
    analyze,
    estimate_aperiodicity,
    estimate_envelope,
    estimate_f0,
    frame_count,
    synthesize,
    twosided_mean,
)

from conftest import SR, harmonic_tone, sine

BIN_HZ = SR / DEFAULT_CONFIG.fft_size


class TestConfig:
    def test_defaults(self):
        cfg = VocoderConfig()
        assert cfg.frame_period_ms == 10.0
        assert cfg.fft_size == 512
        assert cfg.hop() == 160

    def test_rejects_non_power_of_two_fft(self):
        with pytest.raises(ValueError):
            VocoderConfig(fft_size=500)

    def test_rejects_inverted_f0_range(self):
        with pytest.raises(ValueError):
            VocoderConfig(f0_floor_hz=500.0, f0_ceil_hz=400.0)


class TestEstimateF0:
    def test_pure_sine_220(self, sine_220):
        track = estimate_f0(sine_220)
        assert np.mean(track.voiced) >= 0.95
        assert 218.0 <= np.median(track.f0_hz[track.voiced]) <= 222.0

    def test_white_noise_mostly_unvoiced(self, white_noise):
        track = estimate_f0(white_noise)
        assert np.mean(~track.voiced) >= 0.90

    def test_silence_all_unvoiced(self):
        track = estimate_f0(Waveform(np.zeros(SR), SR))
        assert not np.any(track.voiced)

    def test_wrong_sample_rate_rejected(self):
        with pytest.raises(SampleRateError):
            estimate_f0(Waveform(np.zeros(8000), 8000))

    def test_empty_input_gives_empty_track(self):
        track = estimate_f0(Waveform(np.zeros(0), SR))
        assert len(track) == 0

    def test_values_zero_or_in_range(self):
        track = estimate_f0(sine(130.0, 0.5))
        cfg = DEFAULT_CONFIG
        ok = (track.f0_hz == 0) | (
            (track.f0_hz >= cfg.f0_floor_hz) & (track.f0_hz <= cfg.f0_ceil_hz)
        )
        assert np.all(ok)

    def test_frame_alignment(self):
        for n in (16000, 16001, 15999, 160, 161):
            w = Waveform(0.1 * np.ones(n), SR)
            assert len(estimate_f0(w)) == int(np.ceil(n / 160))


class TestEstimateEnvelope:
    def test_sine_peak_location_and_contrast(self):
        w = sine(220.0, 1.0, amplitude=0.5)
        f0 = estimate_f0(w)
        env = estimate_envelope(w, f0)
        peak_bins = np.argmax(env.power, axis=1)
        target_bin = 220.0 / BIN_HZ
        assert np.all(np.abs(peak_bins - target_bin) <= 2)
        hi = env.power[:, int(1000 / BIN_HZ) + 1 :]
        peak_db = 10 * np.log10(env.power[np.arange(len(env)), peak_bins])
        hi_db = 10 * np.log10(np.mean(hi, axis=1))
        assert np.all(peak_db - hi_db >= 20.0)

    def test_silence_returns_floor_envelope(self):
        w = Waveform(np.zeros(SR // 2), SR)
        env = estimate_envelope(w, estimate_f0(w))
        assert np.all(env.power == DEFAULT_CONFIG.floor_power)

    def test_two_tone_peaks(self):
        t = np.arange(SR) / SR
        w = Waveform(0.3 * np.sin(2 * np.pi * 300 * t) + 0.3 * np.sin(2 * np.pi * 3000 * t), SR)
        env = estimate_envelope(w, estimate_f0(w))
        mean_db = 10 * np.log10(np.mean(env.power, axis=0))
        maxima = [
            i for i in range(1, mean_db.size - 1)
            if mean_db[i] > mean_db[i - 1] and mean_db[i] >= mean_db[i + 1]
        ]
        for target_hz in (300.0, 3000.0):
            assert any(abs(i - target_hz / BIN_HZ) <= 2 for i in maxima)

    def test_frame_mismatch_rejected(self, sine_220):
        bad = F0Track(np.zeros(10))
        with pytest.raises(FrameMismatchError):
            estimate_envelope(sine_220, bad)

    def test_power_calibration_matches_frame_power(self, sine_220):
        env = estimate_envelope(sine_220, estimate_f0(sine_220))
        # amplitude 0.5 sine carries power 0.125
        assert np.median(env.frame_power()) == pytest.approx(0.125, rel=0.05)

    def test_all_bins_nonnegative(self, white_noise):
        env = estimate_envelope(white_noise, estimate_f0(white_noise))
        assert np.all(env.power >= 0)


class TestEstimateAperiodicity:
    def test_pure_sine_at_floor(self, sine_220):
        f0 = estimate_f0(sine_220)
        ap = estimate_aperiodicity(sine_220, f0)
        assert np.all(ap.ratio[f0.voiced] == 0.05)

    def test_white_noise_fully_aperiodic(self, white_noise):
        f0 = estimate_f0(white_noise)
        ap = estimate_aperiodicity(white_noise, f0)
        assert np.all(ap.ratio[~f0.voiced] == 1.0)

    def test_noisy_sine_above_pure_sine(self, sine_220):
        f0_clean = estimate_f0(sine_220)
        ap_clean = estimate_aperiodicity(sine_220, f0_clean)
        rng = np.random.default_rng(1)
        noise = rng.standard_normal(len(sine_220))
        noise *= np.sqrt(np.mean(sine_220.samples**2) / np.mean(noise**2))
        noisy = Waveform(np.clip(sine_220.samples + noise, -1, 1), SR)
        f0_noisy = estimate_f0(noisy)
        ap_noisy = estimate_aperiodicity(noisy, f0_noisy)
        assert np.median(ap_noisy.ratio[f0_noisy.voiced]) > np.median(
            ap_clean.ratio[f0_clean.voiced]
        )

    def test_voiced_cap(self, sine_220):
        f0 = estimate_f0(sine_220)
        ap = estimate_aperiodicity(sine_220, f0)
        assert np.all(ap.ratio[f0.voiced] <= 0.5)

    def test_frame_mismatch_rejected(self, sine_220):
        with pytest.raises(FrameMismatchError):
            estimate_aperiodicity(sine_220, F0Track(np.zeros(3)))


class TestSynthesize:
    def test_round_trip_f0(self):
        w, _ = harmonic_tone(150.0)
        frames = analyze(w)
        out = synthesize(frames, seed=3)
        re = estimate_f0(out)
        n = min(len(frames.f0), len(re))
        both = frames.f0.voiced[:n] & re.voiced[:n]
        err = np.abs(frames.f0.f0_hz[:n][both] - re.f0_hz[:n][both])
        assert np.median(err) < 2.0

    def test_empty_frames_give_empty_output(self):
        frames = VocoderFrames(
            F0Track(np.zeros(0)), SpectralFrames(np.zeros((0, 257))),
            AperiodicityFrames(np.zeros(0)),
        )
        assert len(synthesize(frames)) == 0

    def test_unvoiced_flat_envelope_rms(self):
        cfg = DEFAULT_CONFIG
        p0 = 0.01
        frames = VocoderFrames(
            F0Track(np.zeros(100)),
            SpectralFrames(np.full((100, cfg.n_bins), p0)),
            AperiodicityFrames(np.ones(100)),
            cfg,
        )
        out = synthesize(frames, seed=7)
        r = frame_rms(out.samples, cfg.hop())
        assert np.all(np.abs(r / np.sqrt(p0) - 1.0) < 0.10)

    def test_output_duration(self):
        w = sine(200.0, 0.73)
        frames = analyze(w)
        out = synthesize(frames)
        assert len(out) == frames.n_frames * 160

    def test_deterministic_per_seed(self, sine_220):
        frames = analyze(sine_220)
        a = synthesize(frames, seed=5)
        b = synthesize(frames, seed=5)
        c = synthesize(frames, seed=6)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_peak_bounded(self):
        cfg = DEFAULT_CONFIG
        frames = VocoderFrames(
            F0Track(np.full(50, 120.0)),
            SpectralFrames(np.full((50, cfg.n_bins), 10.0)),
            AperiodicityFrames(np.full(50, 0.05)),
            cfg,
        )
        out = synthesize(frames, seed=0)
        assert np.max(np.abs(out.samples)) <= 1.0


class TestInvariants:
    def test_round_trip_grid(self):
        # harmonic fixtures spanning the speech F0 range, vibrato +-5 Hz
        for base in (100.0, 180.0, 300.0):
            w, _ = harmonic_tone(base)
            frames = analyze(w)
            out = synthesize(frames, seed=int(base))
            re = estimate_f0(out)
            n = min(len(frames.f0), len(re))
            both = frames.f0.voiced[:n] & re.voiced[:n]
            err = np.abs(frames.f0.f0_hz[:n][both] - re.f0_hz[:n][both])
            agreement = np.mean(frames.f0.voiced[:n] == re.voiced[:n])
            assert np.median(err) < 2.0, base
            assert agreement >= 0.95, base

    def test_envelope_energy_consistency(self):
        # randomized unvoiced envelope sequences: frame RMS^2 tracks envelope power
        cfg = DEFAULT_CONFIG
        rng = np.random.default_rng(42)
        shape = np.abs(rng.standard_normal((150, cfg.n_bins))) ** 2 + 0.1
        power = 10 ** rng.uniform(-4, -1, size=(150, 1)) * shape / shape.mean(
            axis=1, keepdims=True
        )
        frames = VocoderFrames(
            F0Track(np.zeros(150)), SpectralFrames(power),
            AperiodicityFrames(np.ones(150)), cfg,
        )
        out = synthesize(frames, seed=1)
        r = frame_rms(out.samples, cfg.hop())
        corr = np.corrcoef(r**2, frames.envelope.frame_power())[0, 1]
        assert corr > 0.9

    def test_frame_count_rule(self):
        assert frame_count(0) == 0
        assert frame_count(160) == 1
        assert frame_count(161) == 2
        assert frame_count(16000) == 100

    def test_twosided_mean_flat(self):
        assert twosided_mean(np.full((1, 257), 3.0))[0] == pytest.approx(3.0)

    def test_bundle_length_mismatch_rejected(self):
        with pytest.raises(FrameMismatchError):
            VocoderFrames(
                F0Track(np.zeros(5)), SpectralFrames(np.zeros((4, 257))),
                AperiodicityFrames(np.zeros(5)),
            )
