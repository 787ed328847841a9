import numpy as np
import pytest
from scipy.signal import welch

from prosokit.audio import Waveform, amp_to_db, frame_rms, intensity_contour, rms
from prosokit.dialog import WordToken
from prosokit.manipulate import (
    CONDITIONS,
    ConditionError,
    ConditionSpec,
    apply_condition,
    condition_from_name,
    flatten_intensity,
    flatten_pitch,
    loop_to_length,
    make_babble,
    mix_at_snr,
    pink_noise,
    plan_mixed_training,
    prosody_matched_noise,
    snr_gain,
    snr_grid,
)
from prosokit.vocoder import DEFAULT_CONFIG, analyze, estimate_f0, synthesize

from conftest import SR, sine, speech_like


def log_envelope_correlation(frames_a, frames_b) -> float:
    """Mean per-frame Pearson correlation between two log envelopes."""
    n = min(len(frames_a.envelope.power), len(frames_b.envelope.power))
    la = np.log(np.maximum(frames_a.envelope.power[:n], 1e-12))
    lb = np.log(np.maximum(frames_b.envelope.power[:n], 1e-12))
    return float(np.mean([np.corrcoef(la[i], lb[i])[0, 1] for i in range(n)]))


class TestConditionSpec:
    def test_seven_matrix_cells_expressible(self):
        # (lexical, pitch, intensity) rows of the condition matrix
        cells = [
            ("preserved", "preserved", "preserved"),
            ("removed", "flattened", "preserved"),
            ("removed", "preserved", "flattened"),
            ("removed", "preserved", "preserved"),
            ("preserved", "flattened", "preserved"),
            ("preserved", "preserved", "flattened"),
            ("preserved", "flattened", "flattened"),
        ]
        for lexical, pitch, intensity in cells:
            noise_kind = "prosody_matched" if lexical == "removed" else "none"
            spec = ConditionSpec(lexical, pitch, intensity, noise_kind)
            assert spec.lexical == lexical

    def test_lexical_removed_requires_prosody_matched(self):
        with pytest.raises(ConditionError):
            ConditionSpec(lexical="removed", noise_kind="none")
        with pytest.raises(ConditionError):
            ConditionSpec(lexical="preserved", noise_kind="prosody_matched")

    def test_additive_noise_requires_snr(self):
        with pytest.raises(ConditionError):
            ConditionSpec(noise_kind="babble")
        ConditionSpec(noise_kind="babble", snr_db=0.0)

    def test_snr_without_noise_rejected(self):
        with pytest.raises(ConditionError):
            ConditionSpec(snr_db=5.0)

    def test_all_named_conditions_construct(self):
        for name in CONDITIONS:
            snr = 0.0 if name in ("babble", "speech-noise", "music") else None
            spec = condition_from_name(name, snr)
            assert spec.is_clean == (name == "clean")

    def test_unknown_name_rejected(self):
        with pytest.raises(ConditionError):
            condition_from_name("reverb")


class TestSnrGrid:
    def test_paper_grid_has_nine_levels(self):
        grid = snr_grid()
        assert grid == [-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0]


class TestFlattenPitch:
    def test_mean_of_voiced(self):
        frames = analyze(sine(220.0, 0.4))
        frames.f0.f0_hz = np.array([100.0, 0.0, 120.0, 140.0] * 10)
        frames.envelope.power = frames.envelope.power[:40]
        frames.aperiodicity.ratio = frames.aperiodicity.ratio[:40]
        flat = flatten_pitch(frames)
        assert np.all(flat.f0.f0_hz[flat.f0.voiced] == 120.0)
        assert np.all(flat.f0.f0_hz[1::4] == 0.0)

    def test_constant_track_fixed_point(self):
        frames = analyze(sine(200.0, 0.4))
        flat = flatten_pitch(flatten_pitch(frames))
        again = flatten_pitch(flat)
        assert np.array_equal(flat.f0.f0_hz, again.f0.f0_hz)

    def test_all_unvoiced_unchanged(self):
        frames = analyze(Waveform(np.zeros(SR // 2), SR))
        flat = flatten_pitch(frames)
        assert np.array_equal(flat.f0.f0_hz, frames.f0.f0_hz)

    def test_envelope_untouched(self):
        frames = analyze(sine(180.0, 0.4))
        flat = flatten_pitch(frames)
        assert np.array_equal(flat.envelope.power, frames.envelope.power)
        assert np.array_equal(flat.aperiodicity.ratio, frames.aperiodicity.ratio)


class TestFlattenIntensity:
    def test_two_segments_meet_at_mean(self):
        t = np.arange(SR) / SR
        tone = np.sqrt(2) * np.sin(2 * np.pi * 220 * t)
        x = np.concatenate([0.1 * tone, np.zeros(SR), 0.0316227766 * tone])
        out = flatten_intensity(Waveform(x, SR))
        levels = amp_to_db(frame_rms(out.samples, 160))
        # interior frames of each segment settle at the -25 dB mean
        assert abs(np.median(levels[10:90]) - (-25.0)) < 0.5
        assert abs(np.median(levels[210:290]) - (-25.0)) < 0.5
        active = levels > -60
        assert np.std(levels[active]) < 1.5

    def test_already_flat_is_near_identity(self):
        w = sine(220.0, 1.0, amplitude=0.2)
        out = flatten_intensity(w)
        nz = w.samples != 0
        gains = out.samples[nz] / w.samples[nz]
        assert np.max(np.abs(gains - 1.0)) < 0.05

    def test_silence_below_floor_bit_unchanged(self):
        t = np.arange(SR) / SR
        x = np.concatenate([np.zeros(SR // 2), 0.2 * np.sin(2 * np.pi * 220 * t)])
        out = flatten_intensity(Waveform(x, SR))
        assert np.array_equal(out.samples[: SR // 2], x[: SR // 2])

    def test_silent_input_identity(self):
        w = Waveform(np.zeros(SR // 4), SR)
        out = flatten_intensity(w)
        assert np.array_equal(out.samples, w.samples)


class TestPinkNoise:
    def test_psd_slope(self):
        w = pink_noise(10.0, SR, seed=5)
        f, psd = welch(w.samples, fs=SR, nperseg=4096)
        mask = (f >= 100) & (f <= 6000)
        design = np.vstack([np.ones(mask.sum()), np.log10(f[mask])]).T
        coef, *_ = np.linalg.lstsq(design, 10 * np.log10(psd[mask]), rcond=None)
        assert -11.5 <= coef[1] <= -8.5

    def test_deterministic(self):
        a = pink_noise(1.0, SR, seed=3)
        b = pink_noise(1.0, SR, seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_rms_normalized(self):
        w = pink_noise(2.0, SR, seed=9)
        assert abs(rms(w.samples) - 1.0) <= 1e-3

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            pink_noise(0.0, SR, 0)


class TestMakeBabble:
    def test_single_source_is_normalized_excerpt(self):
        rng = np.random.default_rng(2)
        src = Waveform(0.1 * rng.standard_normal(2 * SR).clip(-1, 1), SR)
        out = make_babble([src], 1, 1.0, seed=4)
        offset = np.random.default_rng(4).integers(0, len(src))
        # reproduce the expected excerpt by the documented construction
        tiled = np.tile(src.samples, int(np.ceil((offset + SR) / len(src))))
        excerpt = tiled[offset : offset + SR]
        expected = excerpt / rms(excerpt)
        assert np.allclose(out.samples, expected, atol=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        sources = [Waveform(rng.standard_normal(SR).clip(-1, 1) * 0.2, SR) for _ in range(6)]
        a = make_babble(sources, 4, 1.5, seed=11)
        b = make_babble(sources, 4, 1.5, seed=11)
        assert np.array_equal(a.samples, b.samples)

    def test_six_tone_peaks_present(self):
        freqs = [250, 600, 1000, 1700, 2500, 3600]
        sources = [sine(f, 2.0, amplitude=0.4) for f in freqs]
        out = make_babble(sources, 6, 2.0, seed=1)
        f, psd = welch(out.samples, fs=SR, nperseg=4096)
        floor = np.median(psd)
        for target in freqs:
            window = psd[(f > target - 40) & (f < target + 40)]
            assert window.max() > 100 * floor, target

    def test_insufficient_sources_rejected(self):
        with pytest.raises(ValueError):
            make_babble([sine(200.0)], 2, 1.0, seed=0)


class TestMixAtSnr:
    def make_pair(self):
        speech = sine(220.0, 1.0, amplitude=0.1 * np.sqrt(2))  # rms 0.1
        noise = pink_noise(1.0, SR, seed=1)
        return speech, noise

    def test_equal_power_unity_gain(self):
        speech, noise = self.make_pair()
        matched = loop_to_length(noise, len(speech))
        mask = np.ones(len(speech), dtype=bool)
        g = snr_gain(speech, matched, 0.0, mask)
        assert g * rms(matched) == pytest.approx(rms(speech.samples), rel=1e-9)

    def test_plus_20_db_gain_ratio(self):
        speech, noise = self.make_pair()
        matched = loop_to_length(noise, len(speech))
        mask = np.ones(len(speech), dtype=bool)
        g0 = snr_gain(speech, matched, 0.0, mask)
        assert snr_gain(speech, matched, 20.0, mask) / g0 == pytest.approx(0.1)

    def test_minus_10_db_gain_ratio(self):
        speech, noise = self.make_pair()
        matched = loop_to_length(noise, len(speech))
        mask = np.ones(len(speech), dtype=bool)
        g0 = snr_gain(speech, matched, 0.0, mask)
        assert snr_gain(speech, matched, -10.0, mask) / g0 == pytest.approx(3.1623, rel=1e-4)

    def test_realized_snr_within_half_db_across_grid(self):
        speech = speech_like(0)
        noise = pink_noise(speech.duration_s, SR, seed=2)
        hop = DEFAULT_CONFIG.hop()
        active = amp_to_db(frame_rms(speech.samples, hop)) > -60
        mask = np.repeat(active, hop)[: len(speech)]
        matched = loop_to_length(noise, len(speech))
        for target in snr_grid():
            g = snr_gain(speech, matched, target, mask)
            realized = 20 * np.log10(
                rms(speech.samples[mask]) / rms(g * matched[mask])
            )
            assert abs(realized - target) <= 0.5, target

    def test_silent_speech_rejected(self):
        silent = Waveform(np.zeros(SR), SR)
        with pytest.raises(ValueError):
            mix_at_snr(silent, pink_noise(1.0, SR, 0), 0.0)

    def test_output_peak_safe(self):
        speech = sine(220.0, 0.5, amplitude=0.9)
        out = mix_at_snr(speech, pink_noise(0.5, SR, 3), -10.0)
        assert np.max(np.abs(out.samples)) <= 1.0


@pytest.fixture(scope="module")
def fixture_pair():
    w = speech_like(3)
    return w, analyze(w)


class TestProsodyMatchedNoise:
    def test_pitch_contour_preserved(self, fixture_pair):
        w, frames = fixture_pair
        out = prosody_matched_noise(frames, w, "match_both", seed=9)
        re = estimate_f0(out)
        n = min(len(frames.f0), len(re))
        both = frames.f0.voiced[:n] & re.voiced[:n]
        rmse = np.sqrt(np.mean((frames.f0.f0_hz[:n][both] - re.f0_hz[:n][both]) ** 2))
        assert rmse < 5.0

    def test_intensity_contour_preserved(self, fixture_pair):
        w, frames = fixture_pair
        out = prosody_matched_noise(frames, w, "match_both", seed=9)
        n = frames.n_frames
        a = intensity_contour(w.samples, 160)[:n]
        b = intensity_contour(out.samples, 160)[:n]
        assert np.corrcoef(a, b)[0, 1] > 0.95

    def test_lexical_content_removed(self, fixture_pair):
        w, frames = fixture_pair
        out = prosody_matched_noise(frames, w, "match_both", seed=9)
        corr = log_envelope_correlation(frames, analyze(out))
        assert corr < 0.3

    def test_flatten_only_keeps_envelope(self, fixture_pair):
        w, frames = fixture_pair
        resynth = synthesize(flatten_pitch(frames), seed=9)
        corr = log_envelope_correlation(frames, analyze(resynth))
        assert corr > 0.8

    def test_silent_input_stays_silent(self):
        w = Waveform(np.zeros(SR), SR)
        out = prosody_matched_noise(analyze(w), w, "match_both", seed=0)
        assert amp_to_db(rms(out.samples)) < -60

    def test_length_mismatch_rejected(self, fixture_pair):
        w, frames = fixture_pair
        short = Waveform(w.samples[: len(w) // 2], SR)
        with pytest.raises(Exception):
            prosody_matched_noise(frames, short)

    def test_unknown_variant_rejected(self, fixture_pair):
        w, frames = fixture_pair
        with pytest.raises(ValueError):
            prosody_matched_noise(frames, w, "flat_everything")


class TestApplyCondition:
    def words_for(self, duration_s):
        return [
            WordToken("a", 0.1, duration_s / 2, 0),
            WordToken("b", 0.1, duration_s / 2, 1),
        ]

    def test_clean_is_bit_identical(self):
        channels = [speech_like(0, 1.0), speech_like(1, 1.0)]
        out = apply_condition(channels, None, condition_from_name("clean"))
        for a, b in zip(out, channels):
            assert np.array_equal(a.samples, b.samples)

    def test_prosody_matched_route(self):
        w = speech_like(4)
        frames = analyze(w)
        out = apply_condition([w], None, condition_from_name("noise-pi", seed=2))[0]
        re = analyze(out)
        n = min(frames.n_frames, re.n_frames)
        both = frames.f0.voiced[:n] & re.f0.voiced[:n]
        rmse = np.sqrt(np.mean((frames.f0.f0_hz[:n][both] - re.f0.f0_hz[:n][both]) ** 2))
        assert rmse < 5.0
        assert log_envelope_correlation(frames, re) < 0.3

    def test_flat_both_route(self):
        w = speech_like(5)
        frames = analyze(w)
        out = apply_condition([w], None, condition_from_name("flat-pi", seed=2))[0]
        re_f0 = estimate_f0(out)
        orig_std = np.std(frames.f0.f0_hz[frames.f0.voiced])
        assert np.std(re_f0.f0_hz[re_f0.voiced]) < 0.1 * orig_std
        levels = amp_to_db(frame_rms(out.samples, 160))
        assert np.std(levels[levels > -60]) < 1.5

    def test_additive_noise_requires_waveform(self):
        w = speech_like(6, 1.0)
        with pytest.raises(ConditionError):
            apply_condition([w], None, condition_from_name("babble", 0.0))

    def test_babble_route_mixes(self):
        w = speech_like(6, 1.0)
        noise = pink_noise(1.0, SR, seed=8)
        out = apply_condition([w], None, condition_from_name("babble", 0.0), noise=noise)[0]
        assert len(out) == len(w)
        assert not np.array_equal(out.samples, w.samples)


class TestPlanMixedTraining:
    def test_hundred_sessions_quarter_manipulated(self):
        plan = plan_mixed_training([f"s{i:03d}" for i in range(100)], 0.75, seed=5)
        assert plan.n_manipulated() == 25
        for a in plan.assignments:
            if a.condition != "clean":
                assert a.snr_db == 0.0

    def test_boundary_fractions_rejected(self):
        ids = ["a", "b"]
        with pytest.raises(ValueError):
            plan_mixed_training(ids, 1.0)
        with pytest.raises(ValueError):
            plan_mixed_training(ids, 0.0)
        with pytest.raises(ValueError):
            plan_mixed_training([], 0.75)

    def test_deterministic_and_order_independent(self):
        ids = [f"s{i}" for i in range(40)]
        a = plan_mixed_training(ids, 0.75, seed=3)
        b = plan_mixed_training(list(reversed(ids)), 0.75, seed=3)
        assert a == b

    def test_csv_round_shape(self, tmp_path):
        plan = plan_mixed_training(["x", "y", "z", "w"], 0.75, seed=1)
        path = tmp_path / "plan.csv"
        plan.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "session_id,condition,snr_db,seed"
        assert len(lines) == 5
