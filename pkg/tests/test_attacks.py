import numpy as np
import pytest

from vdd_robust.attacks import (
    Fgsm,
    Pgd,
    PitchShift,
    Tone,
    fgsm,
    perturbation_linf,
    pgd,
    pitch_shift,
    tone_attack,
)
from vdd_robust.audio import AudioClip, synth_sine
from vdd_robust.cnn import cnn_forward, cross_entropy, init_cnn


def model_loss(model, x, label):
    logits, _ = cnn_forward(model, x)
    return float(cross_entropy(logits[None], np.array([label]))[0])


def logistic_toy_model():
    """CNN that reduces to a logistic model in the single input entry x[0,0,0].

    Convolutions are 1x1 pass-throughs, the other three entries are large and
    negative, so the max pool forwards exactly x[0,0,0]; the dense layers map
    it to logits (2x, -2x).
    """
    model = init_cnn((1, 2, 2), conv_channels=(1, 1), kernel_size=1, hidden_units=(1,))
    model.conv_weights[0][...] = 1.0
    model.conv_weights[1][...] = 1.0
    model.conv_biases[0][...] = 0.0
    model.conv_biases[1][...] = 0.0
    model.fc_weights[0][...] = 1.0
    model.fc_biases[0][...] = 0.0
    model.fc_weights[1][...] = [[2.0], [-2.0]]
    model.fc_biases[1][...] = 0.0
    return model


def toy_input(x0=0.5):
    x = np.full((1, 2, 2), -10.0)
    x[0, 0, 0] = x0
    return x


def random_small_model(rng):
    model = init_cnn(
        (1, 6, 7), conv_channels=(2, 2), kernel_size=2, hidden_units=(4,), rng=rng
    )
    for p in model.parameters():
        p += 0.05 * rng.standard_normal(p.shape)
    return model


class TestFgsm:
    def test_zero_epsilon_is_identity(self):
        rng = np.random.default_rng(0)
        model = random_small_model(rng)
        x = rng.uniform(size=(1, 6, 7))
        np.testing.assert_array_equal(fgsm(model, x, 0, Fgsm(0.0), (0.0, 1.0)), x)

    def test_step_is_exactly_epsilon_where_unclamped(self):
        rng = np.random.default_rng(1)
        model = random_small_model(rng)
        x = rng.uniform(0.3, 0.7, size=(1, 6, 7))
        eps = 0.05
        adv = fgsm(model, x, 1, Fgsm(eps), (0.0, 1.0))
        diff = np.abs(adv - x)
        assert np.all(diff <= eps + 1e-15)
        from vdd_robust.cnn import input_gradient

        grad = input_gradient(model, x, 1)
        active = np.abs(grad) > 0
        # interior points with nonzero gradient move by exactly epsilon
        np.testing.assert_allclose(diff[active], eps, atol=1e-15)

    def test_melspec_box_respected(self):
        rng = np.random.default_rng(2)
        model = random_small_model(rng)
        x = rng.uniform(size=(1, 6, 7))
        adv = fgsm(model, x, 0, Fgsm(0.5), (0.0, 1.0))
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_ascends_loss_on_logistic_toy(self):
        # brute-force sweep over the 1-D input confirms the ascent direction
        model = logistic_toy_model()
        x = toy_input(0.5)
        eps = 0.1
        base = model_loss(model, x, 0)
        adv = fgsm(model, x, 0, Fgsm(eps))
        assert model_loss(model, adv, 0) >= base
        sweep = [
            model_loss(model, toy_input(0.5 + d), 0)
            for d in np.linspace(-eps, eps, 41)
        ]
        assert model_loss(model, adv, 0) == pytest.approx(max(sweep), abs=1e-9)

    def test_shape_mismatch(self):
        model = logistic_toy_model()
        with pytest.raises(ValueError):
            fgsm(model, np.zeros((1, 3, 3)), 0, Fgsm(0.1))


class TestPgd:
    def test_projection_always_within_ball(self):
        rng = np.random.default_rng(3)
        model = random_small_model(rng)
        for _ in range(10):
            x = rng.uniform(size=(1, 6, 7))
            eps = float(rng.uniform(0.01, 0.3))
            cfg = Pgd(epsilon=eps, iterations=5, random_start=True)
            adv = pgd(model, x, 0, cfg, (0.0, 1.0), seed=7)
            assert perturbation_linf(adv, x) <= eps + 1e-12
            assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_single_step_reduces_to_fgsm_bit_exactly(self):
        rng = np.random.default_rng(4)
        model = random_small_model(rng)
        x = rng.uniform(size=(1, 6, 7))
        eps = 0.07
        a = fgsm(model, x, 1, Fgsm(eps), (0.0, 1.0))
        b = pgd(model, x, 1, Pgd(eps, step_size=eps, iterations=1), (0.0, 1.0))
        np.testing.assert_array_equal(a, b)

    def test_beats_or_matches_fgsm_on_toy(self):
        model = logistic_toy_model()
        x = toy_input(0.5)
        eps = 0.1
        fgsm_loss = model_loss(model, fgsm(model, x, 0, Fgsm(eps)), 0)
        pgd_loss = model_loss(
            model, pgd(model, x, 0, Pgd(eps, iterations=10)), 0
        )
        # oracle: brute-force maximization over the 1-D interval
        best = max(
            model_loss(model, toy_input(0.5 + d), 0)
            for d in np.linspace(-eps, eps, 201)
        )
        assert pgd_loss >= fgsm_loss - 1e-12
        assert pgd_loss <= best + 1e-9

    def test_random_start_seeded(self):
        rng = np.random.default_rng(5)
        model = random_small_model(rng)
        x = rng.uniform(size=(1, 6, 7))
        cfg = Pgd(0.1, iterations=3, random_start=True)
        a = pgd(model, x, 0, cfg, (0.0, 1.0), seed=11)
        b = pgd(model, x, 0, cfg, (0.0, 1.0), seed=11)
        np.testing.assert_array_equal(a, b)


class TestToneAttack:
    def test_zero_amplitude_unchanged(self):
        clip = synth_sine(200.0, 0.5, 0.0, 0.5, 16000)
        assert tone_attack(clip, Tone(100.0, 0.0)) is clip

    def test_injected_tone_dominates_quiet_clip(self):
        quiet = synth_sine(400.0, 0.05, 0.0, 1.0, 16000)
        attacked = tone_attack(quiet, Tone(100.0, 0.8))
        spec = np.abs(np.fft.rfft(attacked.samples))
        peak_hz = np.argmax(spec) * 16000 / len(attacked)
        assert abs(peak_hz - 100.0) <= 16000 / len(attacked)

    def test_never_exceeds_full_scale(self):
        loud = synth_sine(300.0, 0.95, 0.0, 0.5, 16000)
        attacked = tone_attack(loud, Tone(100.0, 0.9))
        assert np.max(np.abs(attacked.samples)) <= 1.0 + 1e-12

    def test_difference_is_the_sine_when_no_renormalization(self):
        clip = synth_sine(400.0, 0.3, 0.0, 0.5, 16000)
        cfg = Tone(125.0, 0.2, phase_rad=0.4)
        attacked = tone_attack(clip, cfg)
        tone = synth_sine(125.0, 0.2, 0.4, 0.5, 16000)
        np.testing.assert_allclose(
            attacked.samples - clip.samples, tone.samples, atol=1e-12
        )

    def test_nyquist_guard(self):
        clip = synth_sine(200.0, 0.5, 0.0, 0.5, 16000)
        with pytest.raises(ValueError):
            tone_attack(clip, Tone(9000.0, 0.4))


def dominant_hz(samples, rate, n_fft=4096):
    spec = np.abs(np.fft.rfft(samples, n=n_fft))
    return np.argmax(spec) * rate / n_fft


class TestPitchShift:
    def test_zero_steps_roundtrip(self):
        clip = synth_sine(440.0, 0.8, 0.0, 1.0, 16000)
        out = pitch_shift(clip, PitchShift(0))
        assert len(out) == len(clip)
        # spectral correlation with the input stays essentially perfect
        a = np.abs(np.fft.rfft(clip.samples))
        b = np.abs(np.fft.rfft(out.samples))
        corr = np.corrcoef(a, b)[0, 1]
        assert corr > 0.99

    def test_five_steps_down(self):
        clip = synth_sine(440.0, 0.8, 0.0, 1.0, 16000)
        out = pitch_shift(clip, PitchShift(-5))
        expected = 440.0 * 2 ** (-5 / 12)  # 329.63 Hz
        bin_hz = 16000 / 4096
        assert abs(dominant_hz(out.samples, 16000) - expected) <= 2 * bin_hz
        assert abs(len(out) - len(clip)) <= 0.01 * len(clip)

    def test_octave_down_halves_frequency(self):
        clip = synth_sine(440.0, 0.8, 0.0, 1.0, 16000)
        out = pitch_shift(clip, PitchShift(-12))
        bin_hz = 16000 / 4096
        assert abs(dominant_hz(out.samples, 16000) - 220.0) <= 2 * bin_hz

    def test_pitch_up(self):
        clip = synth_sine(300.0, 0.8, 0.0, 1.0, 16000)
        out = pitch_shift(clip, PitchShift(+12))
        bin_hz = 16000 / 4096
        assert abs(dominant_hz(out.samples, 16000) - 600.0) <= 2 * bin_hz

    def test_duration_and_rms_preserved_on_sustained_tone(self):
        clip = synth_sine(220.0, 0.6, 0.0, 1.5, 25000)
        out = pitch_shift(clip, PitchShift(-5))
        assert abs(len(out) - len(clip)) <= 0.01 * len(clip)
        rms_in = np.sqrt(np.mean(clip.samples**2))
        rms_out = np.sqrt(np.mean(out.samples**2))
        assert abs(rms_out - rms_in) <= 0.2 * rms_in

    def test_too_short_clip(self):
        clip = AudioClip(np.ones(512), 16000)
        with pytest.raises(ValueError):
            pitch_shift(clip, PitchShift(-5))


class TestPerturbationLinf:
    def test_identical_is_zero(self):
        x = np.ones((3, 4))
        assert perturbation_linf(x, x) == 0.0

    def test_single_entry_difference(self):
        x = np.zeros(5)
        y = x.copy()
        y[2] = 0.3
        assert perturbation_linf(x, y) == pytest.approx(0.3)

    def test_symmetric(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        assert perturbation_linf(a, b) == perturbation_linf(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            perturbation_linf(np.zeros(3), np.zeros(4))


class TestContainmentProperty:
    def test_random_models_inputs_epsilons(self):
        rng = np.random.default_rng(9)
        model = random_small_model(rng)
        for _ in range(50):
            x = rng.uniform(size=(1, 6, 7))
            eps = float(rng.uniform(1e-3, 0.5))
            label = int(rng.integers(2))
            adv_f = fgsm(model, x, label, Fgsm(eps), (0.0, 1.0))
            assert perturbation_linf(adv_f, x) <= eps + 1e-12
            adv_p = pgd(model, x, label, Pgd(eps, iterations=3), (0.0, 1.0))
            assert perturbation_linf(adv_p, x) <= eps + 1e-12
            for adv in (adv_f, adv_p):
                assert adv.min() >= 0.0 and adv.max() <= 1.0
