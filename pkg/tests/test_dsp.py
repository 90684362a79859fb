import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcs_enhance.dsp import (
    DECOMPRESS_CAP,
    Spectrogram,
    StftConfig,
    Waveform,
    compress,
    consistency_project,
    decompose,
    decompress,
    istft,
    istft_vjp,
    recompose,
    stft,
    stft_vjp,
)

from conftest import SR, tone

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def random_spec(rng, cfg, length):
    shape = (cfg.n_frames(length), cfg.n_bins)
    return Spectrogram(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), cfg, length)


class TestTypes:
    def test_waveform_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Waveform(np.array([0.0, np.nan]))

    def test_waveform_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(4), 0)

    def test_waveform_is_float64(self):
        w = Waveform(np.array([1, 2], dtype=np.int16), 8000)
        assert w.samples.dtype == np.float64
        assert w.duration == pytest.approx(2 / 8000)

    @pytest.mark.parametrize("kwargs", [
        {"n_fft": 401},
        {"win_length": 512},
        {"hop": 0},
        {"hop": 401},
        {"window": "no-such-window"},
        {"n_fft": 400, "win_length": 400, "hop": 400, "window": "hann"},  # squared-window sum hits zero
    ])
    def test_config_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            StftConfig(**kwargs)

    def test_default_bins(self):
        # 201-dim spectral features for a 400-point FFT
        assert StftConfig().n_bins == 201

    def test_spectrogram_rejects_wrong_frame_count(self, cfg):
        with pytest.raises(ValueError):
            Spectrogram(np.zeros((3, cfg.n_bins), complex), cfg, 1600)

    def test_spectrogram_rejects_nonfinite(self, cfg):
        bins = np.zeros((cfg.n_frames(800), cfg.n_bins), complex)
        bins[0, 0] = np.inf
        with pytest.raises(ValueError):
            Spectrogram(bins, cfg, 800)


class TestStft:
    def test_zero_waveform(self, cfg):
        s = stft(np.zeros(1600), cfg)
        assert s.shape == (1 + 1600 // 160, 201)
        assert not np.any(s.bins)

    def test_one_second_shape(self, cfg):
        s = stft(tone(1000), cfg)
        assert s.shape == (101, 201)
        assert s.original_length == SR

    def test_frame_count_matches_centered_padding(self, cfg):
        # one frame centred on every hop-th sample of the signal, the first at sample 0
        for length in (1600, 1601, 4000, 16000):
            assert stft(np.ones(length), cfg).shape[0] == 1 + length // cfg.hop

    def test_tone_peaks_at_bin_25(self, cfg):
        s = stft(tone(1000), cfg)
        frame = 50
        assert np.argmax(np.abs(s.bins[frame])) == 25
        # direct DFT oracle for the same windowed frame
        x = tone(1000)
        start = frame * cfg.hop - cfg.pad
        seg = x[start:start + cfg.n_fft]
        n = np.arange(cfg.n_fft)
        win = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.n_fft)
        k = np.arange(cfg.n_bins)[:, None]
        dft = (seg * win * np.exp(-2j * np.pi * k * n / cfg.n_fft)).sum(axis=1)
        np.testing.assert_allclose(s.bins[frame], dft, atol=1e-9)

    def test_empty_rejected(self, cfg):
        with pytest.raises(ValueError):
            stft(np.zeros(0), cfg)

    def test_accepts_waveform_samples(self, cfg):
        w = Waveform(tone(440, 0.2))
        np.testing.assert_array_equal(stft(w.samples, cfg).bins, stft(tone(440, 0.2), cfg).bins)

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 2000))
        lhs = stft(a * x + b * y).bins
        rhs = a * stft(x).bins + b * stft(y).bins
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)

    @given(arrays(np.float64, st.integers(800, 3000), elements=finite))
    def test_energy_scales_quadratically(self, x):
        e1 = np.sum(np.abs(stft(x).bins) ** 2)
        e2 = np.sum(np.abs(stft(2 * x).bins) ** 2)
        assert e2 == pytest.approx(4 * e1, rel=1e-12, abs=1e-300)


class TestIstft:
    @given(arrays(np.float64, st.integers(800, 4000), elements=finite))
    def test_perfect_reconstruction(self, x):
        y = istft(stft(x))
        assert y.shape == x.shape
        assert np.max(np.abs(y - x)) < 1e-6

    def test_reconstruction_float32_tolerance(self, rng):
        x = rng.uniform(-1, 1, SR).astype(np.float32)
        y = istft(stft(x)).astype(np.float32)
        assert np.max(np.abs(y - x)) < 1e-3

    def test_other_configs_reconstruct(self, rng):
        x = rng.standard_normal(5000)
        for cfg in (StftConfig(512, 128, 512), StftConfig(256, 64, 200), StftConfig(400, 100, 400, "hamming")):
            np.testing.assert_allclose(istft(stft(x, cfg)), x, atol=1e-9)

    def test_zero_spectrogram(self, cfg):
        s = Spectrogram(np.zeros((cfg.n_frames(1600), cfg.n_bins), complex), cfg, 1600)
        y = istft(s)
        assert y.shape == (1600,)
        assert not np.any(y)

    def test_random_bins_are_inconsistent(self, rng, cfg):
        s = random_spec(rng, cfg, 3200)
        gap = np.linalg.norm(stft(istft(s), cfg).bins - s.bins)
        assert gap > 0.1 * np.linalg.norm(s.bins)


class TestAdjoints:
    """<J v, u> == <v, J^T u> for the hand-written vector-Jacobian products."""

    @pytest.mark.parametrize("length", [1000, 1600, 1759])
    def test_stft_vjp(self, rng, cfg, length):
        x = rng.standard_normal(length)
        g = rng.standard_normal((cfg.n_frames(length), cfg.n_bins)) + 1j * rng.standard_normal(
            (cfg.n_frames(length), cfg.n_bins))
        lhs = np.sum(np.real(np.conj(g) * stft(x, cfg).bins))
        rhs = x @ stft_vjp(g, cfg, length)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.parametrize("length", [1000, 1600, 1759])
    def test_istft_vjp(self, rng, cfg, length):
        s = random_spec(rng, cfg, length)
        u = rng.standard_normal(length)
        lhs = u @ istft(s)
        rhs = np.sum(np.real(np.conj(istft_vjp(u, cfg, length)) * s.bins))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_shape_checks(self, cfg):
        with pytest.raises(ValueError):
            stft_vjp(np.zeros((2, 201)), cfg, 1600)
        with pytest.raises(ValueError):
            istft_vjp(np.zeros(5), cfg, 1600)


class TestDecompose:
    def test_pythagorean(self):
        mag, phase = decompose(np.array([[3 + 4j]]))
        assert mag[0, 0] == 5.0
        assert phase[0, 0] == np.arctan2(4, 3)

    def test_zero_bin_phase(self):
        _, phase = decompose(np.array([[0j, -0.0 - 0j]]))
        assert np.all(phase == 0)

    def test_negative_real_axis_is_pi(self):
        _, phase = decompose(np.array([[complex(-1.0, -0.0)]]))
        assert phase[0, 0] == np.pi

    @given(st.integers(0, 2**16))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
        mag, phase = decompose(z)
        assert np.all(mag >= 0)
        assert np.all((phase > -np.pi) & (phase <= np.pi))
        np.testing.assert_allclose(recompose(mag, phase), z, rtol=1e-12, atol=0)

    def test_spectrogram_input(self, cfg):
        s = stft(tone(500, 0.1), cfg)
        mag, _ = decompose(s)
        np.testing.assert_array_equal(mag, np.abs(s.bins))


class TestRecompose:
    def test_unit_magnitude_zero_phase(self):
        np.testing.assert_array_equal(recompose(np.ones((3, 4)), np.zeros((3, 4))), np.ones((3, 4)))

    def test_zero_magnitude(self, rng):
        out = recompose(np.zeros((3, 4)), rng.uniform(-np.pi, np.pi, (3, 4)))
        assert not np.any(out)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            recompose(np.ones((2, 3)), np.ones((3, 2)))


class TestCompression:
    def test_anchor_values(self):
        assert compress(0.0) == 0.0
        assert compress(np.e - 1) == pytest.approx(1.0, abs=1e-15)
        assert decompress(0.0) == 0.0
        assert decompress(1.0) == pytest.approx(np.e - 1, abs=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            compress(np.array([1.0, -1e-12]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            decompress(np.array([np.nan]))

    def test_overflow_guard(self):
        decompress(np.array([DECOMPRESS_CAP]))
        with pytest.raises(OverflowError):
            decompress(np.array([DECOMPRESS_CAP + 1e-6]))

    def test_inverse_on_grid(self):
        x = np.linspace(0, 100, 100001)
        np.testing.assert_allclose(decompress(compress(x)), x, rtol=1e-9, atol=1e-9)
        y = np.linspace(0, 10, 100001)
        np.testing.assert_allclose(compress(decompress(y)), y, rtol=1e-9, atol=1e-9)

    @given(st.floats(0, DECOMPRESS_CAP))
    def test_inverse_property(self, v):
        assert compress(decompress(v)) == pytest.approx(v, rel=1e-9, abs=1e-9)

    @given(st.floats(0, 1e6))
    def test_compress_nonnegative(self, v):
        assert compress(v) >= 0


class TestConsistency:
    def test_fixes_consistent_points(self, rng, cfg):
        s = stft(rng.standard_normal(4000), cfg)
        np.testing.assert_allclose(consistency_project(s).bins, s.bins, atol=1e-6)

    @given(st.integers(0, 2**16), st.integers(800, 3000))
    def test_idempotent(self, seed, length):
        cfg = StftConfig()
        s = random_spec(np.random.default_rng(seed), cfg, length)
        p = consistency_project(s)
        assert np.max(np.abs(consistency_project(p).bins - p.bins)) < 1e-6

    def test_moves_inconsistent_points(self, rng, cfg):
        s = random_spec(rng, cfg, 4000)
        p = consistency_project(s)
        assert p.shape == s.shape and p.original_length == s.original_length
        assert np.linalg.norm(p.bins - s.bins) > 1.0
        # projection never increases energy
        assert np.linalg.norm(p.bins) < np.linalg.norm(s.bins)
