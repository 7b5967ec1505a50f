"""Tests for the wavelet filter bank and the Fourier diagnostics."""

import math

import numpy as np
import pytest

import spectral
from errors import NonFiniteError, ShapeError, SpectrumError
from spectral import SpectrumFrame, SubTrajectoryPair, WaveletKind

SQ2 = math.sqrt(2.0)


def _periodic_oracle(seq, taps):
    half = seq.shape[0] // 2
    out = np.zeros((half, seq.shape[1]))
    for k in range(half):
        for m, tap in enumerate(taps):
            out[k] += tap * seq[(2 * k + m) % seq.shape[0]]
    return out


class TestFilterBank:
    def test_haar_coefficients(self):
        bank = spectral.filter_bank(WaveletKind.HAAR)
        np.testing.assert_allclose(bank.low_pass, [1 / SQ2, 1 / SQ2])
        np.testing.assert_allclose(bank.high_pass, [1 / SQ2, -1 / SQ2])

    @pytest.mark.parametrize("kind", list(WaveletKind))
    def test_orthonormal_taps(self, kind):
        bank = spectral.filter_bank(kind)
        assert np.sum(bank.low_pass ** 2) == pytest.approx(1.0, abs=1e-12)
        assert np.sum(bank.low_pass) == pytest.approx(SQ2, abs=1e-12)
        assert np.sum(bank.high_pass) == pytest.approx(0.0, abs=1e-12)
        assert np.dot(bank.low_pass, bank.high_pass) == pytest.approx(0.0, abs=1e-12)

    def test_names(self):
        assert spectral.parse_wavelet("Daubechies2") is WaveletKind.DAUBECHIES2
        assert spectral.filter_bank("db3").length == 6
        with pytest.raises(ValueError):
            spectral.parse_wavelet("morlet")

    @pytest.mark.parametrize("kind", list(WaveletKind))
    def test_analysis_matrix_is_orthogonal(self, kind):
        low, high = spectral.analysis_matrices(spectral.filter_bank(kind), 12)
        full = np.vstack([low, high])
        np.testing.assert_allclose(full @ full.T, np.eye(12), atol=1e-12)


class TestDwt:
    def test_haar_example(self):
        pair = spectral.dwt(np.array([1.0, 3.0, 2.0, 0.0]))
        np.testing.assert_allclose(pair.low[:, 0], [2 * SQ2, SQ2], atol=1e-12)
        np.testing.assert_allclose(pair.high[:, 0], [-SQ2, SQ2], atol=1e-12)
        assert pair.source_len == 4

    def test_constant_has_no_detail(self):
        pair = spectral.dwt(np.full((4, 2), 3.0))
        np.testing.assert_allclose(pair.low, np.full((2, 2), 3.0 * SQ2), atol=1e-12)
        np.testing.assert_allclose(pair.high, np.zeros((2, 2)), atol=1e-12)

    @pytest.mark.parametrize("kind", list(WaveletKind))
    def test_round_trip(self, kind, rng):
        bank = spectral.filter_bank(kind)
        for _ in range(20):
            x = rng.standard_normal((96, 11))
            back = spectral.idwt(spectral.dwt(x, bank), bank)
            assert np.max(np.abs(back - x)) <= 1e-10

    def test_daubechies2_matches_convolution(self, rng):
        bank = spectral.filter_bank(WaveletKind.DAUBECHIES2)
        x = rng.standard_normal((96, 3))
        pair = spectral.dwt(x, bank)
        np.testing.assert_allclose(pair.low, _periodic_oracle(x, bank.low_pass), atol=1e-12)
        np.testing.assert_allclose(pair.high, _periodic_oracle(x, bank.high_pass), atol=1e-12)

    @pytest.mark.parametrize("kind", [WaveletKind.HAAR, WaveletKind.DAUBECHIES2])
    def test_energy_split(self, kind, rng):
        x = rng.standard_normal((96, 11))
        pair = spectral.dwt(x, spectral.filter_bank(kind))
        total = np.sum(x ** 2)
        split = np.sum(pair.low ** 2) + np.sum(pair.high ** 2)
        assert abs(total - split) <= 1e-9 * total

    def test_linearity(self, rng):
        x = rng.standard_normal((16, 2))
        y = rng.standard_normal((16, 2))
        combined = spectral.dwt(2.5 * x - 0.5 * y)
        px, py = spectral.dwt(x), spectral.dwt(y)
        np.testing.assert_allclose(combined.low, 2.5 * px.low - 0.5 * py.low, atol=1e-10)
        np.testing.assert_allclose(combined.high, 2.5 * px.high - 0.5 * py.high, atol=1e-10)

    def test_odd_length_rejected(self):
        with pytest.raises(ShapeError):
            spectral.dwt(np.zeros((5, 2)))

    def test_too_short_for_filter(self):
        with pytest.raises(ShapeError):
            spectral.dwt(np.zeros((2, 1)), spectral.filter_bank("db2"))

    def test_non_finite_rejected(self):
        x = np.zeros((4, 1))
        x[2, 0] = np.nan
        with pytest.raises(NonFiniteError):
            spectral.dwt(x)


class TestIdwt:
    def test_haar_example(self):
        pair = SubTrajectoryPair(np.array([[2 * SQ2], [SQ2]]), np.array([[-SQ2], [SQ2]]), 4)
        np.testing.assert_allclose(spectral.idwt(pair)[:, 0], [1.0, 3.0, 2.0, 0.0], atol=1e-12)

    def test_zero(self):
        pair = SubTrajectoryPair(np.zeros((3, 2)), np.zeros((3, 2)), 6)
        np.testing.assert_array_equal(spectral.idwt(pair), np.zeros((6, 2)))

    def test_shape_mismatch(self):
        pair = SubTrajectoryPair(np.zeros((3, 2)), np.zeros((2, 2)), 6)
        with pytest.raises(ShapeError):
            spectral.idwt(pair)


class TestFourier:
    def test_constant(self):
        frame = spectral.dft(np.full(4, 2.0))
        np.testing.assert_allclose(frame.amplitude[:, 0], [8.0, 0.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_array_equal(frame.phase, np.zeros((4, 1)))

    def test_impulse(self):
        frame = spectral.dft(np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(frame.amplitude[:, 0], np.ones(4), atol=1e-12)
        np.testing.assert_allclose(frame.phase[:, 0], np.zeros(4), atol=1e-12)

    def test_round_trip(self, rng):
        x = rng.standard_normal((48, 3))
        assert np.max(np.abs(spectral.idft(spectral.dft(x)) - x)) <= 1e-10

    def test_inverse_of_constant_spectrum(self):
        frame = SpectrumFrame(np.array([[8.0], [0.0], [0.0], [0.0]]), np.zeros((4, 1)))
        np.testing.assert_allclose(spectral.idft(frame), np.full((4, 1), 2.0), atol=1e-12)

    def test_zero_spectrum(self):
        frame = SpectrumFrame(np.zeros((6, 2)), np.zeros((6, 2)))
        np.testing.assert_array_equal(spectral.idft(frame), np.zeros((6, 2)))

    def test_parseval(self, rng):
        x = rng.standard_normal((96, 4))
        frame = spectral.dft(x)
        lhs = np.sum(x ** 2)
        rhs = np.sum(frame.amplitude ** 2) / 96
        assert abs(lhs - rhs) <= 1e-8 * lhs

    def test_non_hermitian_rejected(self):
        frame = SpectrumFrame(np.array([[0.0], [1.0], [0.0], [0.0]]), np.zeros((4, 1)))
        with pytest.raises(SpectrumError):
            spectral.idft(frame)


class TestEnergyDensity:
    def test_single_tone(self):
        n = 8
        x = np.cos(2 * np.pi * np.arange(n) / n)
        density = spectral.energy_density(x)
        for freq, value in zip(density.frequencies, density.density[:, 0]):
            expected = 50.0 if abs(abs(freq) - 0.125) < 1e-12 else 0.0
            assert value == pytest.approx(expected, abs=1e-9)

    def test_constant_at_center(self):
        density = spectral.energy_density(np.full((6, 1), 4.0))
        center = int(np.argmin(np.abs(density.frequencies)))
        assert density.frequencies[center] == 0.0
        assert density.density[center, 0] == pytest.approx(100.0)

    def test_sums_to_hundred_and_scale_invariant(self, rng):
        x = rng.standard_normal((32, 3))
        first = spectral.energy_density(x)
        second = spectral.energy_density(-7.5 * x)
        np.testing.assert_allclose(first.density.sum(axis=0), 100.0, atol=1e-9)
        np.testing.assert_allclose(first.density, second.density, atol=1e-9)

    def test_zero_rejected(self):
        with pytest.raises(SpectrumError):
            spectral.energy_density(np.zeros((8, 1)))

    def test_white_noise_is_flat(self, rng):
        n, draws = 16, 1000
        samples = np.array(
            [spectral.energy_density(rng.standard_normal(n)).density[:, 0] for _ in range(draws)]
        )
        mean = samples.mean(axis=0)
        stderr = samples.std(axis=0, ddof=1) / math.sqrt(draws)
        assert np.all(np.abs(mean - 100.0 / n) <= 4.0 * stderr)

    def test_dataset_density_removes_mean(self, rng):
        windows = [5.0 + rng.standard_normal((16, 2)) for _ in range(10)]
        density = spectral.dataset_energy_density(windows)
        center = int(np.argmin(np.abs(density.frequencies)))
        assert np.all(density.density[center] < 1e-9)
        np.testing.assert_allclose(density.density.sum(axis=0), 100.0, atol=1e-9)

    def test_dataset_density_rejects_constant(self):
        with pytest.raises(SpectrumError):
            spectral.dataset_energy_density([np.ones((8, 2)), 2.0 * np.ones((8, 2))])

    def test_band_share_of_slow_motion(self):
        t = np.arange(64)
        x = np.sin(2 * np.pi * t / 64)[:, None]
        share = spectral.band_energy_share(spectral.energy_density(x), 0.2)
        assert share[0] == pytest.approx(100.0, abs=1e-9)


class TestLossSpectrum:
    def test_low_frequency_residual(self):
        x = np.sin(2 * np.pi * np.arange(96) / 96)
        report = spectral.loss_spectrum(x)
        assert report.one_sided_power.shape == (49, 1)
        assert report.low_band_power >= 100.0 * report.high_band_power

    def test_nyquist_residual(self):
        x = (-1.0) ** np.arange(96)
        report = spectral.loss_spectrum(x)
        assert report.low_band_power <= 0.01 * report.high_band_power
        assert report.ratio <= 0.01

    def test_no_high_power_gives_no_ratio(self):
        report = spectral.loss_spectrum(np.zeros((96, 1)))
        assert report.high_band_power == 0.0
        assert report.ratio is None

    def test_white_noise_balanced(self, rng):
        low = high = 0.0
        for _ in range(1000):
            l, h = spectral.band_powers(rng.standard_normal((96, 1)))
            low += l
            high += h
        assert low / high == pytest.approx(1.0, abs=0.1)

    def test_too_short(self):
        with pytest.raises(SpectrumError):
            spectral.loss_spectrum(np.ones((16, 1)), band_width=10)
