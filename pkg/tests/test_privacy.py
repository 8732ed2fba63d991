"""Tests fuer Clipping, Mechanismus, Subsampling und den RDP-Accountant."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.errors import CalibrationError, ConfigError, DataError
from src.privacy import (
    DpSgdConfig,
    account_privacy,
    calibrate_noise,
    clip_row,
    clip_rows,
    clipped_fraction,
    compute_rdp,
    derive_rng,
    gaussian_mechanism,
    poisson_subsample,
    rdp_to_epsilon,
)


class TestClipping:
    def test_long_row_scaled_to_threshold(self):
        g = np.array([3.0, 4.0])
        clipped = clip_row(g, 1.0)
        assert np.linalg.norm(clipped) == pytest.approx(1.0)
        np.testing.assert_allclose(clipped / np.linalg.norm(clipped), g / 5.0)

    def test_short_row_unchanged(self):
        g = np.array([0.1, -0.2])
        np.testing.assert_array_equal(clip_row(g, 1.0), g)

    def test_zero_row(self):
        np.testing.assert_array_equal(clip_row(np.zeros(3), 0.5), np.zeros(3))

    def test_rows_bounded(self):
        rows = np.random.default_rng(0).normal(scale=5.0, size=(100, 4))
        clipped = clip_rows(rows, 2.0)
        assert np.all(np.linalg.norm(clipped, axis=1) <= 2.0 + 1e-12)
        assert 0.0 < clipped_fraction(rows, 2.0) <= 1.0

    def test_disabled_clipping(self):
        rows = np.array([[100.0, 0.0]])
        np.testing.assert_array_equal(clip_rows(rows, math.inf), rows)
        assert clipped_fraction(rows, math.inf) == 0.0

    def test_errors(self):
        with pytest.raises(DataError):
            clip_row(np.array([np.nan, 1.0]), 1.0)
        with pytest.raises(ConfigError):
            clip_row(np.ones(2), 0.0)


class TestMechanism:
    def test_zero_noise_is_identity(self):
        total = np.array([1.0, 2.0])
        np.testing.assert_array_equal(gaussian_mechanism(total, math.inf, 0.0, np.ones(2)), total)

    def test_noise_scale(self):
        out = gaussian_mechanism(np.zeros(2), 2.0, 1.5, np.array([1.0, -1.0]))
        np.testing.assert_allclose(out, [3.0, -3.0])

    def test_noise_without_clipping(self):
        with pytest.raises(ConfigError):
            gaussian_mechanism(np.zeros(2), math.inf, 1.0, np.ones(2))

    def test_poisson_subsample(self):
        rng = np.random.default_rng(1)
        assert poisson_subsample(10, 1.0, rng).tolist() == list(range(10))
        sizes = [poisson_subsample(1000, 0.1, rng).size for _ in range(200)]
        assert np.mean(sizes) == pytest.approx(100.0, rel=0.05)
        with pytest.raises(ConfigError):
            poisson_subsample(10, 0.0, rng)


class TestRandomStreams:
    def test_deterministic(self):
        a = derive_rng(7, 3, "eta").standard_normal(5)
        b = derive_rng(7, 3, "eta").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        base = derive_rng(7, 3, "eta").standard_normal(5)
        assert not np.array_equal(base, derive_rng(7, 3, "psi").standard_normal(5))
        assert not np.array_equal(base, derive_rng(7, 4, "eta").standard_normal(5))
        assert not np.array_equal(base, derive_rng(8, 3, "eta").standard_normal(5))

    def test_unknown_purpose(self):
        with pytest.raises(ConfigError):
            derive_rng(0, 0, "dropout")


def _rdp_by_quadrature(q, sigma, alpha):
    """log E_{mu0}[(mu/mu0)^alpha] / (alpha - 1) per numerischer Integration."""

    def integrand(z):
        ratio = (1.0 - q) + q * math.exp((2.0 * z - 1.0) / (2.0 * sigma**2))
        return stats.norm.pdf(z, scale=sigma) * ratio**alpha

    value, _ = integrate.quad(integrand, -40.0 * sigma, 40.0 * sigma + alpha, epsabs=0, epsrel=1e-12, limit=500)
    return math.log(value) / (alpha - 1.0)


class TestAccountant:
    def test_full_batch_matches_order_grid_oracle(self):
        sigma, delta = 4.0, 1e-5
        alphas = np.linspace(1.01, 200.0, 200_000)
        oracle = np.min(alphas / (2 * sigma**2) + math.log(1 / delta) / (alphas - 1))
        spend = account_privacy(sigma, 1.0, 1, delta)
        assert spend.epsilon == pytest.approx(oracle, rel=0.05)

    def test_full_batch_rdp_closed_form(self):
        orders = [1.5, 2.0, 10.0]
        np.testing.assert_allclose(compute_rdp(1.0, 2.0, orders), np.array(orders) / 8.0)

    @pytest.mark.parametrize("alpha", [1.5, 2.0, 3.25, 8.0])
    def test_subsampled_rdp_matches_quadrature(self, alpha):
        q, sigma = 0.05, 1.5
        expected = _rdp_by_quadrature(q, sigma, alpha)
        assert compute_rdp(q, sigma, [alpha])[0] == pytest.approx(expected, rel=1e-6)

    def test_fractional_order_alternating_terms(self):
        # Bei alpha = 1.5 sind die Binomialkoeffizienten ab i = 3 abwechselnd negativ
        assert compute_rdp(0.05, 1.5, [1.5])[0] == pytest.approx(0.0010330, rel=1e-3)

    def test_monotonicity(self):
        sigmas = [0.8, 1.2, 2.0]
        qs = [0.005, 0.01, 0.05]
        iterations = [100, 1000, 5000]
        eps = np.array([
            [[account_privacy(s, q, T, 1e-5).epsilon for T in iterations] for q in qs]
            for s in sigmas
        ])
        assert np.all(np.isfinite(eps))
        assert np.all(np.diff(eps, axis=0) < 0)
        assert np.all(np.diff(eps, axis=1) > 0)
        assert np.all(np.diff(eps, axis=2) > 0)
        for s in sigmas:
            for q in qs:
                for T in iterations:
                    assert account_privacy(s, q, T, 1e-3).epsilon < account_privacy(s, q, T, 1e-5).epsilon

    def test_zero_noise_is_infinite(self):
        assert math.isinf(account_privacy(0.0, 0.1, 10, 1e-5).epsilon)

    def test_improved_conversion_is_tighter(self):
        classic = account_privacy(1.0, 0.01, 1000, 1e-5).epsilon
        improved = account_privacy(1.0, 0.01, 1000, 1e-5, conversion="improved").epsilon
        assert improved < classic

    def test_unknown_conversion(self):
        with pytest.raises(ConfigError):
            rdp_to_epsilon([2.0], [0.1], 1e-5, conversion="pld")


class TestCalibration:
    @pytest.mark.parametrize("target", [0.5, 1.0, 4.0])
    def test_hits_target_from_below(self, target):
        q, T, delta = 0.01, 1000, 1e-5
        sigma = calibrate_noise(target, delta, q, T)
        eps = account_privacy(sigma, q, T, delta).epsilon
        assert 0.99 * target <= eps <= target

    def test_more_iterations_need_more_noise(self):
        sigmas = [calibrate_noise(1.0, 1e-5, 0.01, T) for T in [500, 1000, 2000]]
        assert sigmas[0] < sigmas[1] < sigmas[2]

    def test_smaller_batches_need_less_noise(self):
        for T in [500, 2000]:
            sigmas = [calibrate_noise(1.0, 1e-5, q, T) for q in [0.005, 0.01, 0.02]]
            assert sigmas[0] < sigmas[1] < sigmas[2]

    def test_unreachable_target(self):
        with pytest.raises(CalibrationError):
            calibrate_noise(1e-6, 1e-5, 1.0, 1)


class TestConfig:
    def test_valid(self):
        cfg = DpSgdConfig(clip_threshold=1.0, noise_multiplier=1.0, subsample_ratio=0.1,
                          iterations=10, delta=1e-5, variant="vanilla")
        assert cfg.clipping_enabled
        assert not DpSgdConfig(math.inf, 0.0, 1.0, 1, 0.5).clipping_enabled

    @pytest.mark.parametrize("kwargs", [
        dict(clip_threshold=0.0),
        dict(noise_multiplier=-1.0),
        dict(subsample_ratio=1.5),
        dict(iterations=0),
        dict(delta=1.0),
        dict(variant="sgld"),
    ])
    def test_invalid(self, kwargs):
        base = dict(clip_threshold=1.0, noise_multiplier=1.0, subsample_ratio=0.1, iterations=10, delta=1e-5)
        with pytest.raises(ConfigError):
            DpSgdConfig(**{**base, **kwargs})
