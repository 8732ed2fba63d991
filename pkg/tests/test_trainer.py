"""Tests fuer Adam und die DPVI-Trainingsschleife."""

import math

import numpy as np
import pytest

from src.errors import ConfigError, DivergenceError
from src.guide import DiagonalGuide
from src.models import Dataset, GaussianMeanModel, LinearRegressionModel, LogisticRegressionModel
from src.privacy import DpSgdConfig, derive_rng
from src.trainer import (
    AdamState,
    adam_step,
    compute_update,
    initial_guide,
    iterations_for_epochs,
    run_dpvi,
)
from src.transforms import transform_deriv, transform_value


def _logistic_data(n=50, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = (rng.random(n) < 0.5).astype(float)
    return Dataset(features=X, targets=y)


def _conjugate_data(n=20, seed=0):
    rng = np.random.default_rng(seed)
    y = 1.0 + rng.standard_normal(n)
    return Dataset(features=np.zeros((n, 1)), targets=y)


class TestAdam:
    def test_zero_gradient(self):
        state = AdamState.zeros(3)
        params = np.array([1.0, -2.0, 3.0])
        new, _ = adam_step(state, params, np.zeros(3))
        np.testing.assert_array_equal(new, params)

    def test_first_step_is_sign_like(self):
        state = AdamState.zeros(2, learning_rate=1e-3)
        new, state = adam_step(state, np.zeros(2), np.array([50.0, -0.5]))
        np.testing.assert_allclose(new, [-1e-3, 1e-3], rtol=1e-4)
        assert state.step == 1

    def test_pure_function(self):
        state = AdamState.zeros(2)
        params = np.array([1.0, 1.0])
        grad = np.array([0.3, -0.7])
        a, sa = adam_step(state, params, grad)
        b, sb = adam_step(state, params, grad)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sa.first_moment, sb.first_moment)
        assert state.step == 0
        np.testing.assert_array_equal(params, [1.0, 1.0])


class TestRunDpvi:
    def _config(self, **kw):
        base = dict(clip_threshold=2.0, noise_multiplier=1.0, subsample_ratio=0.2,
                    iterations=30, delta=1e-3, seed=3, variant="aligned")
        return DpSgdConfig(**{**base, **kw})

    def test_trace_length_and_spend(self):
        data = _logistic_data()
        trace = run_dpvi(LogisticRegressionModel(3), DiagonalGuide.initial(3), data, self._config(), log_every=0)
        assert trace.iterations == 30
        assert trace.snapshots.shape == (30, 6)
        assert np.all(np.isfinite(trace.snapshots))
        assert 0 < trace.spend.epsilon < math.inf
        assert trace.param_names[0] == "m[0]"

    def test_same_seed_bit_identical(self):
        data = _logistic_data()
        model = LogisticRegressionModel(3)
        a = run_dpvi(model, DiagonalGuide.initial(3), data, self._config(), log_every=0)
        b = run_dpvi(model, DiagonalGuide.initial(3), data, self._config(), log_every=0)
        c = run_dpvi(model, DiagonalGuide.initial(3), data, self._config(seed=4), log_every=0)
        np.testing.assert_array_equal(a.snapshots, b.snapshots)
        assert not np.array_equal(a.snapshots, c.snapshots)

    @pytest.mark.parametrize("variant", ["vanilla", "preconditioned", "natural", "aligned-natural"])
    def test_all_diagonal_variants_run(self, variant):
        data = _logistic_data()
        trace = run_dpvi(LogisticRegressionModel(3), DiagonalGuide.initial(3), data,
                         self._config(variant=variant, clip_threshold=0.5), log_every=0)
        assert np.all(np.isfinite(trace.snapshots))

    @pytest.mark.parametrize("variant", ["full-rank-vanilla", "full-rank-aligned"])
    def test_fullrank_variants_run(self, variant):
        data = _logistic_data()
        guide = initial_guide("fullrank", 3, init_sigma=1.0)
        trace = run_dpvi(LogisticRegressionModel(3), guide, data,
                         self._config(variant=variant, clip_threshold=0.2), log_every=0)
        assert trace.snapshots.shape == (30, 3 + 6)
        assert trace.final_guide().kind == "fullrank"

    def test_empty_batches(self):
        data = _logistic_data(n=5)
        trace = run_dpvi(LogisticRegressionModel(3), DiagonalGuide.initial(3), data,
                         self._config(subsample_ratio=0.01, iterations=50), log_every=0)
        assert np.sum(trace.batch_sizes == 0) > 0
        assert np.all(np.isfinite(trace.snapshots))

    def test_conjugate_posterior_recovered(self):
        """Ohne Rauschen und Clipping, q = 1: gewoehnliche VI findet die exakte Posterior."""
        data = _conjugate_data()
        model = GaussianMeanModel()
        mu_post, sd_post = model.posterior(data.targets)
        config = self._config(clip_threshold=math.inf, noise_multiplier=0.0, subsample_ratio=1.0,
                              iterations=8000, seed=11)
        trace = run_dpvi(model, DiagonalGuide.initial(1), data, config, learning_rate=5e-3, log_every=0)

        tail = trace.snapshots[-2000:]
        assert np.mean(tail[:, 0]) == pytest.approx(mu_post, abs=0.05)
        assert np.mean(transform_value("softplus", tail[:, 1])) == pytest.approx(sd_post, abs=0.05)
        assert np.mean(trace.elbo[-1000:]) > np.mean(trace.elbo[:1000])

    def test_divergence_reports_iteration(self):
        data = _conjugate_data()
        config = self._config(clip_threshold=math.inf, noise_multiplier=0.0, subsample_ratio=1.0)
        with pytest.raises(DivergenceError) as excinfo:
            run_dpvi(GaussianMeanModel(), DiagonalGuide.initial(1), data, config, learning_rate=1e9, log_every=0)
        assert excinfo.value.iteration == 0

    def test_overflowing_noise_scale_is_divergence(self):
        rng = np.random.default_rng(4)
        data = Dataset(features=rng.standard_normal((30, 2)), targets=rng.standard_normal(30))
        guide = DiagonalGuide(m=np.array([0.0, 0.0, -1000.0]), s=np.full(3, -5.0))
        config = self._config(variant="vanilla", subsample_ratio=1.0)
        with pytest.raises(DivergenceError) as excinfo:
            run_dpvi(LinearRegressionModel(2), guide, data, config, log_every=0)
        assert excinfo.value.iteration == 0

    def test_rejects_mismatched_guide(self):
        data = _logistic_data()
        with pytest.raises(ConfigError):
            run_dpvi(LogisticRegressionModel(3), DiagonalGuide.initial(3), data,
                     self._config(variant="full-rank-aligned"), log_every=0)

    def test_rejects_noise_without_clipping(self):
        data = _logistic_data()
        with pytest.raises(ConfigError):
            run_dpvi(LogisticRegressionModel(3), DiagonalGuide.initial(3), data,
                     self._config(clip_threshold=math.inf), log_every=0)


class TestComputeUpdate:
    def test_variants_agree_without_privacy(self):
        """sigma = 0, kein Clipping, q = 1: Vanilla, Aligned und Preconditioned stimmen ueberein."""
        data = _logistic_data(n=12)
        model = LogisticRegressionModel(3)
        rng = np.random.default_rng(5)
        guide = DiagonalGuide(m=rng.standard_normal(3), s=rng.standard_normal(3))
        eta = rng.standard_normal(3)

        def update(variant):
            cfg = DpSgdConfig(math.inf, 0.0, 1.0, 1, 0.5, variant=variant)
            grad, _, _ = compute_update(cfg, guide, model, data.features, data.targets, eta,
                                        derive_rng(0, 0, "psi"), data.n)
            return grad

        vanilla = update("vanilla")
        np.testing.assert_allclose(update("aligned"), vanilla, rtol=1e-10, atol=1e-12)
        precond = update("preconditioned")
        np.testing.assert_allclose(precond[:3], vanilla[:3], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(precond[3:] * transform_deriv("softplus", guide.s), vanilla[3:],
                                   rtol=1e-10, atol=1e-12)

    def test_clipped_fraction_reported(self):
        data = _logistic_data(n=12)
        model = LogisticRegressionModel(3)
        guide = DiagonalGuide.initial(3)
        cfg = DpSgdConfig(1e-6, 0.0, 1.0, 1, 0.5, variant="aligned")
        _, _, diagnostics = compute_update(cfg, guide, model, data.features, data.targets, np.ones(3),
                                           derive_rng(0, 0, "psi"), data.n)
        assert diagnostics["clipped_fraction"] == 1.0


def test_iterations_for_epochs():
    assert iterations_for_epochs(500, 0.01) == 50_000
    assert iterations_for_epochs(0.001, 0.5) == 1
    with pytest.raises(ConfigError):
        iterations_for_epochs(0, 0.1)


def test_initial_guide_uses_init_stream():
    a = initial_guide("diagonal", 4, init_mean_std=0.1, seed=5)
    b = initial_guide("diagonal", 4, init_mean_std=0.1, seed=5)
    np.testing.assert_array_equal(a.m, b.m)
    assert np.any(a.m != 0)
    np.testing.assert_allclose(a.scale, 1.0)
