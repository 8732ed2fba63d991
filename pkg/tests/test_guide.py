"""Tests fuer die Gauss-Guides (diagonal und Full-Rank)."""

import numpy as np
import pytest
from scipy import stats

from src.errors import ConfigError, ShapeError
from src.guide import (
    DiagonalGuide,
    FullRankGuide,
    cholesky_factor,
    dim_from_packed,
    make_guide,
    packed_size,
)
from src.transforms import transform_value


def _random_fullrank(rng, d, transform="softplus"):
    return FullRankGuide(
        m=rng.standard_normal(d),
        a=0.5 * rng.standard_normal(packed_size(d)),
        transform=transform,
    )


def _numeric_grad(f, x, h=1e-6):
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


class TestDiagonalGuide:
    def test_reparam_draw(self):
        guide = DiagonalGuide(m=np.array([1.0, -2.0]), s=np.array([0.0, 1.0]))
        eta = np.array([0.5, -1.0])
        expected = guide.m + transform_value("softplus", guide.s) * eta
        np.testing.assert_allclose(guide.draw(eta), expected)

    def test_batch_draw(self):
        guide = DiagonalGuide.initial(3, init_sigma=2.0)
        eta = np.ones((4, 3))
        np.testing.assert_allclose(guide.draw(eta), 2.0 * np.ones((4, 3)))

    def test_initial_scale(self):
        guide = DiagonalGuide.initial(4, init_sigma=0.3, transform="exp")
        np.testing.assert_allclose(guide.scale, 0.3)
        np.testing.assert_allclose(guide.m, 0.0)

    @pytest.mark.parametrize("transform", ["softplus", "exp"])
    def test_entropy_matches_scipy(self, transform):
        rng = np.random.default_rng(0)
        guide = DiagonalGuide(m=rng.standard_normal(3), s=rng.standard_normal(3), transform=transform)
        expected = stats.multivariate_normal(guide.m, np.diag(guide.scale**2)).entropy()
        assert guide.entropy() == pytest.approx(expected)

    def test_entropy_grad(self):
        rng = np.random.default_rng(1)
        guide = DiagonalGuide(m=np.zeros(4), s=rng.standard_normal(4))
        numeric = _numeric_grad(lambda s: DiagonalGuide(m=guide.m, s=s).entropy(), guide.s)
        np.testing.assert_allclose(guide.entropy_grad(), numeric, rtol=1e-6)

    def test_param_round_trip(self):
        guide = DiagonalGuide(m=np.array([1.0, 2.0]), s=np.array([3.0, 4.0]))
        assert guide.param_names() == ["m[0]", "m[1]", "s[0]", "s[1]"]
        np.testing.assert_array_equal(guide.with_params(guide.params).params, guide.params)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            DiagonalGuide(m=np.zeros(2), s=np.zeros(3))
        with pytest.raises(ShapeError):
            DiagonalGuide.initial(2).with_params(np.zeros(3))
        with pytest.raises(ShapeError):
            DiagonalGuide.initial(2).draw(np.zeros(3))


class TestFullRankGuide:
    def test_cholesky_layout(self):
        L = cholesky_factor(np.array([0.0, 2.0, 0.0]), "exp")
        np.testing.assert_allclose(L, [[1.0, 0.0], [2.0, 1.0]])

    def test_draw_uses_cholesky(self):
        rng = np.random.default_rng(2)
        guide = _random_fullrank(rng, 3)
        eta = rng.standard_normal(3)
        np.testing.assert_allclose(guide.draw(eta), guide.m + guide.cholesky @ eta)
        batch = rng.standard_normal((5, 3))
        np.testing.assert_allclose(guide.draw(batch)[2], guide.m + guide.cholesky @ batch[2])

    def test_entropy_matches_scipy(self):
        rng = np.random.default_rng(3)
        guide = _random_fullrank(rng, 4)
        L = guide.cholesky
        expected = stats.multivariate_normal(guide.m, L @ L.T).entropy()
        assert guide.entropy() == pytest.approx(expected)

    def test_entropy_grad(self):
        rng = np.random.default_rng(4)
        guide = _random_fullrank(rng, 3)
        numeric = _numeric_grad(lambda a: FullRankGuide(m=guide.m, a=a).entropy(), guide.a)
        np.testing.assert_allclose(guide.entropy_grad(), numeric, rtol=1e-6, atol=1e-9)

    def test_from_diagonal_keeps_marginals(self):
        diag = DiagonalGuide(m=np.array([0.5, -0.5]), s=np.array([-1.0, 2.0]))
        full = FullRankGuide.from_diagonal(diag)
        np.testing.assert_allclose(full.marginal_variance(), diag.marginal_variance())
        assert full.entropy() == pytest.approx(diag.entropy())

    @pytest.mark.parametrize("transform", ["softplus", "exp"])
    def test_zero_off_diagonal_reproduces_diagonal_draws(self, transform):
        rng = np.random.default_rng(8)
        diag = DiagonalGuide(m=rng.standard_normal(4), s=rng.standard_normal(4), transform=transform)
        full = FullRankGuide.from_diagonal(diag)
        eta = np.random.default_rng(9).standard_normal((50, 4))
        np.testing.assert_array_equal(full.draw(eta), diag.draw(eta))
        for row in eta:
            np.testing.assert_array_equal(full.draw(row), diag.draw(row))

    def test_sample_covariance(self):
        rng = np.random.default_rng(5)
        guide = _random_fullrank(rng, 2)
        samples = guide.sample(np.random.default_rng(6), 200_000)
        L = guide.cholesky
        np.testing.assert_allclose(np.cov(samples.T), L @ L.T, atol=0.02)

    def test_param_names(self):
        names = FullRankGuide.initial(2).param_names()
        assert names == ["m[0]", "m[1]", "a[0,0]", "a[1,0]", "a[1,1]"]

    def test_packed_size_errors(self):
        assert dim_from_packed(6) == 3
        with pytest.raises(ShapeError):
            dim_from_packed(4)
        with pytest.raises(ShapeError):
            FullRankGuide(m=np.zeros(2), a=np.zeros(4))


def test_make_guide():
    assert isinstance(make_guide("diagonal", 3), DiagonalGuide)
    full = make_guide("fullrank", 3, init_sigma=0.5)
    np.testing.assert_allclose(np.diag(full.cholesky), 0.5)
    with pytest.raises(ConfigError):
        make_guide("lowrank", 3)
