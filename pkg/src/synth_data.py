"""
Synthetische Datensaetze: korrelierte lineare Regression mit zufaelliger
Korrelationsmatrix sowie logistische und Poisson-Regression als lokale
Stellvertreter fuer reale Datensaetze.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from src.errors import ConfigError, GenerationError
from src.models import Dataset

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-6
_CLIP_EIGENVALUE = 1e-5
_MAX_REPAIR_ROUNDS = 10
_SCALE_LOG_STD = 0.2


@dataclass
class SynthRegressionConfig:
    d: int
    rho: float
    alpha_beta: float = 8.0
    beta_beta: float = 10.0
    n: int = 10000
    sigma_y: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d muss >= 1 sein: {self.d}")
        if not 0 <= self.rho <= 1:
            raise ConfigError(f"rho muss in [0, 1] liegen: {self.rho}")
        if self.alpha_beta <= 0 or self.beta_beta <= 0:
            raise ConfigError("Beta-Parameter muessen > 0 sein")
        if self.n < 1:
            raise ConfigError(f"N muss >= 1 sein: {self.n}")
        if not self.sigma_y > 0:
            raise ConfigError(f"sigma_y muss > 0 sein: {self.sigma_y}")


@dataclass
class SynthGlmConfig:
    p: int = 10
    n: int = 10000
    seed: int = 0
    weight_scale: float = 1.0


def n_correlated_pairs(d, rho):
    return int(round(rho * d * (d - 1) / 2))


def sample_raw_correlation_matrix(d, rho, alpha_beta, beta_beta, rng):
    """
    Einheitsdiagonale plus genau K = round(rho d(d-1)/2) symmetrische
    Nebendiagonal-Paare f * c mit c ~ Beta, f gleichverteilt auf {-1, +1}.
    Noch nicht auf positive Definitheit repariert.
    """
    if not 0 <= rho <= 1:
        raise ConfigError(f"rho muss in [0, 1] liegen: {rho}")
    C = np.eye(d)
    rows, cols = np.triu_indices(d, k=1)
    K = n_correlated_pairs(d, rho)
    if K == 0:
        return C
    chosen = rng.choice(rows.size, size=K, replace=False)
    strength = rng.beta(alpha_beta, beta_beta, size=K)
    sign = rng.choice(np.array([-1.0, 1.0]), size=K)
    C[rows[chosen], cols[chosen]] = sign * strength
    C[cols[chosen], rows[chosen]] = sign * strength
    return C


def repair_positive_definite(C):
    """Eigenwerte nach unten begrenzen und auf Einheitsdiagonale normieren, hoechstens 10 Runden."""
    C = 0.5 * (C + C.T)
    for round_ in range(_MAX_REPAIR_ROUNDS + 1):
        eigvals, eigvecs = np.linalg.eigh(C)
        if eigvals[0] >= MIN_EIGENVALUE:
            if round_:
                logger.debug(f"Korrelationsmatrix nach {round_} Runden positiv definit")
            return C
        if round_ == _MAX_REPAIR_ROUNDS:
            break
        C = (eigvecs * np.maximum(eigvals, _CLIP_EIGENVALUE)) @ eigvecs.T
        inv_sd = 1.0 / np.sqrt(np.diag(C))
        C = C * np.outer(inv_sd, inv_sd)
        C = 0.5 * (C + C.T)
        np.fill_diagonal(C, 1.0)
    raise GenerationError(
        f"Korrelationsmatrix nach {_MAX_REPAIR_ROUNDS} Runden nicht positiv definit "
        f"(kleinster Eigenwert {eigvals[0]:.3g})"
    )


def sample_correlation_matrix(d, rho, alpha_beta=8.0, beta_beta=10.0, rng=None):
    if rng is None:
        rng = np.random.default_rng()
    return repair_positive_definite(sample_raw_correlation_matrix(d, rho, alpha_beta, beta_beta, rng))


def _dataset(X, y, target_name="y"):
    return Dataset(features=X, targets=y, feature_names=[f"x{j}" for j in range(X.shape[1])], target_name=target_name)


def gen_correlated_regression(cfg):
    """
    Sigma = D C D mit D_ii = exp(N(0, 0.2^2)); x ~ N(0, Sigma), w ~ N(0, I),
    y ~ N(X w, sigma_y^2). Zweite Ziehung mit gleichem (Sigma, w) = Testdaten.
    Gibt (train, test, w) zurueck.
    """
    rng = np.random.default_rng(cfg.seed)
    C = sample_correlation_matrix(cfg.d, cfg.rho, cfg.alpha_beta, cfg.beta_beta, rng)
    scales = np.exp(_SCALE_LOG_STD * rng.standard_normal(cfg.d))
    sigma = C * np.outer(scales, scales)
    w = rng.standard_normal(cfg.d)

    def draw():
        X = rng.multivariate_normal(np.zeros(cfg.d), sigma, size=cfg.n, method="cholesky")
        y = X @ w + cfg.sigma_y * rng.standard_normal(cfg.n)
        return _dataset(X, y)

    train = draw()
    test = draw()
    logger.info(f"Synthetische Regression: d={cfg.d}, rho={cfg.rho}, N={cfg.n}, seed={cfg.seed}")
    return train, test, w


def _glm_features(cfg, rng):
    X = rng.standard_normal((cfg.n, cfg.p))
    w = cfg.weight_scale * rng.standard_normal(cfg.p) / np.sqrt(cfg.p)
    return X, w


def gen_logistic_regression(cfg):
    """Binaere Zielwerte y ~ Bernoulli(sigmoid(x^T w)) mit standardnormalen Merkmalen."""
    rng = np.random.default_rng(cfg.seed)
    X, w = _glm_features(cfg, rng)
    y = (rng.random(cfg.n) < special.expit(X @ w)).astype(float)
    return _dataset(X, y), w


def gen_poisson_regression(cfg):
    """Zaehldaten y ~ Poisson(exp(x^T w))."""
    rng = np.random.default_rng(cfg.seed)
    X, w = _glm_features(cfg, rng)
    y = rng.poisson(np.exp(X @ w)).astype(float)
    return _dataset(X, y), w
