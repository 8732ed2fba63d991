"""
Eingebaute probabilistische Modelle.
Jedes Modell liefert per-Beispiel Log-Likelihood und deren Gradienten nach theta
(vektorisiert ueber einen Batch X: B x p, y: B) sowie Log-Prior und Gradient.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from src.errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


def _exp(x):
    """exp ohne OverflowError; ein Ueberlauf wird inf und faellt spaeter in der Divergenzpruefung auf."""
    with np.errstate(over="ignore"):
        return np.exp(x)


@dataclass(eq=False)
class Dataset:
    """Merkmalsmatrix N x p, Zielvektor N und Spaltennamen."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: list = field(default_factory=list)
    target_name: str = "y"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        if self.targets.size < 1:
            raise DataError("Datensatz ist leer")
        if self.features.shape[0] != self.targets.size:
            raise ShapeError(
                f"{self.features.shape[0]} Merkmalszeilen, aber {self.targets.size} Zielwerte"
            )
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DataError("Datensatz enthaelt nicht-endliche Werte")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.features.shape[1])]

    @property
    def n(self):
        return self.targets.size

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, idx):
        return self.features[idx], self.targets[idx]

    def standardized(self):
        """Kopie mit spaltenweise standardisierten Merkmalen (konstante Spalten bleiben)."""
        mean = self.features.mean(axis=0)
        std = self.features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return Dataset(
            features=(self.features - mean) / std,
            targets=self.targets.copy(),
            feature_names=list(self.feature_names),
            target_name=self.target_name,
        )


class ModelSpec:
    """Basis-Klasse fuer alle Modelle."""

    name = None

    def __init__(self, p):
        if p < 1:
            raise ConfigError(f"Modell '{self.name}' braucht mindestens ein Merkmal (p={p})")
        self.p = p

    @property
    def dim(self):
        return self.p

    def param_names(self):
        return [f"w{j}" for j in range(self.p)]

    def check_targets(self, y):
        pass

    def per_example_loglik(self, X, y, theta):
        raise NotImplementedError

    def per_example_loglik_grad(self, X, y, theta):
        raise NotImplementedError

    def log_prior(self, theta):
        """Standard: w ~ N(0, I)."""
        theta = np.asarray(theta, dtype=float)
        return float(-0.5 * theta @ theta - 0.5 * theta.size * _LOG_2PI)

    def log_prior_grad(self, theta):
        return -np.asarray(theta, dtype=float)

    def random_targets(self, rng, X, theta):
        """Zielwerte passend zum Modell, z.B. fuer Gradienten-Checks."""
        raise NotImplementedError

    def _linear(self, X, theta):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.p:
            raise ShapeError(f"X hat {X.shape[1]} Spalten, Modell erwartet {self.p}")
        return X, X @ np.asarray(theta, dtype=float)[: self.p]


class LogisticRegressionModel(ModelSpec):
    """y ~ Bernoulli(sigmoid(x^T w)), w ~ N(0, I)."""

    name = "logistic"

    def check_targets(self, y):
        y = np.asarray(y)
        if not np.all((y == 0) | (y == 1)):
            raise DataError("Logistische Regression erwartet Zielwerte in {0, 1}")

    def per_example_loglik(self, X, y, theta):
        self.check_targets(y)
        X, z = self._linear(X, theta)
        # y log s(z) + (1-y) log(1-s(z)) = y z - log(1 + e^z)
        return y * z - np.logaddexp(0.0, z)

    def per_example_loglik_grad(self, X, y, theta):
        self.check_targets(y)
        X, z = self._linear(X, theta)
        return (y - special.expit(z))[:, None] * X

    def random_targets(self, rng, X, theta):
        _, z = self._linear(X, theta)
        return (rng.random(z.shape) < special.expit(z)).astype(float)


class LinearRegressionModel(ModelSpec):
    """
    y ~ N(x^T w, sigma_y^2) mit sigma_y = exp(u).
    Prior: w ~ N(0, I), sigma_y ~ Gamma(0.1, 0.1) (Rate), plus log-Jacobi u.
    """

    name = "linear"
    gamma_shape = 0.1
    gamma_rate = 0.1

    @property
    def dim(self):
        return self.p + 1

    def param_names(self):
        return super().param_names() + ["log_sigma_y"]

    def per_example_loglik(self, X, y, theta):
        X, z = self._linear(X, theta)
        u = float(theta[self.p])
        r = y - z
        return -0.5 * _LOG_2PI - u - 0.5 * r * r * _exp(-2.0 * u)

    def per_example_loglik_grad(self, X, y, theta):
        X, z = self._linear(X, theta)
        u = float(theta[self.p])
        inv_var = _exp(-2.0 * u)
        r = y - z
        grad = np.empty((X.shape[0], self.dim))
        grad[:, : self.p] = (r * inv_var)[:, None] * X
        grad[:, self.p] = -1.0 + r * r * inv_var
        return grad

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        w, u = theta[: self.p], float(theta[self.p])
        a, b = self.gamma_shape, self.gamma_rate
        log_w = -0.5 * w @ w - 0.5 * self.p * _LOG_2PI
        # Gamma-Dichte in sigma = e^u, plus log|d sigma / du| = u
        log_sigma = a * math.log(b) - special.gammaln(a) + a * u - b * _exp(u)
        return float(log_w + log_sigma)

    def log_prior_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        grad = -theta.copy()
        u = float(theta[self.p])
        grad[self.p] = self.gamma_shape - self.gamma_rate * _exp(u)
        return grad

    def random_targets(self, rng, X, theta):
        _, z = self._linear(X, theta)
        return z + _exp(float(theta[self.p])) * rng.standard_normal(z.shape)


class PoissonRegressionModel(ModelSpec):
    """y ~ Poisson(exp(x^T w)), w ~ N(0, I)."""

    name = "poisson"

    def check_targets(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("Poisson-Regression erwartet nicht-negative ganze Zielwerte")

    def per_example_loglik(self, X, y, theta):
        self.check_targets(y)
        X, z = self._linear(X, theta)
        return y * z - np.exp(z) - special.gammaln(y + 1.0)

    def per_example_loglik_grad(self, X, y, theta):
        self.check_targets(y)
        X, z = self._linear(X, theta)
        return (y - np.exp(z))[:, None] * X

    def random_targets(self, rng, X, theta):
        _, z = self._linear(X, theta)
        return rng.poisson(np.exp(np.minimum(z, 20.0))).astype(float)


class GaussianMeanModel(ModelSpec):
    """
    Konjugiertes Testmodell: y ~ N(theta, noise_scale^2), theta ~ N(0, prior_scale^2).
    Merkmale werden ignoriert; die Posterior ist geschlossen bekannt.
    """

    name = "gaussian-mean"

    def __init__(self, p=1, noise_scale=1.0, prior_scale=1.0):
        self.p = 1
        self.noise_scale = noise_scale
        self.prior_scale = prior_scale

    def param_names(self):
        return ["mu"]

    def per_example_loglik(self, X, y, theta):
        r = np.asarray(y, dtype=float) - float(theta[0])
        return -0.5 * _LOG_2PI - math.log(self.noise_scale) - 0.5 * (r / self.noise_scale) ** 2

    def per_example_loglik_grad(self, X, y, theta):
        r = np.asarray(y, dtype=float) - float(theta[0])
        return (r / self.noise_scale**2)[:, None]

    def log_prior(self, theta):
        t = float(theta[0]) / self.prior_scale
        return -0.5 * _LOG_2PI - math.log(self.prior_scale) - 0.5 * t * t

    def log_prior_grad(self, theta):
        return np.array([-float(theta[0]) / self.prior_scale**2])

    def random_targets(self, rng, X, theta):
        return float(theta[0]) + self.noise_scale * rng.standard_normal(len(X))

    def posterior(self, y):
        """Exakte Posterior (Mittelwert, Standardabweichung)."""
        y = np.asarray(y, dtype=float)
        precision = 1.0 / self.prior_scale**2 + y.size / self.noise_scale**2
        var = 1.0 / precision
        return var * y.sum() / self.noise_scale**2, math.sqrt(var)


def logistic_regression_model(p):
    return LogisticRegressionModel(p)


def linear_regression_model(p):
    return LinearRegressionModel(p)


def poisson_regression_model(p):
    return PoissonRegressionModel(p)


MODELS = {
    "logistic": LogisticRegressionModel,
    "linear": LinearRegressionModel,
    "poisson": PoissonRegressionModel,
    "gaussian-mean": GaussianMeanModel,
}


def create_model(name, p):
    """Factory-Funktion: Modell nach Name."""
    model_class = MODELS.get(str(name).lower())
    if model_class is None:
        raise ConfigError(f"Unbekanntes Modell: '{name}'. Verfuegbar: {list(MODELS.keys())}")
    return model_class(p)


def log_joint(model, X, y, theta):
    """log p(D, theta) = sum_x log p(x|theta) + log p(theta)."""
    return float(np.sum(model.per_example_loglik(X, y, theta)) + model.log_prior(theta))


def log_joint_grad(model, X, y, theta):
    return model.per_example_loglik_grad(X, y, theta).sum(axis=0) + model.log_prior_grad(theta)
