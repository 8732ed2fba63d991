"""
Gradienten-Check der Modelle gegen zentrale finite Differenzen.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_points: int
    tolerance: float
    worst_function: str = None
    worst_coordinate: int = None
    worst_point: int = None

    def describe(self):
        status = "OK" if self.passed else "FEHLER"
        text = f"Gradienten-Check {status}: max. rel. Fehler {self.max_rel_error:.3e} (Toleranz {self.tolerance:g})"
        if not self.passed:
            text += (
                f", schlechteste Stelle: {self.worst_function} Koordinate "
                f"{self.worst_coordinate} an Punkt {self.worst_point}"
            )
        return text


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))


def central_difference(f, theta, step=1e-6):
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return grad


def grad_check(model, n_points=100, tolerance=1e-5, rng=None, step=1e-6, theta_scale=0.5):
    """
    Vergleicht per-Beispiel Log-Likelihood- und Log-Prior-Gradienten an
    n_points zufaelligen (x, theta) mit finiten Differenzen.
    """
    if not tolerance > 0:
        raise ConfigError(f"Toleranz muss > 0 sein: {tolerance}")
    if n_points < 1:
        raise ConfigError(f"Mindestens ein Punkt noetig: {n_points}")
    if rng is None:
        rng = np.random.default_rng(0)

    worst = (0.0, None, None, None)
    for k in range(n_points):
        theta = theta_scale * rng.standard_normal(model.dim)
        x = rng.standard_normal((1, model.p))
        y = model.random_targets(rng, x, theta)

        checks = {
            "loglik": (
                model.per_example_loglik_grad(x, y, theta)[0],
                central_difference(lambda th: float(model.per_example_loglik(x, y, th)[0]), theta, step),
            ),
            "prior": (
                model.log_prior_grad(theta),
                central_difference(model.log_prior, theta, step),
            ),
        }
        for name, (analytic, numeric) in checks.items():
            err = relative_error(np.asarray(analytic, dtype=float), numeric)
            j = int(np.argmax(err))
            if err[j] > worst[0] or worst[1] is None:
                worst = (float(err[j]), name, j, k)

    max_err, function, coord, point = worst
    report = GradCheckReport(
        passed=max_err <= tolerance,
        max_rel_error=max_err,
        n_points=n_points,
        tolerance=tolerance,
        worst_function=function,
        worst_coordinate=coord,
        worst_point=point,
    )
    if report.passed:
        logger.info(report.describe())
    else:
        logger.error(report.describe())
    return report
