"""
Metriken fuer Experimente: MPAE (mittlerer proportionaler absoluter Fehler)
und praediktive Log-Likelihood unter dem Guide.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from src.errors import ConfigError, MetricError, ShapeError

logger = logging.getLogger(__name__)

DEGENERATE_TOLERANCE = 1e-12


@dataclass(eq=False)
class MpaeInput:
    current: np.ndarray
    reference: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.current = np.asarray(self.current, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        if not (self.current.shape[-1:] == self.reference.shape == self.initial.shape):
            raise ShapeError(
                f"MPAE: Formen {self.current.shape}, {self.reference.shape}, "
                f"{self.initial.shape} passen nicht"
            )


@dataclass
class MpaeResult:
    value: float
    n_used: int
    n_excluded: int


def _mpae(current, reference, initial):
    denom = np.abs(initial - reference)
    keep = denom >= DEGENERATE_TOLERANCE
    if not np.any(keep):
        raise MetricError("MPAE: alle Koordinaten degeneriert (Start = Optimum)")
    n_excluded = int(np.sum(~keep))
    if n_excluded:
        logger.debug(f"MPAE: {n_excluded} degenerierte Koordinaten ausgeschlossen")
    ratios = np.abs(current[..., keep] - reference[keep]) / denom[keep]
    return ratios.mean(axis=-1), int(keep.sum()), n_excluded


def mpae(data):
    """(1/D) sum_d |xi_t - xi*| / |xi_0 - xi*| ueber die nicht-degenerierten Koordinaten."""
    value, n_used, n_excluded = _mpae(data.current, data.reference, data.initial)
    return MpaeResult(value=float(value), n_used=n_used, n_excluded=n_excluded)


def mpae_trace(snapshots, reference, initial):
    """MPAE fuer jede Zeile eines Traces (T x D)."""
    data = MpaeInput(current=np.atleast_2d(snapshots), reference=reference, initial=initial)
    values, _, _ = _mpae(data.current, data.reference, data.initial)
    return values


def predictive_loglik(guide, model, test, n_samples=200, rng=None):
    """
    Mittel ueber die Testzeilen von log((1/S) sum_s p(y | x, theta_s)),
    theta_s aus dem Guide.
    """
    if n_samples < 1:
        raise ConfigError(f"Mindestens eine Stichprobe noetig: {n_samples}")
    if rng is None:
        rng = np.random.default_rng()
    thetas = guide.sample(rng, n_samples)
    # S x N_test
    loglik = np.stack([model.per_example_loglik(test.features, test.targets, th) for th in thetas])
    per_row = special.logsumexp(loglik, axis=0) - math.log(n_samples)
    return float(np.mean(per_row))
