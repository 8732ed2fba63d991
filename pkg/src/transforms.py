"""
Skalare Transformationen T: R -> R+ fuer die Skalenparameter.
Softplus (Standard) und Exp, jeweils Wert, Ableitung und Inverse.
Alle Funktionen arbeiten elementweise auf Skalaren und numpy-Arrays.
"""

import logging
from enum import Enum

import numpy as np
from scipy import special

from src.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# Ab hier wird softplus ueber s + log1p(exp(-s)) berechnet
SOFTPLUS_SWITCH = 30.0


class TransformKind(str, Enum):
    SOFTPLUS = "softplus"
    EXP = "exp"


def parse_transform(name):
    """Wandelt einen Konfigurations-String in eine TransformKind um."""
    if isinstance(name, TransformKind):
        return name
    try:
        return TransformKind(str(name).strip().lower())
    except ValueError:
        raise ConfigError(
            f"Unbekannte Transformation: '{name}'. "
            f"Verfuegbar: {[k.value for k in TransformKind]}"
        ) from None


def _as_finite(s):
    arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"Nicht-endlicher Wert fuer Transformation: {s}")
    return arr


def _unwrap(arr):
    return float(arr) if arr.ndim == 0 else arr


def transform_value(kind, s):
    """T(s), immer > 0."""
    kind = parse_transform(kind)
    s = _as_finite(s)
    if kind is TransformKind.EXP:
        return _unwrap(np.exp(s))
    upper = s + np.log1p(np.exp(-np.maximum(s, SOFTPLUS_SWITCH)))
    lower = np.log1p(np.exp(np.minimum(s, SOFTPLUS_SWITCH)))
    return _unwrap(np.where(s > SOFTPLUS_SWITCH, upper, lower))


def transform_deriv(kind, s):
    """T'(s): Sigmoid fuer Softplus, exp(s) fuer Exp."""
    kind = parse_transform(kind)
    s = _as_finite(s)
    if kind is TransformKind.EXP:
        return _unwrap(np.exp(s))
    return _unwrap(special.expit(s))


def transform_inverse(kind, sigma):
    """
    T^-1(sigma), z.B. um s aus einer gewuenschten Start-Standardabweichung
    zu initialisieren.
    """
    kind = parse_transform(kind)
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise DomainError(f"Inverse nur fuer endliche sigma > 0 definiert: {sigma}")
    if kind is TransformKind.EXP:
        return _unwrap(np.log(sigma))
    # log(exp(sigma) - 1), fuer grosse sigma als sigma + log(1 - exp(-sigma))
    large = sigma + np.log(-np.expm1(-np.maximum(sigma, SOFTPLUS_SWITCH)))
    small = np.log(np.expm1(np.minimum(sigma, SOFTPLUS_SWITCH)))
    return _unwrap(np.where(sigma > SOFTPLUS_SWITCH, large, small))
