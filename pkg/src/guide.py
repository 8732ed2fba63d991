"""
Gauss'sche Variationsverteilungen (Guides).
Diagonale Variante mit (m, s) und Full-Rank-Variante mit (m, a),
wobei a das untere Dreieck des Cholesky-Faktors zeilenweise gepackt enthaelt.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError, DomainError, ShapeError
from src.transforms import (
    TransformKind,
    parse_transform,
    transform_value,
    transform_deriv,
    transform_inverse,
)

logger = logging.getLogger(__name__)

# (1 + log 2pi) / 2, Entropie-Konstante pro Dimension
_ENTROPY_CONST = 0.5 * (1.0 + math.log(2.0 * math.pi))


def packed_size(d):
    return d * (d + 1) // 2


def dim_from_packed(n):
    """Liefert d fuer einen gepackten Vektor der Laenge n = d(d+1)/2."""
    d = int(round((math.sqrt(8 * n + 1) - 1) / 2))
    if d < 1 or packed_size(d) != n:
        raise ShapeError(f"Laenge {n} ist keine Dreieckszahl")
    return d


def tril_indices(d):
    """Zeilenweise Reihenfolge des unteren Dreiecks: (0,0), (1,0), (1,1), ..."""
    return np.tril_indices(d)


def diagonal_slots(d):
    """Positionen der Diagonaleintraege im gepackten Vektor."""
    rows, cols = tril_indices(d)
    return np.flatnonzero(rows == cols)


def _check_eta(eta, d):
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1:] != (d,):
        raise ShapeError(f"Rauschvektor hat Form {eta.shape}, erwartet (..., {d})")
    return eta


class GaussianGuide:
    """Gemeinsame Schnittstelle beider Guides."""

    kind = None

    @property
    def dim(self):
        return self.m.shape[0]

    @property
    def scale_params(self):
        raise NotImplementedError

    @property
    def params(self):
        """Alle Variationsparameter als ein Vektor (m zuerst)."""
        return np.concatenate([self.m, self.scale_params])

    def with_params(self, params):
        raise NotImplementedError

    def param_names(self):
        raise NotImplementedError

    def draw(self, eta):
        raise NotImplementedError

    def entropy(self):
        raise NotImplementedError

    def entropy_grad(self):
        raise NotImplementedError

    def marginal_variance(self):
        raise NotImplementedError

    def sample(self, rng, n):
        """n Ziehungen theta (n x d)."""
        return self.draw(rng.standard_normal((n, self.dim)))


@dataclass(eq=False)
class DiagonalGuide(GaussianGuide):
    m: np.ndarray
    s: np.ndarray
    transform: TransformKind = TransformKind.SOFTPLUS

    kind = "diagonal"

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        self.s = np.asarray(self.s, dtype=float).reshape(-1)
        self.transform = parse_transform(self.transform)
        if self.m.size < 1:
            raise ShapeError("Guide braucht mindestens eine Dimension")
        if self.m.shape != self.s.shape:
            raise ShapeError(f"m hat Laenge {self.m.size}, s hat Laenge {self.s.size}")
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.s))):
            raise DomainError("Guide-Parameter muessen endlich sein")

    @classmethod
    def initial(cls, d, init_sigma=1.0, transform=TransformKind.SOFTPLUS, m=None):
        """Startwerte: m (Standard 0) und s = T^-1(init_sigma)."""
        m = np.zeros(d) if m is None else np.asarray(m, dtype=float)
        s = np.full(d, transform_inverse(transform, init_sigma))
        return cls(m=m, s=s, transform=transform)

    @property
    def scale_params(self):
        return self.s

    @property
    def scale(self):
        """sigma_q = T(s)."""
        return transform_value(self.transform, self.s)

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        d = self.dim
        if params.shape != (2 * d,):
            raise ShapeError(f"Parametervektor hat Form {params.shape}, erwartet ({2 * d},)")
        return DiagonalGuide(m=params[:d].copy(), s=params[d:].copy(), transform=self.transform)

    def param_names(self):
        return [f"m[{i}]" for i in range(self.dim)] + [f"s[{i}]" for i in range(self.dim)]

    def draw(self, eta):
        return reparam_draw_diag(self, eta)

    def entropy(self):
        return entropy_diag(self)

    def entropy_grad(self):
        return entropy_grad_s(self)

    def marginal_variance(self):
        return self.scale ** 2


@dataclass(eq=False)
class FullRankGuide(GaussianGuide):
    m: np.ndarray
    a: np.ndarray
    transform: TransformKind = TransformKind.SOFTPLUS

    kind = "fullrank"

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.transform = parse_transform(self.transform)
        if self.m.size < 1:
            raise ShapeError("Guide braucht mindestens eine Dimension")
        if self.a.size != packed_size(self.m.size):
            raise ShapeError(
                f"a hat Laenge {self.a.size}, erwartet {packed_size(self.m.size)} "
                f"fuer d={self.m.size}"
            )
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.a))):
            raise DomainError("Guide-Parameter muessen endlich sein")

    @classmethod
    def initial(cls, d, init_sigma=1.0, transform=TransformKind.SOFTPLUS, m=None):
        """Startwerte: L = init_sigma * I."""
        m = np.zeros(d) if m is None else np.asarray(m, dtype=float)
        a = np.zeros(packed_size(d))
        a[diagonal_slots(d)] = transform_inverse(transform, init_sigma)
        return cls(m=m, a=a, transform=transform)

    @classmethod
    def from_diagonal(cls, guide):
        """Full-Rank-Guide mit den Diagonalwerten eines diagonalen Guides."""
        d = guide.dim
        a = np.zeros(packed_size(d))
        a[diagonal_slots(d)] = guide.s
        return cls(m=guide.m.copy(), a=a, transform=guide.transform)

    @property
    def scale_params(self):
        return self.a

    @property
    def cholesky(self):
        return cholesky_factor(self.a, self.transform)

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        d = self.dim
        n = d + packed_size(d)
        if params.shape != (n,):
            raise ShapeError(f"Parametervektor hat Form {params.shape}, erwartet ({n},)")
        return FullRankGuide(m=params[:d].copy(), a=params[d:].copy(), transform=self.transform)

    def param_names(self):
        rows, cols = tril_indices(self.dim)
        return [f"m[{i}]" for i in range(self.dim)] + [
            f"a[{i},{j}]" for i, j in zip(rows, cols)
        ]

    def draw(self, eta):
        return reparam_draw_fullrank(self, eta)

    def entropy(self):
        return entropy_fullrank(self)

    def entropy_grad(self):
        return entropy_grad_a(self)

    def marginal_variance(self):
        L = self.cholesky
        return np.sum(L * L, axis=1)


def make_guide(kind, d, init_sigma=1.0, transform=TransformKind.SOFTPLUS, m=None):
    """Factory: 'diagonal' oder 'fullrank'."""
    guides = {
        "diagonal": DiagonalGuide,
        "fullrank": FullRankGuide,
    }
    guide_class = guides.get(kind)
    if guide_class is None:
        raise ConfigError(f"Unbekannter Guide-Typ: '{kind}'. Verfuegbar: {list(guides.keys())}")
    return guide_class.initial(d, init_sigma=init_sigma, transform=transform, m=m)


def reparam_draw_diag(guide, eta):
    """theta = m + T(s) * eta. eta darf (d,) oder (n, d) sein."""
    eta = _check_eta(eta, guide.dim)
    return guide.m + guide.scale * eta


def reparam_draw_fullrank(guide, eta):
    """theta = m + L eta mit L = cholesky_factor(a)."""
    eta = _check_eta(eta, guide.dim)
    L = guide.cholesky
    if eta.ndim == 1:
        return guide.m + L @ eta
    return guide.m + eta @ L.T


def entropy_diag(guide):
    return float(np.sum(np.log(guide.scale)) + guide.dim * _ENTROPY_CONST)


def entropy_grad_s(guide):
    """dH/ds = T'(s) / T(s)."""
    return transform_deriv(guide.transform, guide.s) / transform_value(guide.transform, guide.s)


def cholesky_factor(a, transform=TransformKind.SOFTPLUS):
    """
    Entpackt a in eine untere Dreiecksmatrix. Nebendiagonale direkt,
    Diagonale ueber T, damit sie strikt positiv bleibt.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    d = dim_from_packed(a.size)
    rows, cols = tril_indices(d)
    L = np.zeros((d, d))
    L[rows, cols] = a
    diag = np.arange(d)
    L[diag, diag] = transform_value(transform, np.atleast_1d(a[diagonal_slots(d)]))
    return L


def entropy_fullrank(guide):
    L_diag = np.diag(guide.cholesky)
    return float(np.sum(np.log(L_diag)) + guide.dim * _ENTROPY_CONST)


def entropy_grad_a(guide):
    """H = sum log L_ii + const: nur Diagonal-Slots bekommen T'(a_ii)/L_ii."""
    d = guide.dim
    slots = diagonal_slots(d)
    a_diag = guide.a[slots]
    grad = np.zeros_like(guide.a)
    grad[slots] = transform_deriv(guide.transform, a_diag) / transform_value(guide.transform, a_diag)
    return grad
