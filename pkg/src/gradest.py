"""
Gradientenschaetzer fuer DPVI.
Baut aus den per-Beispiel Modellgradienten und einem Rauschvektor eta die
Zeilen, die geclippt und verrauscht werden, und rekonstruiert bei den
'aligned'-Varianten die Skalengradienten nach der Privatisierung.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.errors import ConfigError, ContractError, ShapeError
from src.guide import DiagonalGuide, FullRankGuide, diagonal_slots, tril_indices
from src.transforms import transform_deriv, transform_value

logger = logging.getLogger(__name__)


class EstimatorVariant(str, Enum):
    VANILLA = "vanilla"
    ALIGNED = "aligned"
    PRECONDITIONED = "preconditioned"
    NATURAL = "natural"
    ALIGNED_NATURAL = "aligned-natural"
    FULL_RANK_VANILLA = "full-rank-vanilla"
    FULL_RANK_ALIGNED = "full-rank-aligned"

    @property
    def is_full_rank(self):
        return self in (EstimatorVariant.FULL_RANK_VANILLA, EstimatorVariant.FULL_RANK_ALIGNED)

    @property
    def is_aligned(self):
        return self in (
            EstimatorVariant.ALIGNED,
            EstimatorVariant.ALIGNED_NATURAL,
            EstimatorVariant.FULL_RANK_ALIGNED,
        )

    @property
    def guide_kind(self):
        return "fullrank" if self.is_full_rank else "diagonal"


# Clipping-Schwellen aus den Experimenten (Standard bzw. Adult-Logistik)
DEFAULT_CLIP_THRESHOLDS = {
    EstimatorVariant.VANILLA: 2.0,
    EstimatorVariant.ALIGNED: 2.0,
    EstimatorVariant.PRECONDITIONED: 4.0,
    EstimatorVariant.NATURAL: 0.1,
    EstimatorVariant.ALIGNED_NATURAL: 0.1,
    EstimatorVariant.FULL_RANK_VANILLA: 0.2,
    EstimatorVariant.FULL_RANK_ALIGNED: 0.2,
}

ADULT_CLIP_THRESHOLDS = {
    EstimatorVariant.VANILLA: 3.0,
    EstimatorVariant.ALIGNED: 3.0,
    EstimatorVariant.PRECONDITIONED: 4.0,
    EstimatorVariant.NATURAL: 0.1,
    EstimatorVariant.ALIGNED_NATURAL: 0.1,
}

CLIP_PRESETS = {
    "default": DEFAULT_CLIP_THRESHOLDS,
    "adult": ADULT_CLIP_THRESHOLDS,
}


def parse_variant(name):
    if isinstance(name, EstimatorVariant):
        return name
    key = str(name).strip().lower().replace("_", "-")
    try:
        return EstimatorVariant(key)
    except ValueError:
        raise ConfigError(
            f"Unbekannte Schaetzer-Variante: '{name}'. "
            f"Verfuegbar: {[v.value for v in EstimatorVariant]}"
        ) from None


def default_clip_threshold(variant, preset="default"):
    variant = parse_variant(variant)
    table = CLIP_PRESETS.get(preset)
    if table is None:
        raise ConfigError(f"Unbekanntes Clipping-Preset: '{preset}'. Verfuegbar: {list(CLIP_PRESETS)}")
    if variant not in table:
        raise ConfigError(f"Preset '{preset}' hat keine Schwelle fuer '{variant.value}'")
    return table[variant]


@dataclass(eq=False)
class PerExampleBatch:
    """Zeilen (B x dim), die dem Clipping uebergeben werden."""

    rows: np.ndarray
    mean_dim: int
    theta: np.ndarray

    @property
    def dim(self):
        return self.rows.shape[1]

    @property
    def size(self):
        return self.rows.shape[0]


@dataclass(eq=False)
class UpdateGradient:
    g_m: np.ndarray
    g_scale: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def vector(self):
        return np.concatenate([self.g_m, self.g_scale])


def _check_compatible(variant, guide):
    variant = parse_variant(variant)
    expected = FullRankGuide if variant.is_full_rank else DiagonalGuide
    if not isinstance(guide, expected):
        raise ConfigError(
            f"Variante '{variant.value}' braucht {expected.__name__}, "
            f"bekommen: {type(guide).__name__}"
        )
    return variant


def fisher_inverse_blocks(guide):
    """
    Geschlossene Diagonal-Bloecke der inversen Fisher-Matrix:
    I_m^-1 = T(s)^2, I_s^-1 = T(s)^2 / (2 T'(s)^2).
    """
    sigma = transform_value(guide.transform, guide.s)
    deriv = transform_deriv(guide.transform, guide.s)
    return sigma**2, sigma**2 / (2.0 * deriv**2)


def per_example_gm(model, theta, X, y, N):
    """g_{m,x} = grad log p(x|theta) + grad log p(theta) / N, fuer jede Zeile von X."""
    return model.per_example_loglik_grad(X, y, theta) + model.log_prior_grad(theta) / N


def per_example_gs(g_mx, eta, guide, N):
    """g_{s,x} = eta * T'(s) * g_{m,x} + grad_s H / N."""
    g_mx = np.asarray(g_mx, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if g_mx.shape[-1] != guide.dim or eta.shape != (guide.dim,):
        raise ShapeError(
            f"g_m {g_mx.shape} und eta {eta.shape} passen nicht zu d={guide.dim}"
        )
    deriv = transform_deriv(guide.transform, guide.s)
    return eta * deriv * g_mx + guide.entropy_grad() / N


def _fullrank_jacobian_map(g_m, eta, guide):
    """
    Bildet g_m (... x d) auf den gepackten a-Gradienten ab:
    (i,j), i>j: eta_j g_m[i];  (i,i): T'(a_ii) eta_i g_m[i].
    """
    d = guide.dim
    rows, cols = tril_indices(d)
    weights = eta[cols].copy()
    slots = diagonal_slots(d)
    weights[slots] *= transform_deriv(guide.transform, guide.a[slots])
    return g_m[..., rows] * weights


def per_example_ga(g_mx, eta, guide, N):
    """Full-Rank-Gegenstueck zu per_example_gs."""
    g_mx = np.asarray(g_mx, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if g_mx.shape[-1] != guide.dim or eta.shape != (guide.dim,):
        raise ShapeError(
            f"g_m {g_mx.shape} und eta {eta.shape} passen nicht zu d={guide.dim}"
        )
    return _fullrank_jacobian_map(g_mx, eta, guide) + guide.entropy_grad() / N


def build_per_example_batch(variant, guide, model, X, y, eta, N):
    """Per-Beispiel-Zeilen der gewaehlten Variante (noch ungeclippt)."""
    variant = _check_compatible(variant, guide)
    eta = np.asarray(eta, dtype=float)
    theta = guide.draw(eta)
    g_m = per_example_gm(model, theta, X, y, N)
    d = guide.dim

    if variant in (EstimatorVariant.ALIGNED, EstimatorVariant.FULL_RANK_ALIGNED):
        rows = g_m
    elif variant is EstimatorVariant.ALIGNED_NATURAL:
        inv_m, _ = fisher_inverse_blocks(guide)
        rows = inv_m * g_m
    elif variant is EstimatorVariant.VANILLA:
        rows = np.hstack([g_m, per_example_gs(g_m, eta, guide, N)])
    elif variant is EstimatorVariant.PRECONDITIONED:
        deriv = transform_deriv(guide.transform, guide.s)
        rows = np.hstack([g_m, per_example_gs(g_m, eta, guide, N) / deriv])
    elif variant is EstimatorVariant.NATURAL:
        inv_m, inv_s = fisher_inverse_blocks(guide)
        rows = np.hstack([inv_m * g_m, inv_s * per_example_gs(g_m, eta, guide, N)])
    else:
        rows = np.hstack([g_m, per_example_ga(g_m, eta, guide, N)])

    return PerExampleBatch(rows=rows, mean_dim=d, theta=theta)


def postprocess_scale(variant, g_m_noised, eta, guide, entropy_grad=None, entropy_weight=1.0):
    """
    Skalengradient aus dem privatisierten Mittelwertgradienten (reine
    Nachverarbeitung, kostet kein Privacy-Budget).
    """
    variant = _check_compatible(variant, guide)
    if not variant.is_aligned:
        raise ContractError(f"Variante '{variant.value}' hat keine Nachverarbeitung")
    g_m_noised = np.asarray(g_m_noised, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if entropy_grad is None:
        entropy_grad = guide.entropy_grad()
    entropy_term = entropy_weight * entropy_grad

    if variant is EstimatorVariant.FULL_RANK_ALIGNED:
        return _fullrank_jacobian_map(g_m_noised, eta, guide) + entropy_term

    deriv = transform_deriv(guide.transform, guide.s)
    if variant is EstimatorVariant.ALIGNED:
        return eta * deriv * g_m_noised + entropy_term

    # aligned-natural: I_m = 1 / T(s)^2 macht die natuerliche Skalierung rueckgaengig
    inv_m, inv_s = fisher_inverse_blocks(guide)
    return inv_s * (eta * deriv * (g_m_noised / inv_m) + entropy_term)


def assemble_update(variant, noised_sum, eta, guide, entropy_weight=1.0):
    """Zerlegt die verrauschte Summe in (g_m, g_scale)."""
    variant = _check_compatible(variant, guide)
    d = guide.dim
    if variant.is_aligned:
        g_m = noised_sum[:d]
        g_scale = postprocess_scale(variant, g_m, eta, guide, entropy_weight=entropy_weight)
    else:
        g_m = noised_sum[:d]
        g_scale = noised_sum[d:]
    return UpdateGradient(g_m=np.array(g_m), g_scale=np.array(g_scale))


def row_norm_diagnostics(batch):
    """Mittlere Normen des m-Teils und des Skalenteils (vor dem Clipping)."""
    if batch.size == 0:
        return {"norm_m": 0.0, "norm_scale": 0.0}
    rows = batch.rows
    d = batch.mean_dim
    norm_m = float(np.mean(np.linalg.norm(rows[:, :d], axis=1)))
    norm_scale = float(np.mean(np.linalg.norm(rows[:, d:], axis=1))) if rows.shape[1] > d else 0.0
    return {"norm_m": norm_m, "norm_scale": norm_scale}
