"""
DPVI-Trainingsschleife.
Pro Iteration: Poisson-Subsampling -> eta ziehen -> per-Beispiel-Zeilen ->
Clipping -> Summe -> Gauss-Mechanismus -> Nachverarbeitung -> Skalierung
mit 1/(qN) -> Adam-Schritt -> Snapshot.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from src.errors import ConfigError, DataError, DivergenceError, ShapeError
from src.gradest import assemble_update, build_per_example_batch, row_norm_diagnostics
from src.guide import make_guide
from src.privacy import (
    account_privacy,
    clip_rows,
    clipped_fraction,
    derive_rng,
    gaussian_mechanism,
    poisson_subsample,
)
from src.transforms import TransformKind

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8


@dataclass(eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n, learning_rate=1e-3):
        return cls(first_moment=np.zeros(n), second_moment=np.zeros(n), learning_rate=learning_rate)


def adam_step(state, params, grad):
    """
    Ein Adam-Schritt (Minimierung) mit Bias-Korrektur.
    Gibt (neue Parameter, neuer Zustand) zurueck, die Eingaben bleiben unveraendert.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.first_moment.shape != params.shape:
        raise ShapeError(
            f"Adam: Parameter {params.shape}, Gradient {grad.shape}, "
            f"Momente {state.first_moment.shape}"
        )
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (grad * grad)

    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params = params - (state.learning_rate / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
    return new_params, replace(state, first_moment=m, second_moment=v, step=t)


@dataclass(eq=False)
class Trace:
    """Parameterverlauf eines Laufs, ein Snapshot pro Iteration (nach dem Update)."""

    snapshots: np.ndarray
    param_names: list
    config: object
    spend: object
    initial: np.ndarray
    guide_kind: str
    transform: TransformKind
    dim: int
    elbo: np.ndarray = None
    norm_m: np.ndarray = None
    norm_scale: np.ndarray = None
    clipped_fraction: np.ndarray = None
    batch_sizes: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return self.snapshots.shape[0]

    @property
    def mean_trace(self):
        return self.snapshots[:, : self.dim]

    @property
    def scale_trace(self):
        return self.snapshots[:, self.dim :]

    def column(self, name):
        try:
            return self.snapshots[:, self.param_names.index(name)]
        except ValueError:
            raise ConfigError(f"Unbekannter Parameter im Trace: '{name}'") from None

    def guide_from(self, params):
        return make_guide(self.guide_kind, self.dim, transform=self.transform).with_params(params)

    def final_guide(self):
        return self.guide_from(self.snapshots[-1])


def iterations_for_epochs(epochs, q):
    """T = round(epochs / q), mindestens 1."""
    if not epochs > 0:
        raise ConfigError(f"Epochen muessen > 0 sein: {epochs}")
    if not 0 < q <= 1:
        raise ConfigError(f"Subsampling-Rate muss in (0, 1] liegen: {q}")
    return max(1, int(round(epochs / q)))


def initial_guide(kind, d, init_sigma=1.0, transform=TransformKind.SOFTPLUS, init_mean_std=0.0, seed=0):
    """Start-Guide; m ~ N(0, init_mean_std^2) aus dem 'init'-Strom des Seeds."""
    m = None
    if init_mean_std > 0:
        m = init_mean_std * derive_rng(seed, 0, "init").standard_normal(d)
    return make_guide(kind, d, init_sigma=init_sigma, transform=transform, m=m)


def compute_update(config, guide, model, X, y, eta, psi_rng, N):
    """
    Privatisierter Update-Gradient eines Batches, bereits durch qN geteilt.
    Gibt (Gradientenvektor, Batch, Diagnose) zurueck.
    """
    C = config.clip_threshold
    q = config.subsample_ratio
    batch = build_per_example_batch(config.variant, guide, model, X, y, eta, N)

    diagnostics = row_norm_diagnostics(batch)
    diagnostics["clipped_fraction"] = clipped_fraction(batch.rows, C)

    total = clip_rows(batch.rows, C).sum(axis=0)
    psi = psi_rng.standard_normal(batch.dim)
    noised = gaussian_mechanism(total, C, config.noise_multiplier, psi)

    update = assemble_update(config.variant, noised, eta, guide, entropy_weight=q)
    return update.vector / (q * N), batch, diagnostics


def elbo_estimate(model, guide, X, y, theta, q):
    """Einzel-Stichproben-ELBO: (1/q) sum_batch log p(x|theta) + log p(theta) + H(q)."""
    loglik = float(np.sum(model.per_example_loglik(X, y, theta))) if len(y) else 0.0
    return loglik / q + model.log_prior(theta) + guide.entropy()


def run_dpvi(model, guide, dataset, config, learning_rate=1e-3, log_every=1000, conversion="classic"):
    """Fuehrt config.iterations DPVI-Schritte aus und liefert den Trace."""
    if dataset.n < 1:
        raise DataError("Datensatz ist leer")
    if model.dim != guide.dim:
        raise ShapeError(f"Modell hat d={model.dim}, Guide hat d={guide.dim}")
    if config.variant.guide_kind != guide.kind:
        raise ConfigError(
            f"Variante '{config.variant.value}' passt nicht zu Guide '{guide.kind}'"
        )
    if not config.clipping_enabled and config.noise_multiplier > 0:
        raise ConfigError("sigma_DP > 0 braucht eine endliche Clipping-Schwelle")
    model.check_targets(dataset.targets)

    N = dataset.n
    q = config.subsample_ratio
    T = config.iterations
    seed = config.seed
    params = guide.params.copy()
    initial = params.copy()
    state = AdamState.zeros(params.size, learning_rate=learning_rate)

    snapshots = np.empty((T, params.size))
    elbo = np.empty(T)
    norm_m = np.empty(T)
    norm_scale = np.empty(T)
    clipped = np.empty(T)
    batch_sizes = np.empty(T, dtype=int)

    logger.info(
        f"DPVI startet: Variante={config.variant.value}, N={N}, d={guide.dim}, T={T}, "
        f"q={q}, C={config.clip_threshold}, sigma_DP={config.noise_multiplier}"
    )

    for t in range(T):
        idx = poisson_subsample(N, q, derive_rng(seed, t, "subsample"))
        X, y = dataset.subset(idx)
        eta = derive_rng(seed, t, "eta").standard_normal(guide.dim)

        try:
            grad, batch, diagnostics = compute_update(
                config, guide, model, X, y, eta, derive_rng(seed, t, "psi"), N
            )
        except DataError as e:
            raise DivergenceError(f"Nicht-endlicher Gradient in Iteration {t}: {e}", t) from e

        elbo[t] = elbo_estimate(model, guide, X, y, batch.theta, q)
        # Aufstieg auf dem ELBO = Abstieg auf -ELBO
        params, state = adam_step(state, params, -grad)

        if not np.all(np.isfinite(params)) or np.any(np.abs(params) > DIVERGENCE_LIMIT):
            raise DivergenceError(f"Optimierung divergiert in Iteration {t}", t)

        guide = guide.with_params(params)
        snapshots[t] = params
        norm_m[t] = diagnostics["norm_m"]
        norm_scale[t] = diagnostics["norm_scale"]
        clipped[t] = diagnostics["clipped_fraction"]
        batch_sizes[t] = idx.size

        if log_every and (t + 1) % log_every == 0:
            lo = max(0, t + 1 - log_every)
            logger.info(
                f"Iteration {t + 1}/{T}: ELBO~{np.mean(elbo[lo : t + 1]):.4f}, "
                f"geclippt={np.mean(clipped[lo : t + 1]):.3f}"
            )

    spend = account_privacy(config.noise_multiplier, q, T, config.delta, conversion=conversion)
    eps_text = "inf" if math.isinf(spend.epsilon) else f"{spend.epsilon:.4f}"
    logger.info(f"DPVI fertig: epsilon={eps_text}, delta={spend.delta:g}")

    return Trace(
        snapshots=snapshots,
        param_names=guide.param_names(),
        config=config,
        spend=spend,
        initial=initial,
        guide_kind=guide.kind,
        transform=guide.transform,
        dim=guide.dim,
        elbo=elbo,
        norm_m=norm_m,
        norm_scale=norm_scale,
        clipped_fraction=clipped,
        batch_sizes=batch_sizes,
    )
