"""
Nachgelagerte Trace-Auswertung: Burn-out-Erkennung per linearer Regression,
Iterate-Averaging, Schaetzung der DP-Rauschvarianz, rauschbewusste Posterior
und ein Simulator fuer DP-SGD auf einer quadratischen Verlustfunktion
(AR(1)/OU-Prozess) zur Pruefung der Theorie.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

from src.errors import AnalysisError, ConfigError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_SLOPE_THRESHOLD = 0.05
DEFAULT_WINDOW_FRACTIONS = (1 / 8, 1 / 4, 1 / 2, 3 / 4)
SLOPE_MODES = ("normalized", "raw")


@dataclass
class BurnOutReport:
    """Pro Parameter: gewaehltes T_burn_out (0 = nicht konvergiert), Steigung, Flag."""

    burn_out: np.ndarray
    slope: np.ndarray
    converged: np.ndarray
    threshold: float = DEFAULT_SLOPE_THRESHOLD
    mode: str = "normalized"
    candidates: list = field(default_factory=list)

    @property
    def n_params(self):
        return self.burn_out.size

    @property
    def any_converged(self):
        return bool(np.any(self.converged))


@dataclass(eq=False)
class NoiseAwarePosterior:
    mean: np.ndarray
    scale_params: np.ndarray
    base_var: np.ndarray
    trace_var_m: np.ndarray
    trace_var_scale: np.ndarray
    inflated_var: np.ndarray
    converged_m: np.ndarray
    guide: object = None

    def interval(self, z=1.959963984540054, inflated=True):
        """Marginale Intervalle m +- z * sd; NaN fuer nicht konvergierte Koordinaten."""
        var = self.inflated_var if inflated else self.base_var
        half = z * np.sqrt(var)
        return self.mean - half, self.mean + half


@dataclass
class OuSimConfig:
    """DP-SGD auf L(xi) = xi^T A xi / 2: Kruemmung A, Schrittweite alpha, Rauschen B und sigma_DP."""

    A: np.ndarray
    alpha: float
    sigma_dp: float
    B: np.ndarray
    steps: int

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = self.A.shape[0]
        B = np.asarray(self.B, dtype=float)
        self.B = B * np.eye(d) if B.ndim == 0 else np.atleast_2d(B)
        self.alpha = float(self.alpha)
        self.sigma_dp = float(self.sigma_dp)
        self.steps = int(self.steps)

        if self.A.shape != (d, d) or self.B.shape != (d, d):
            raise ShapeError(f"A {self.A.shape} und B {self.B.shape} muessen quadratisch und gleich gross sein")
        if not np.allclose(self.A, self.A.T):
            raise ConfigError("A muss symmetrisch sein")
        eigvals = np.linalg.eigvalsh(self.A)
        if eigvals[0] <= 0:
            raise ConfigError(f"A muss positiv definit sein (kleinster Eigenwert {eigvals[0]:.3g})")
        if not self.alpha > 0 or self.alpha * eigvals[-1] >= 2:
            raise ConfigError(
                f"Instabil: alpha * lambda_max = {self.alpha * eigvals[-1]:.3g} (muss in (0, 2) liegen)"
            )
        if self.sigma_dp < 0:
            raise ConfigError(f"sigma_DP muss >= 0 sein: {self.sigma_dp}")
        if self.steps < 1:
            raise ConfigError(f"Mindestens ein Schritt noetig: {self.steps}")

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def noise_covariance(self):
        """B B^T + sigma_DP^2 I."""
        return self.B @ self.B.T + self.sigma_dp**2 * np.eye(self.dim)

    @property
    def mixing_time(self):
        """1 / (alpha lambda_min) Schritte."""
        return 1.0 / (self.alpha * np.linalg.eigvalsh(self.A)[0])


# ============================================================
# Burn-out
# ============================================================
def _as_columns(values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return values.reshape(-1, 1)
    if values.ndim != 2:
        raise ShapeError(f"Trace muss 1- oder 2-dimensional sein, ist {values.ndim}-dimensional")
    return values


def default_candidates(length):
    """Nachlaufende Fenster T/8, T/4, T/2, 3T/4 (jeweils mindestens 2)."""
    return sorted({max(2, int(length * f)) for f in DEFAULT_WINDOW_FRACTIONS if length * f >= 2})


def fit_slope(window):
    """OLS-Steigung der Werte gegen L aequidistante Punkte auf [0, 1] (spaltenweise)."""
    window = _as_columns(window)
    L = window.shape[0]
    if L < 2:
        raise ConfigError(f"Fensterlaenge muss >= 2 sein: {L}")
    x = np.linspace(0.0, 1.0, L)
    xc = x - x.mean()
    return xc @ (window - window.mean(axis=0)) / (xc @ xc)


def detect_burn_out(values, candidates=None, slope_threshold=DEFAULT_SLOPE_THRESHOLD, mode="normalized"):
    """
    Prueft jedes nachlaufende Kandidatenfenster auf |Steigung| < Schwelle und
    waehlt pro Parameter das laengste bestandene Fenster.
    """
    if mode not in SLOPE_MODES:
        raise ConfigError(f"Unbekannter Modus: '{mode}'. Verfuegbar: {list(SLOPE_MODES)}")
    values = _as_columns(values)
    length, n_params = values.shape
    if candidates is None:
        candidates = default_candidates(length)
    candidates = sorted({int(c) for c in candidates})
    if not candidates:
        raise ConfigError(f"Trace der Laenge {length} ist zu kurz fuer Kandidatenfenster")
    if candidates[0] < 2:
        raise ConfigError(f"Fensterlaenge muss >= 2 sein: {candidates[0]}")
    if candidates[-1] > length:
        raise ConfigError(f"Fenster {candidates[-1]} laenger als der Trace ({length})")

    burn_out = np.zeros(n_params, dtype=int)
    slope_out = np.full(n_params, np.nan)
    converged = np.zeros(n_params, dtype=bool)

    for L in candidates:
        window = values[-L:]
        slope = fit_slope(window)
        if mode == "normalized":
            span = window.max(axis=0) - window.min(axis=0)
            slope = np.where(span > 0, slope / np.where(span > 0, span, 1.0), slope)
        passed = np.abs(slope) < slope_threshold
        # Kandidaten aufsteigend: spaetere (laengere) Fenster ueberschreiben
        burn_out[passed] = L
        slope_out[passed] = slope[passed]
        converged |= passed
        if L == candidates[0]:
            slope_out[~passed] = slope[~passed]

    logger.debug(
        f"Burn-out: {int(converged.sum())}/{n_params} Parameter konvergiert "
        f"(Schwelle {slope_threshold}, Modus {mode})"
    )
    return BurnOutReport(
        burn_out=burn_out,
        slope=slope_out,
        converged=converged,
        threshold=slope_threshold,
        mode=mode,
        candidates=candidates,
    )


# ============================================================
# Averaging und Varianz
# ============================================================
def _window_lengths(burn_out, n_params, length, minimum):
    lengths = np.broadcast_to(np.asarray(burn_out, dtype=int), (n_params,))
    if np.any(lengths < minimum):
        raise ConfigError(f"Fensterlaenge muss >= {minimum} sein: {lengths.min()}")
    if np.any(lengths > length):
        raise ConfigError(f"Fenster {lengths.max()} laenger als der Trace ({length})")
    return lengths


def iterate_average(values, burn_out):
    """Mittelwert der letzten T_burn_out Snapshots (skalar oder pro Parameter)."""
    arr = np.asarray(values, dtype=float)
    cols = _as_columns(arr)
    lengths = _window_lengths(burn_out, cols.shape[1], cols.shape[0], 1)
    result = np.array([cols[-L:, j].mean() for j, L in enumerate(lengths)])
    return float(result[0]) if arr.ndim == 1 else result


def estimate_dp_noise_variance(values, burn_out):
    """Erwartungstreue Stichprobenvarianz (n-1) ueber das nachlaufende Fenster."""
    arr = np.asarray(values, dtype=float)
    cols = _as_columns(arr)
    lengths = _window_lengths(burn_out, cols.shape[1], cols.shape[0], 2)
    result = np.array([cols[-L:, j].var(ddof=1) for j, L in enumerate(lengths)])
    return float(result[0]) if arr.ndim == 1 else result


def build_noise_aware_posterior(trace, report):
    """
    Gemittelte Guide-Parameter plus um die Trace-Varianz von m erhoehte
    Randvarianzen. Nicht konvergierte Parameter nutzen die letzte Iteration,
    ihre erhoehte Varianz ist NaN.
    """
    snapshots = np.asarray(trace.snapshots, dtype=float)
    length, n_params = snapshots.shape
    if report.n_params != n_params:
        raise ShapeError(f"Report hat {report.n_params} Parameter, Trace hat {n_params}")
    if not report.any_converged:
        raise AnalysisError("Kein Parameter konvergiert - keine Posterior ableitbar")

    windows = np.where(report.converged, report.burn_out, 1)
    averaged = iterate_average(snapshots, windows)

    trace_var = np.full(n_params, np.nan)
    usable = report.converged & (report.burn_out >= 2)
    if np.any(usable):
        trace_var[usable] = estimate_dp_noise_variance(snapshots[:, usable], report.burn_out[usable])

    d = trace.dim
    guide = trace.guide_from(averaged)
    base_var = guide.marginal_variance()
    converged_m = usable[:d]
    inflated = np.where(converged_m, base_var + np.nan_to_num(trace_var[:d]), np.nan)

    n_missing = int(np.sum(~converged_m))
    if n_missing:
        logger.warning(f"{n_missing} Mittelwert-Parameter nicht konvergiert - Varianz fehlt")

    return NoiseAwarePosterior(
        mean=averaged[:d],
        scale_params=averaged[d:],
        base_var=base_var,
        trace_var_m=trace_var[:d],
        trace_var_scale=trace_var[d:],
        inflated_var=inflated,
        converged_m=converged_m,
        guide=guide,
    )


# ============================================================
# DP-SGD auf quadratischem Verlust (AR(1) / OU)
# ============================================================
def simulate_dp_sgd_quadratic(cfg, seed=0):
    """
    xi(t+1) = xi(t) - alpha (A xi(t) + B eta_t + sigma_DP psi_t), xi(0) = 0.
    Liefert die Iterierten xi(1..steps) als (steps x d).
    """
    rng = np.random.default_rng(seed)
    d = cfg.dim
    eta = rng.standard_normal((cfg.steps, d))
    psi = rng.standard_normal((cfg.steps, d))
    drive = -cfg.alpha * (eta @ cfg.B.T + cfg.sigma_dp * psi)
    M = np.eye(d) - cfg.alpha * cfg.A

    if d == 1:
        # AR(1) als IIR-Filter
        return signal.lfilter([1.0], [1.0, -M[0, 0]], drive[:, 0]).reshape(-1, 1)

    xi = np.zeros(d)
    out = np.empty((cfg.steps, d))
    for t in range(cfg.steps):
        xi = M @ xi + drive[t]
        out[t] = xi
    return out


def ou_stationary_covariance(cfg):
    """Exakte stationaere Kovarianz der Rekursion: S = M S M^T + alpha^2 (B B^T + sigma^2 I)."""
    M = np.eye(cfg.dim) - cfg.alpha * cfg.A
    return linalg.solve_discrete_lyapunov(M, cfg.alpha**2 * cfg.noise_covariance)


def ou_continuous_covariance(cfg):
    """OU-Naeherung: A S + S A^T = alpha (B B^T + sigma^2 I)."""
    return linalg.solve_continuous_lyapunov(cfg.A, cfg.alpha * cfg.noise_covariance)
