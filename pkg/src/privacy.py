"""
DP-SGD-Bausteine: Clipping, Gauss-Mechanismus, Poisson-Subsampling,
reproduzierbare Zufallsstroeme und ein Renyi-DP-Accountant fuer den
subsampelten Gauss-Mechanismus (inkl. Kalibrierung von sigma_DP).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from src.errors import CalibrationError, ConfigError, DataError, DomainError
from src.gradest import EstimatorVariant, parse_variant

logger = logging.getLogger(__name__)

# Zweck -> Index im SeedSequence-Spawn-Key
RNG_PURPOSES = {
    "subsample": 0,
    "eta": 1,
    "psi": 2,
    "init": 3,
}

# Renyi-Ordnungen: gebrochen in (1, 11), dann ganzzahlig bis 512
DEFAULT_ORDERS = tuple(
    [1.0 + x / 4.0 for x in range(1, 40)]
    + list(range(11, 65))
    + [80, 96, 128, 160, 192, 256, 320, 384, 448, 512]
)

ACCOUNTANT_NOTE = (
    "Hinweis: epsilon stammt aus einem Renyi-DP-Accountant "
    "(konservativer als ein Fourier-/PLD-Accountant)."
)

_MAX_STEPS_LOG_A_FRAC = 1000
_MAX_CALIBRATION_SIGMA = 1e6


@dataclass
class DpSgdConfig:
    """Parameter eines DP-SGD-Laufs. clip_threshold=inf schaltet Clipping ab."""

    clip_threshold: float
    noise_multiplier: float
    subsample_ratio: float
    iterations: int
    delta: float
    seed: int = 0
    variant: EstimatorVariant = EstimatorVariant.ALIGNED

    def __post_init__(self):
        self.variant = parse_variant(self.variant)
        self.clip_threshold = float(self.clip_threshold)
        self.noise_multiplier = float(self.noise_multiplier)
        self.subsample_ratio = float(self.subsample_ratio)
        self.iterations = int(self.iterations)
        self.delta = float(self.delta)
        self.seed = int(self.seed)
        if not self.clip_threshold > 0:
            raise ConfigError(f"Clipping-Schwelle muss > 0 sein: {self.clip_threshold}")
        if not (math.isfinite(self.noise_multiplier) and self.noise_multiplier >= 0):
            raise ConfigError(f"sigma_DP muss >= 0 sein: {self.noise_multiplier}")
        if not 0 < self.subsample_ratio <= 1:
            raise ConfigError(f"Subsampling-Rate muss in (0, 1] liegen: {self.subsample_ratio}")
        if self.iterations < 1:
            raise ConfigError(f"Mindestens eine Iteration noetig: {self.iterations}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta muss in (0, 1) liegen: {self.delta}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"Seed muss eine 64-Bit-Zahl >= 0 sein: {self.seed}")

    @property
    def clipping_enabled(self):
        return math.isfinite(self.clip_threshold)


@dataclass
class PrivacySpend:
    epsilon: float
    delta: float
    order: float = None
    accountant: str = "rdp"

    @property
    def is_finite(self):
        return math.isfinite(self.epsilon)


# ============================================================
# Zufallsstroeme
# ============================================================
def derive_rng(seed, iteration, purpose):
    """
    Unabhaengiger Generator fuer (seed, iteration, zweck), zustandslos
    abgeleitet. Philox ist zaehlerbasiert, die Reihenfolge der Aufrufe
    spielt daher keine Rolle.
    """
    if purpose not in RNG_PURPOSES:
        raise ConfigError(f"Unbekannter Zufallsstrom: '{purpose}'. Verfuegbar: {list(RNG_PURPOSES)}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(iteration), RNG_PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(seq))


# ============================================================
# Mechanismus
# ============================================================
def clip_row(g, C):
    """gamma * g mit gamma = min(1, C / ||g||); der Nullvektor bleibt unveraendert."""
    g = np.asarray(g, dtype=float)
    return clip_rows(g.reshape(1, -1), C)[0]


def clip_rows(rows, C):
    """Zeilenweises Clipping; liefert die geclippten Zeilen."""
    if not C > 0:
        raise ConfigError(f"Clipping-Schwelle muss > 0 sein: {C}")
    rows = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise DataError("Nicht-endlicher Gradient beim Clipping")
    if not math.isfinite(C) or rows.shape[0] == 0:
        return rows.copy()
    norms = np.linalg.norm(rows, axis=1)
    gamma = np.ones_like(norms)
    over = norms > C
    gamma[over] = C / norms[over]
    return rows * gamma[:, None]


def clipped_fraction(rows, C):
    if rows.shape[0] == 0 or not math.isfinite(C):
        return 0.0
    return float(np.mean(np.linalg.norm(rows, axis=1) > C))


def gaussian_mechanism(total, C, sigma, psi):
    """total + sigma * C * psi (sigma = 0 ist die Identitaet, auch fuer C = inf)."""
    total = np.asarray(total, dtype=float)
    if sigma == 0:
        return total.copy()
    if not math.isfinite(C):
        raise ConfigError("Rauschen ohne Clipping hat unbeschraenkte Sensitivitaet")
    return total + sigma * C * np.asarray(psi, dtype=float)


def poisson_subsample(N, q, rng):
    """Jeder Index unabhaengig mit Wahrscheinlichkeit q; der Batch darf leer sein."""
    if not 0 < q <= 1:
        raise ConfigError(f"Subsampling-Rate muss in (0, 1] liegen: {q}")
    return np.flatnonzero(rng.random(N) < q)


# ============================================================
# Renyi-DP-Accountant
# ============================================================
def _log_add(logx, logy):
    a, b = min(logx, logy), max(logx, logy)
    if a == -np.inf:
        return b
    return math.log1p(math.exp(a - b)) + b


def _log_sub(logx, logy):
    """log(exp(logx) - exp(logy)); das Ergebnis muss nicht-negativ sein."""
    if logx < logy:
        raise DomainError("Subtraktion im Log-Raum ergibt einen negativen Wert")
    if logy == -np.inf:
        return logx
    if logx == logy:
        return -np.inf
    try:
        return math.log(math.expm1(logx - logy)) + logy
    except OverflowError:
        return logx


def _log_comb(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def _log_erfc(x):
    return math.log(2) + special.log_ndtr(-x * 2**0.5)


def _compute_log_a_int(q, sigma, alpha):
    """log(A_alpha) fuer ganzzahliges alpha als log-Summe ueber die Binomialterme."""
    i = np.arange(alpha + 1, dtype=float)
    log_coef = _log_comb(float(alpha), i) + i * math.log(q) + (alpha - i) * math.log1p(-q)
    return float(special.logsumexp(log_coef + (i * i - i) / (2 * sigma**2)))


def _compute_log_a_frac(q, sigma, alpha):
    """log(A_alpha) fuer gebrochenes alpha (zwei Teilintegrale um z0)."""
    log_a0, log_a1 = -np.inf, -np.inf
    z0 = sigma**2 * math.log(1 / q - 1) + 0.5
    log1mq = math.log1p(-q)
    last_s0 = last_s1 = -np.inf

    for i in range(_MAX_STEPS_LOG_A_FRAC):
        # C(alpha, i) wechselt fuer i > alpha das Vorzeichen
        positive = special.binom(alpha, i) > 0
        log_coef = _log_comb(alpha, i)
        j = alpha - i

        log_t0 = log_coef + i * math.log(q) + j * log1mq
        log_t1 = log_coef + j * math.log(q) + i * log1mq

        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2) * sigma))

        log_s0 = log_t0 + (i * i - i) / (2 * (sigma**2)) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2 * (sigma**2)) + log_e1

        if positive:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        total = _log_add(log_a0, log_a1)

        if log_s0 < last_s0 and log_s1 < last_s1 and max(log_s0, log_s1) < total - 30:
            return total

        last_s0 = log_s0
        last_s1 = log_s1

    logger.warning(
        f"log(A_alpha) konvergiert nicht nach {_MAX_STEPS_LOG_A_FRAC} Schritten "
        f"(q={q}, sigma={sigma}, alpha={alpha}) - Ordnung wird ignoriert"
    )
    return np.inf


def compute_rdp(q, sigma, orders=DEFAULT_ORDERS):
    """RDP eines Schritts des Poisson-subsampelten Gauss-Mechanismus, je Ordnung."""
    if not 0 <= q <= 1:
        raise ConfigError(f"Subsampling-Rate muss in [0, 1] liegen: {q}")
    if sigma < 0:
        raise ConfigError(f"sigma_DP muss >= 0 sein: {sigma}")

    def one_order(alpha):
        if q == 0:
            return 0.0
        if sigma == 0 or np.isinf(alpha):
            return np.inf
        if q == 1.0:
            return alpha / (2 * sigma**2)
        if float(alpha).is_integer():
            log_a = _compute_log_a_int(q, sigma, int(alpha))
        else:
            log_a = _compute_log_a_frac(q, sigma, alpha)
        return log_a / (alpha - 1)

    return np.array([one_order(alpha) for alpha in orders])


def rdp_to_epsilon(orders, rdp, delta, conversion="classic"):
    """
    Umrechnung RDP -> (epsilon, delta). 'classic': rdp + log(1/delta)/(alpha-1);
    'improved': rdp + log(1 - 1/alpha) - log(delta alpha)/(alpha-1).
    Liefert (epsilon, optimale Ordnung).
    """
    orders = np.asarray(orders, dtype=float)
    rdp = np.asarray(rdp, dtype=float)
    if orders.shape != rdp.shape:
        raise ConfigError("Ordnungen und RDP-Werte muessen gleich lang sein")
    if conversion == "classic":
        eps = rdp + math.log(1.0 / delta) / (orders - 1.0)
    elif conversion == "improved":
        eps = rdp + np.log1p(-1.0 / orders) - np.log(delta * orders) / (orders - 1.0)
    else:
        raise ConfigError(f"Unbekannte Umrechnung: '{conversion}'. Verfuegbar: ['classic', 'improved']")
    eps = np.where(np.isnan(eps), np.inf, eps)
    idx = int(np.argmin(eps))
    return max(0.0, float(eps[idx])), float(orders[idx])


def account_privacy(sigma, q, iterations, delta, orders=DEFAULT_ORDERS, conversion="classic"):
    """(epsilon, delta) nach T Schritten; sigma = 0 liefert epsilon = inf."""
    if not 0 < delta < 1:
        raise ConfigError(f"delta muss in (0, 1) liegen: {delta}")
    if sigma == 0:
        logger.warning("sigma_DP = 0: kein Privatsphaere-Schutz, epsilon = inf")
        return PrivacySpend(epsilon=math.inf, delta=delta)
    rdp = iterations * compute_rdp(q, sigma, orders)
    eps, order = rdp_to_epsilon(orders, rdp, delta, conversion)
    logger.debug(f"RDP-Accountant: sigma={sigma:.4g}, q={q}, T={iterations} -> eps={eps:.4f} (alpha={order})")
    return PrivacySpend(epsilon=eps, delta=delta, order=order)


def calibrate_noise(target_epsilon, delta, q, iterations, conversion="classic", tolerance=0.01):
    """
    Bisektion auf sigma_DP, bis epsilon in [(1 - tolerance) * Ziel, Ziel] liegt.
    Das Ergebnis haelt das Ziel immer ein (konservative Seite).
    """
    if not target_epsilon > 0:
        raise ConfigError(f"Ziel-epsilon muss > 0 sein: {target_epsilon}")

    def eps_at(sigma):
        return account_privacy(sigma, q, iterations, delta, conversion=conversion).epsilon

    hi = 1.0
    while eps_at(hi) > target_epsilon:
        hi *= 2.0
        if hi > _MAX_CALIBRATION_SIGMA:
            raise CalibrationError(
                f"epsilon={target_epsilon} bei delta={delta}, q={q}, T={iterations} "
                f"mit sigma_DP <= {_MAX_CALIBRATION_SIGMA:g} nicht erreichbar"
            )
    lo = 0.0

    for _ in range(200):
        eps_hi = eps_at(hi)
        if eps_hi >= (1.0 - tolerance) * target_epsilon:
            break
        mid = 0.5 * (lo + hi)
        if eps_at(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    else:
        raise CalibrationError(f"Bisektion fuer epsilon={target_epsilon} konvergiert nicht")

    logger.info(f"Kalibriert: sigma_DP={hi:.6g} fuer epsilon={target_epsilon} (erreicht {eps_hi:.4f})")
    return hi
