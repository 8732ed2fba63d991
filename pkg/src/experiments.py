"""
Benannte Experiment-Sweeps (KEY=VALUE-Konfiguration unter experiments/).
Jeder Sweep schreibt pro Lauf eine Guide-CSV sowie runs.csv und summary.csv.
"""

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from src.config_loader import load_experiment_config
from src.csv_io import write_guide_csv, write_table
from src.errors import ConfigError
from src.gradest import EstimatorVariant, default_clip_threshold, parse_variant
from src.metrics import mpae, MpaeInput, predictive_loglik
from src.models import create_model
from src.privacy import DpSgdConfig, calibrate_noise
from src.synth_data import (
    SynthGlmConfig,
    SynthRegressionConfig,
    gen_correlated_regression,
    gen_logistic_regression,
)
from src.trace_analysis import (
    OuSimConfig,
    estimate_dp_noise_variance,
    ou_continuous_covariance,
    ou_stationary_covariance,
    simulate_dp_sgd_quadratic,
)
from src.trainer import initial_guide, iterations_for_epochs, run_dpvi

logger = logging.getLogger(__name__)


def _get(cfg, key, default, cast=float):
    raw = cfg.get(key)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"Ungueltiger Wert fuer {key.upper()}: '{raw}'") from None


def _get_list(cfg, key, default, cast=float):
    raw = cfg.get(key)
    if raw is None or raw == "":
        return list(default)
    try:
        return [cast(item.strip()) for item in raw.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(f"Ungueltige Liste fuer {key.upper()}: '{raw}'") from None


def averaged_guide(trace, fraction=0.1):
    """Guide aus dem Mittel der letzten fraction * T Snapshots."""
    window = max(1, int(round(fraction * trace.iterations)))
    return trace.guide_from(trace.snapshots[-window:].mean(axis=0))


def reference_run(model, dataset, guide, iterations, seed, settings):
    """Nicht-privater Referenzlauf; Optimum = Mittel ueber die zweite Haelfte."""
    variant = EstimatorVariant.FULL_RANK_ALIGNED if guide.kind == "fullrank" else EstimatorVariant.ALIGNED
    config = DpSgdConfig(
        clip_threshold=math.inf,
        noise_multiplier=0.0,
        subsample_ratio=1.0,
        iterations=iterations,
        delta=0.5,
        seed=seed,
        variant=variant,
    )
    trace = run_dpvi(model, guide, dataset, config, learning_rate=settings["learning_rate"], log_every=0)
    return trace.snapshots[iterations // 2 :].mean(axis=0)


def _settings(settings):
    defaults = {
        "learning_rate": 1e-3,
        "log_every": 1000,
        "init_mean_std": 0.1,
        "transform": "softplus",
        "predictive_samples": 200,
        "accountant_conversion": "classic",
    }
    return {**defaults, **(settings or {})}


# ============================================================
# Sweeps
# ============================================================
def run_disparate_noise(cfg, out_dir, settings):
    """Aligned vs. Vanilla auf synthetischer logistischer Regression (MPAE auf m und s)."""
    n = _get(cfg, "n", 10000, int)
    p = _get(cfg, "p", 10, int)
    q = _get(cfg, "q", 0.01)
    epochs = _get(cfg, "epochs", 500)
    epsilon = _get(cfg, "epsilon", 1.0)
    delta = _get(cfg, "delta", 1e-4)
    init_sigma = _get(cfg, "init_sigma", 1.0)
    reference_factor = _get(cfg, "reference_factor", 4, int)
    preset = cfg.get("clip_preset", "default")
    seeds = _get_list(cfg, "seeds", range(10), int)
    variants = [parse_variant(v) for v in _get_list(cfg, "variants", ["vanilla", "aligned"], str)]

    T = iterations_for_epochs(epochs, q)
    sigma = calibrate_noise(epsilon, delta, q, T, conversion=settings["accountant_conversion"])
    model = create_model("logistic", p)

    rows = []
    for seed in seeds:
        dataset, _ = gen_logistic_regression(SynthGlmConfig(p=p, n=n, seed=seed))
        start = initial_guide("diagonal", model.dim, init_sigma, settings["transform"], settings["init_mean_std"], seed)
        ref = reference_run(model, dataset, start, reference_factor * T, seed, settings)
        d = model.dim

        for variant in variants:
            config = DpSgdConfig(
                clip_threshold=default_clip_threshold(variant, preset),
                noise_multiplier=sigma,
                subsample_ratio=q,
                iterations=T,
                delta=delta,
                seed=seed,
                variant=variant,
            )
            trace = run_dpvi(
                model, start, dataset, config,
                learning_rate=settings["learning_rate"],
                log_every=settings["log_every"],
                conversion=settings["accountant_conversion"],
            )
            final = trace.snapshots[-1]
            write_guide_csv(trace.final_guide(), out_dir / "guides" / f"{variant.value}_seed{seed}.csv")
            rows.append({
                "seed": seed,
                "variant": variant.value,
                "sigma_dp": sigma,
                "epsilon": trace.spend.epsilon,
                "mpae_m": mpae(MpaeInput(final[:d], ref[:d], trace.initial[:d])).value,
                "mpae_s": mpae(MpaeInput(final[d:], ref[d:], trace.initial[d:])).value,
                "elbo_tail": float(np.mean(trace.elbo[-max(1, T // 10):])),
            })

    runs = pd.DataFrame(rows)
    summary = runs.groupby("variant")[["mpae_m", "mpae_s"]].agg(["mean", "std"])
    summary.columns = [f"{a}_{b}" for a, b in summary.columns]
    summary = summary.reset_index()
    if {"vanilla", "aligned"} <= set(runs["variant"]):
        pivot = runs.pivot(index="seed", columns="variant", values="mpae_s")
        summary["aligned_wins_s"] = int((pivot["aligned"] < pivot["vanilla"]).sum())
    return runs, summary


def run_full_rank(cfg, out_dir, settings):
    """Full-Rank Aligned vs. Vanilla auf korrelierter linearer Regression (praediktive Log-Likelihood)."""
    d = _get(cfg, "d", 20, int)
    n = _get(cfg, "n", 10000, int)
    q = _get(cfg, "q", 0.01)
    epochs = _get(cfg, "epochs", 100)
    clip = _get(cfg, "clip", 0.2)
    delta = _get(cfg, "delta", 1e-5)
    init_sigma = _get(cfg, "init_sigma", 1.0)
    rhos = _get_list(cfg, "rhos", [0.2, 0.8])
    seeds = _get_list(cfg, "seeds", range(10), int)
    average_fraction = _get(cfg, "average_fraction", 0.1)

    T = iterations_for_epochs(epochs, q)
    if cfg.get("sigma"):
        sigma = _get(cfg, "sigma", 1.0)
    else:
        sigma = calibrate_noise(_get(cfg, "epsilon", 1.0), delta, q, T, conversion=settings["accountant_conversion"])
    model = create_model("linear", d)
    variants = [EstimatorVariant.FULL_RANK_VANILLA, EstimatorVariant.FULL_RANK_ALIGNED]

    rows = []
    for rho in rhos:
        for seed in seeds:
            train, test, _ = gen_correlated_regression(SynthRegressionConfig(d=d, rho=rho, n=n, seed=seed))
            start = initial_guide("fullrank", model.dim, init_sigma, settings["transform"], settings["init_mean_std"], seed)
            for variant in variants:
                config = DpSgdConfig(
                    clip_threshold=clip,
                    noise_multiplier=sigma,
                    subsample_ratio=q,
                    iterations=T,
                    delta=delta,
                    seed=seed,
                    variant=variant,
                )
                trace = run_dpvi(
                    model, start, train, config,
                    learning_rate=settings["learning_rate"],
                    log_every=settings["log_every"],
                    conversion=settings["accountant_conversion"],
                )
                guide = averaged_guide(trace, average_fraction)
                write_guide_csv(guide, out_dir / "guides" / f"{variant.value}_rho{rho}_seed{seed}.csv")
                rows.append({
                    "rho": rho,
                    "seed": seed,
                    "variant": variant.value,
                    "sigma_dp": sigma,
                    "epsilon": trace.spend.epsilon,
                    "predictive_loglik": predictive_loglik(
                        guide, model, test, settings["predictive_samples"], np.random.default_rng(seed)
                    ),
                })

    runs = pd.DataFrame(rows)
    summary = runs.groupby(["rho", "variant"])["predictive_loglik"].agg(["mean", "std"]).reset_index()
    pivot = runs.pivot_table(index=["rho", "seed"], columns="variant", values="predictive_loglik")
    wins = (pivot[EstimatorVariant.FULL_RANK_ALIGNED.value] >= pivot[EstimatorVariant.FULL_RANK_VANILLA.value])
    summary["aligned_wins"] = summary["rho"].map(wins.groupby(level="rho").sum().astype(int))
    return runs, summary


def run_ou_theory(cfg, out_dir, settings):
    """Stationaere Varianz der DP-SGD-Rekursion gegen sigma_DP^2 (skalarer Fall)."""
    A = _get(cfg, "a", 1.0)
    alpha = _get(cfg, "alpha", 0.1)
    B = _get(cfg, "b", 0.0)
    steps = _get(cfg, "steps", 1_000_000, int)
    sigmas = _get_list(cfg, "sigmas", [0.5, 1.0, 2.0, 4.0])
    seed = _get(cfg, "seed", 0, int)

    rows = []
    for k, sigma_dp in enumerate(sigmas):
        sim = OuSimConfig(A=A, alpha=alpha, sigma_dp=sigma_dp, B=B, steps=steps)
        burn_in = min(steps // 2, int(20 * sim.mixing_time))
        trace = simulate_dp_sgd_quadratic(sim, seed=seed + k)
        rows.append({
            "sigma_dp": sigma_dp,
            "empirical_var": estimate_dp_noise_variance(trace[:, 0], steps - burn_in),
            "discrete_var": float(ou_stationary_covariance(sim)[0, 0]),
            "continuous_var": float(ou_continuous_covariance(sim)[0, 0]),
        })

    runs = pd.DataFrame(rows)
    fit = stats.linregress(runs["sigma_dp"] ** 2, runs["empirical_var"])
    summary = pd.DataFrame([{
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.rvalue**2,
        "max_rel_error": float(np.max(np.abs(runs["empirical_var"] / runs["discrete_var"] - 1.0))),
    }])
    return runs, summary


EXPERIMENTS = {
    "disparate-noise": run_disparate_noise,
    "full-rank": run_full_rank,
    "ou-theory": run_ou_theory,
}


def run_experiment(name, output_dir, settings=None, overrides=None):
    """Laedt die Konfiguration, fuehrt den Sweep aus und schreibt runs.csv und summary.csv."""
    cfg = load_experiment_config(name)
    cfg.update({k.lower(): str(v) for k, v in (overrides or {}).items()})
    kind = cfg.get("experiment", Path(name).stem.replace("_", "-"))
    runner = EXPERIMENTS.get(kind)
    if runner is None:
        raise ConfigError(f"Unbekanntes Experiment: '{kind}'. Verfuegbar: {list(EXPERIMENTS.keys())}")

    out_dir = Path(output_dir) / kind
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Experiment '{kind}' startet, Ausgabe nach {out_dir}")

    runs, summary = runner(cfg, out_dir, _settings(settings))
    write_table(runs, out_dir / "runs.csv")
    write_table(summary, out_dir / "summary.csv")
    return runs, summary
