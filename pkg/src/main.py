#!/usr/bin/env python3
"""
DPVI-Engine - Haupteinstiegspunkt.

Nutzung:
    python -m src.main train --model logistic --data daten.csv --variant aligned --epsilon 1
    python -m src.main analyze-trace --trace trace.csv --out analyse.csv
    python -m src.main gen-data --kind correlated --d 20 --rho 0.2 --out train.csv
    python -m src.main grad-check --model poisson --p 5
    python -m src.main accountant --sigma 1.2 --q 0.01 --epochs 100 --delta 1e-5
    python -m src.main calibrate --epsilon 1 --q 0.01 --epochs 100 --delta 1e-5
    python -m src.main experiment disparate-noise
"""

import sys
import argparse
import logging
import math
from pathlib import Path

import numpy as np

from src.config_loader import load_config, list_available_experiments
from src.csv_io import (
    load_dataset,
    read_trace_csv,
    save_dataset,
    write_grad_norms_csv,
    write_guide_csv,
    write_table,
    write_trace_csv,
)
from src.errors import DpviError
from src.experiments import run_experiment
from src.grad_check import grad_check
from src.gradest import CLIP_PRESETS, EstimatorVariant, default_clip_threshold, parse_variant
from src.models import MODELS, create_model
from src.privacy import ACCOUNTANT_NOTE, DpSgdConfig, account_privacy, calibrate_noise
from src.synth_data import (
    SynthGlmConfig,
    SynthRegressionConfig,
    gen_correlated_regression,
    gen_logistic_regression,
    gen_poisson_regression,
)
from src.trace_analysis import (
    SLOPE_MODES,
    build_noise_aware_posterior,
    detect_burn_out,
    iterate_average,
)
from src.trainer import initial_guide, iterations_for_epochs, run_dpvi
from src.transforms import TransformKind, parse_transform

logger = logging.getLogger("main")


def setup_logging(level="INFO", log_dir=""):
    """Logging einrichten (Konsole, optional zusaetzlich Datei)."""
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_dir:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path / "dpvi.log"))

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        handlers=handlers,
        force=True,
    )
    return logging.getLogger("main")


def _iterations(args):
    if args.iterations:
        return args.iterations
    return iterations_for_epochs(args.epochs, args.q)


def _format_eps(eps):
    return "inf" if math.isinf(eps) else f"{eps:.4f}"


def cmd_train(args, config):
    """DPVI-Lauf auf einem CSV-Datensatz."""
    dataset = load_dataset(args.data, target=args.target, standardize=args.standardize)
    model = create_model(args.model, dataset.n_features)
    variant = parse_variant(args.variant)
    transform = parse_transform(args.transform or config["transform"])
    seed = config["seed"] if args.seed is None else args.seed

    T = iterations_for_epochs(args.epochs, args.q)
    delta = args.delta if args.delta is not None else 1.0 / dataset.n
    clip = args.clip if args.clip is not None else default_clip_threshold(variant, args.clip_preset)
    conversion = config["accountant_conversion"]

    if args.epsilon is not None:
        sigma = calibrate_noise(args.epsilon, delta, args.q, T, conversion=conversion)
    else:
        sigma = args.sigma

    dp_config = DpSgdConfig(
        clip_threshold=clip,
        noise_multiplier=sigma,
        subsample_ratio=args.q,
        iterations=T,
        delta=delta,
        seed=seed,
        variant=variant,
    )
    init_sigma = args.init_sigma if args.init_sigma is not None else config["init_sigma"]
    guide = initial_guide(variant.guide_kind, model.dim, init_sigma, transform, config["init_mean_std"], seed)

    trace = run_dpvi(
        model, guide, dataset, dp_config,
        learning_rate=args.lr if args.lr is not None else config["learning_rate"],
        log_every=config["log_every"],
        conversion=conversion,
    )

    if args.trace_out:
        write_trace_csv(trace, args.trace_out)
    if args.guide_out:
        write_guide_csv(trace.final_guide(), args.guide_out)
    if args.grad_norms_out:
        write_grad_norms_csv(trace, args.grad_norms_out)

    print(f"\nTraining abgeschlossen!")
    print(f"  Modell:     {args.model} (d={model.dim})")
    print(f"  Variante:   {variant.value}")
    print(f"  Iterationen: {T} (q={args.q}, C={clip}, sigma_DP={sigma:.6g})")
    print(f"  Privatsphaere: epsilon={_format_eps(trace.spend.epsilon)}, delta={delta:g}")
    print(f"  {ACCOUNTANT_NOTE}")


def cmd_analyze_trace(args, config):
    """Burn-out-Erkennung, Iterate-Averaging und rauschbewusste Varianzen."""
    trace = read_trace_csv(args.trace, transform=parse_transform(args.transform or config["transform"]))
    windows = [int(w) for w in args.windows.split(",")] if args.windows else None
    report = detect_burn_out(trace.snapshots, windows, args.threshold, args.mode)

    window_used = np.where(report.converged, report.burn_out, 1)
    means = iterate_average(trace.snapshots, window_used)
    n_params = report.n_params
    if report.any_converged:
        posterior = build_noise_aware_posterior(trace, report)
        trace_var = np.concatenate([posterior.trace_var_m, posterior.trace_var_scale])
        inflated = np.concatenate([posterior.inflated_var, np.full(posterior.scale_params.size, np.nan)])
    else:
        logger.warning("Kein Parameter konvergiert - letzte Iteration, Varianzen fehlen")
        trace_var = np.full(n_params, np.nan)
        inflated = np.full(n_params, np.nan)

    rows = [
        {
            "parameter": name,
            "T_burn_out": int(report.burn_out[j]),
            "slope": report.slope[j],
            "mean": means[j],
            "trace_var": trace_var[j],
            "inflated_var": inflated[j],
        }
        for j, name in enumerate(trace.param_names)
    ]
    n_conv = int(report.converged.sum())
    print(f"\nTrace analysiert: {n_conv}/{report.n_params} Parameter konvergiert (Modus {report.mode})")
    if args.out:
        write_table(rows, args.out)
    else:
        for row in rows:
            print(f"  {row['parameter']:<12} T_burn_out={row['T_burn_out']:<7} mean={row['mean']:.6g}")


def cmd_gen_data(args, config):
    """Synthetische Datensaetze erzeugen."""
    seed = config["seed"] if args.seed is None else args.seed
    if args.kind == "correlated":
        train, test, _ = gen_correlated_regression(
            SynthRegressionConfig(d=args.d, rho=args.rho, n=args.n, sigma_y=args.sigma_y, seed=seed)
        )
    elif args.kind == "logistic":
        train, _ = gen_logistic_regression(SynthGlmConfig(p=args.d, n=args.n, seed=seed))
        test = None
    else:
        train, _ = gen_poisson_regression(SynthGlmConfig(p=args.d, n=args.n, seed=seed))
        test = None

    save_dataset(train, args.out)
    print(f"Datensatz erzeugt: {args.out} (N={train.n}, p={train.n_features})")
    if args.test_out and test is not None:
        save_dataset(test, args.test_out)
        print(f"Testdaten erzeugt: {args.test_out}")


def cmd_grad_check(args, config):
    """Modellgradienten gegen finite Differenzen pruefen."""
    model = create_model(args.model, args.p)
    seed = config["seed"] if args.seed is None else args.seed
    report = grad_check(model, args.points, args.tolerance, np.random.default_rng(seed))
    print(report.describe())
    if not report.passed:
        sys.exit(1)


def cmd_accountant(args, config):
    """(epsilon, delta) fuer gegebenes sigma_DP."""
    T = _iterations(args)
    spend = account_privacy(args.sigma, args.q, T, args.delta, conversion=args.conversion or config["accountant_conversion"])
    print(f"epsilon={_format_eps(spend.epsilon)} bei delta={spend.delta:g} (T={T}, q={args.q}, sigma_DP={args.sigma})")
    print(ACCOUNTANT_NOTE)


def cmd_calibrate(args, config):
    """sigma_DP fuer ein Ziel-epsilon bestimmen."""
    T = _iterations(args)
    sigma = calibrate_noise(args.epsilon, args.delta, args.q, T, conversion=args.conversion or config["accountant_conversion"])
    print(f"sigma_DP={sigma:.6g} fuer epsilon={args.epsilon}, delta={args.delta:g} (T={T}, q={args.q})")
    print(ACCOUNTANT_NOTE)


def cmd_experiment(args, config):
    """Benannten Sweep ausfuehren."""
    if args.list or not args.name:
        print("Verfuegbare Experimente:")
        for name in list_available_experiments():
            print(f"  {name}")
        return
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"Ungueltige Angabe (KEY=VALUE erwartet): {item}")
            sys.exit(1)
        overrides[key.strip()] = value.strip()

    output_dir = args.output_dir or config["output_dir"]
    _, summary = run_experiment(args.name, output_dir, settings=config, overrides=overrides)
    print(f"\nExperiment '{args.name}' abgeschlossen. Ergebnisse in {output_dir}")
    print(summary.to_string(index=False))


def _add_privacy_args(parser):
    parser.add_argument("--q", type=float, required=True, help="Subsampling-Rate")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--iterations", type=int, help="Anzahl Iterationen T")
    group.add_argument("--epochs", type=float, help="Epochen (T = Epochen / q)")
    parser.add_argument("--delta", type=float, required=True)
    parser.add_argument("--conversion", choices=["classic", "improved"])


def build_parser():
    parser = argparse.ArgumentParser(description="DPVI-Engine: differentiell private Variationsinferenz")
    sub = parser.add_subparsers(dest="command")

    # train
    p_train = sub.add_parser("train", help="DPVI-Training")
    p_train.add_argument("--model", required=True, choices=list(MODELS))
    p_train.add_argument("--data", required=True, help="CSV mit Kopfzeile")
    p_train.add_argument("--target", default="y", help="Zielspalte")
    p_train.add_argument("--standardize", action="store_true")
    p_train.add_argument("--variant", default=EstimatorVariant.ALIGNED.value, choices=[v.value for v in EstimatorVariant])
    p_train.add_argument("--epochs", type=float, default=10.0)
    p_train.add_argument("--q", type=float, default=0.01)
    p_train.add_argument("--clip", type=float, help="Clipping-Schwelle (inf = aus)")
    p_train.add_argument("--clip-preset", default="default", choices=list(CLIP_PRESETS))
    noise = p_train.add_mutually_exclusive_group(required=True)
    noise.add_argument("--sigma", type=float, help="Rauschmultiplikator sigma_DP")
    noise.add_argument("--epsilon", type=float, help="Ziel-epsilon (sigma_DP wird kalibriert)")
    p_train.add_argument("--delta", type=float, help="Standard: 1/N")
    p_train.add_argument("--init-sigma", type=float, help="Start-Standardabweichung des Guides")
    p_train.add_argument("--transform", choices=[k.value for k in TransformKind])
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--lr", type=float, help="Adam-Lernrate")
    p_train.add_argument("--trace-out")
    p_train.add_argument("--guide-out")
    p_train.add_argument("--grad-norms-out")
    p_train.set_defaults(func=cmd_train)

    # analyze-trace
    p_an = sub.add_parser("analyze-trace", help="Trace auswerten")
    p_an.add_argument("--trace", required=True)
    p_an.add_argument("--threshold", type=float, default=0.05)
    p_an.add_argument("--windows", help="Fensterlaengen, kommagetrennt")
    p_an.add_argument("--mode", default="normalized", choices=list(SLOPE_MODES))
    p_an.add_argument("--transform", choices=[k.value for k in TransformKind])
    p_an.add_argument("--out")
    p_an.set_defaults(func=cmd_analyze_trace)

    # gen-data
    p_gen = sub.add_parser("gen-data", help="Synthetische Daten erzeugen")
    p_gen.add_argument("--kind", default="correlated", choices=["correlated", "logistic", "poisson"])
    p_gen.add_argument("--d", type=int, default=20, help="Anzahl Merkmale")
    p_gen.add_argument("--rho", type=float, default=0.2)
    p_gen.add_argument("--n", type=int, default=10000)
    p_gen.add_argument("--sigma-y", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--test-out")
    p_gen.set_defaults(func=cmd_gen_data)

    # grad-check
    p_gc = sub.add_parser("grad-check", help="Gradienten pruefen")
    p_gc.add_argument("--model", required=True, choices=list(MODELS))
    p_gc.add_argument("--p", type=int, default=5)
    p_gc.add_argument("--points", type=int, default=100)
    p_gc.add_argument("--tolerance", type=float, default=1e-5)
    p_gc.add_argument("--seed", type=int)
    p_gc.set_defaults(func=cmd_grad_check)

    # accountant
    p_acc = sub.add_parser("accountant", help="epsilon berechnen")
    p_acc.add_argument("--sigma", type=float, required=True)
    _add_privacy_args(p_acc)
    p_acc.set_defaults(func=cmd_accountant)

    # calibrate
    p_cal = sub.add_parser("calibrate", help="sigma_DP kalibrieren")
    p_cal.add_argument("--epsilon", type=float, required=True)
    _add_privacy_args(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    # experiment
    p_exp = sub.add_parser("experiment", help="Benannten Sweep ausfuehren")
    p_exp.add_argument("name", nargs="?")
    p_exp.add_argument("--list", action="store_true")
    p_exp.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_exp.add_argument("--output-dir")
    p_exp.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    """Startet die DPVI-Engine."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        sys.exit(1)

    config = load_config()
    setup_logging(config["log_level"], config["log_dir"])

    try:
        args.func(args, config)
    except (DpviError, FileNotFoundError) as e:
        logger.error(f"[FEHLER] {args.command}: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
