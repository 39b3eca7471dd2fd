"""Command-line front end: ``sfsda infer``, ``sfsda experiment`` and ``sfsda oracle``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import bonferroni_p, data_split_p, naive_p
from .datasets import DataFormatError, SyntheticConfig, generate_synthetic, load_csv
from .harness import (
    ExperimentConfig,
    grid_oracle_region,
    run_experiment,
    write_rows_csv,
    write_summary_json,
)
from .inference import (
    NumericalDegeneracyError,
    SweepStagnationError,
    build_eta,
    decompose_line,
    divide_and_conquer,
    infer_feature,
    infer_feature_oc,
    select_features,
)
from .sparse_regression import ConvergenceError, IllPosedSelectionError, PenaltyConfig
from .transport import build_problem

SCHEMA_VERSION = "1"
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
INFER_METHODS = ("sfs-da", "oc", "naive", "bonferroni", "ds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _methods(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    unknown = [n for n in names if n not in INFER_METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown method(s): {','.join(unknown)}")
    return names


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sfsda", description="Selective inference for feature selection after OT domain adaptation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    inf = sub.add_parser("infer", help="p-values for features selected on CSV data")
    inf.add_argument("--source", required=True, type=Path)
    inf.add_argument("--target", required=True, type=Path)
    inf.add_argument("--lambda", dest="lam", required=True, type=float)
    inf.add_argument("--gamma", type=float, default=0.0)
    inf.add_argument("--alpha", type=float, default=0.05)
    inf.add_argument("--noise-sd", type=float, default=1.0)
    inf.add_argument("--methods", type=_methods, default=INFER_METHODS)
    inf.add_argument("--seed", type=_u64, default=0)
    inf.add_argument("--out", required=True, type=Path)

    exp = sub.add_parser("experiment", help="Monte Carlo FPR / TPR experiment on synthetic data")
    exp.add_argument("mode", choices=("fpr", "tpr"))
    exp.add_argument("--ns", type=_int_list, default=[50, 100, 150, 200])
    exp.add_argument("--nt", type=int, default=10)
    exp.add_argument("--p", type=int, default=5)
    exp.add_argument("--lambda", dest="lam", type=float, default=10.0)
    exp.add_argument("--gamma", type=float, default=0.0)
    exp.add_argument("--alpha", type=float, default=0.05)
    exp.add_argument("--reps", type=int, default=120)
    exp.add_argument("--beta-t", type=float, default=None, help="target coefficient (default 0 for fpr, 0.5 for tpr)")
    exp.add_argument("--seed", type=_u64, default=0)
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--all-features", action="store_true")
    exp.add_argument("--record-timing", action="store_true", help="fill runtime columns (output is then not reproducible byte for byte)")
    exp.add_argument("--out", required=True, type=Path)

    orc = sub.add_parser("oracle", help="compare the analytic truncation region with a grid search")
    orc.add_argument("--ns", type=int, required=True)
    orc.add_argument("--nt", type=int, required=True)
    orc.add_argument("--p", type=int, required=True)
    orc.add_argument("--lambda", dest="lam", type=float, required=True)
    orc.add_argument("--gamma", type=float, default=0.0)
    orc.add_argument("--beta-t", type=float, default=0.0)
    orc.add_argument("--grid", type=int, required=True)
    orc.add_argument("--seed", type=_u64, default=0)
    orc.add_argument("--tolerance", type=float, default=3.0, help="allowed symmetric difference, in grid spacings")
    return parser


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4g}"


def cmd_infer(args) -> int:
    if args.lam <= 0:
        raise UsageError("--lambda must be positive")
    if args.gamma < 0 or not 0 < args.alpha < 1 or args.noise_sd <= 0:
        raise UsageError("need --gamma >= 0, 0 < --alpha < 1 and --noise-sd > 0")
    dataset = load_csv(args.source, args.target, args.noise_sd)
    penalty = PenaltyConfig(args.lam, args.gamma)
    problem = build_problem(dataset)
    active = select_features(dataset, penalty, problem).active_set
    split = data_split_p(dataset, penalty, args.seed) if "ds" in args.methods else None

    entries = []
    for j in active:
        full = infer_feature(dataset, penalty, active, j, problem)
        naive = naive_p(full.line)
        entry = {
            "feature_index": j,
            "statistic": full.statistic,
            "sigma": full.sigma,
            "intervals": full.region.to_list(),
            "p_selective": full.p_value,
            "p_naive": naive,
            "p_bonferroni": bonferroni_p(naive, dataset.n_features),
        }
        if "oc" in args.methods:
            entry["p_oc"] = infer_feature_oc(dataset, penalty, active, j, problem).p_value
        if split is not None:
            entry["p_ds"] = split.p_values.get(j)
        entries.append(entry)

    report = {
        "schema_version": SCHEMA_VERSION,
        "dataset": {
            "n_source": dataset.n_source,
            "n_target": dataset.n_target,
            "n_features": dataset.n_features,
            "lambda": args.lam,
            "gamma": args.gamma,
            "alpha": args.alpha,
            "noise_sd": args.noise_sd,
        },
        "active_set": list(active),
        "features": entries,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(report, indent=2) + "\n")

    if not entries:
        print("no features selected")
        return EXIT_OK
    cols = ["p_selective", "p_naive", "p_bonferroni", "p_oc", "p_ds"]
    print(f"{'feature':>8} {'statistic':>11} " + " ".join(f"{c:>12}" for c in cols))
    for e in entries:
        print(
            f"{'x' + str(e['feature_index'] + 1):>8} {e['statistic']:>11.4g} "
            + " ".join(f"{_fmt(e.get(c)):>12}" for c in cols)
        )
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    beta_t = args.beta_t if args.beta_t is not None else (0.0 if args.mode == "fpr" else 0.5)
    try:
        config = ExperimentConfig(
            mode=args.mode,
            ns_grid=tuple(args.ns),
            n_t=args.nt,
            p=args.p,
            beta_target_value=beta_t,
            penalty=PenaltyConfig(args.lam, args.gamma),
            alpha=args.alpha,
            replications=args.reps,
            master_seed=args.seed,
            all_features=args.all_features,
            record_timing=args.record_timing,
            n_jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_experiment(config)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(args.out / "replications.csv", result.rows)
    write_summary_json(args.out / "summary.json", result)
    methods = config.methods
    print(f"{'n_s':>5} {'trials':>6} " + " ".join(f"{m:>12}" for m in methods))
    for cell in result.cells:
        print(f"{cell.n_s:>5} {cell.trials_used:>6} " + " ".join(f"{cell.rates[m]:>12.3f}" for m in methods))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.grid < 2:
        raise UsageError("--grid must be >= 2")
    if args.lam <= 0:
        raise UsageError("--lambda must be positive")
    dataset = generate_synthetic(
        SyntheticConfig(args.ns, args.nt, args.p, (2.0,) * args.p, (args.beta_t,) * args.p, 1.0, args.seed)
    )
    penalty = PenaltyConfig(args.lam, args.gamma)
    active = select_features(dataset, penalty).active_set
    if not active:
        print("no features selected; nothing to compare")
        return EXIT_OK
    ok = True
    for j in active:
        line = decompose_line(dataset, build_eta(dataset, active, j))
        _, analytic = divide_and_conquer(dataset, line, penalty, active)
        oracle = grid_oracle_region(dataset, line, penalty, active, args.grid)
        lo, hi = line.z_bounds
        spacing = (hi - lo) / (args.grid - 1)
        diff = analytic.symmetric_difference_length(oracle, lo, hi)
        within = diff <= args.tolerance * spacing
        ok &= within
        print(f"feature x{j + 1}")
        print(f"  analytic: {analytic.to_list()}")
        print(f"  oracle:   {oracle.to_list()}")
        print(f"  symmetric difference {diff:.6g} = {diff / spacing:.3f} spacings ({'ok' if within else 'FAIL'})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"infer": cmd_infer, "experiment": cmd_experiment, "oracle": cmd_oracle}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    # LinAlgError subclasses ValueError, so it must be caught first
    except (
        NumericalDegeneracyError,
        SweepStagnationError,
        IllPosedSelectionError,
        ConvergenceError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"error: numerical: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
