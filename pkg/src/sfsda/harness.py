"""Monte Carlo FPR/TPR experiments and the brute-force truncation-region oracle."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import bonferroni_p, data_split_p, naive_p
from .datasets import SyntheticConfig, TwoDomainDataset, generate_synthetic, make_rng
from .inference import (
    LineParametrization,
    build_eta,
    decompose_line,
    infer_feature,
    infer_feature_oc,
    select_features,
)
from .intervals import TruncationRegion
from .sparse_regression import PenaltyConfig, fit
from .transport import TransportProblem, build_problem, solve_transport, transport_matrix

METHODS = ("sfs-da", "oc", "naive", "bonferroni", "ds", "no-inference")
CSV_COLUMNS = ("n_s", "rep", "method", "feature", "p_value", "reject", "runtime_s", "interval_count")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    ns_grid: tuple[int, ...]
    n_t: int
    p: int
    beta_target_value: float
    penalty: PenaltyConfig
    alpha: float = 0.05
    replications: int = 120
    master_seed: int = 0
    beta_source_value: float = 2.0
    noise_sd: float = 1.0
    methods: tuple[str, ...] = METHODS
    all_features: bool = False
    record_timing: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ns_grid", tuple(int(n) for n in self.ns_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.mode not in ("fpr", "tpr"):
            raise ValueError(f"mode must be 'fpr' or 'tpr', got {self.mode!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.ns_grid or min(self.ns_grid) < 2 or self.n_t < 2 or self.p < 1:
            raise ValueError("need n_s >= 2, n_t >= 2 and p >= 1")
        if self.mode == "fpr" and self.beta_target_value != 0.0:
            raise ValueError("fpr mode requires a zero target coefficient vector")
        if self.mode == "tpr" and self.beta_target_value == 0.0:
            raise ValueError("tpr mode requires nonzero target coefficients")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")


@dataclass(frozen=True)
class ReplicationRow:
    n_s: int
    rep: int
    method: str
    feature: int
    p_value: float
    reject: bool
    runtime_s: float
    interval_count: int


@dataclass(frozen=True)
class CellSummary:
    n_s: int
    replications: int
    trials_used: int
    rejections: dict[str, int]
    rates: dict[str, float]
    mean_runtime_per_pvalue: float | None
    mean_interval_count: float | None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellSummary]
    rows: list[ReplicationRow] = field(repr=False)

    def cell(self, n_s: int) -> CellSummary:
        return next(c for c in self.cells if c.n_s == n_s)

    def summary_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg.pop("n_jobs")
        return {"schema_version": "1", "config": cfg, "cells": [asdict(c) for c in self.cells]}


def replication_seed(master_seed: int, n_s: int, rep: int) -> int:
    seq = np.random.SeedSequence([int(master_seed), int(n_s), int(rep)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def run_replication(config: ExperimentConfig, n_s: int, rep: int) -> list[ReplicationRow]:
    """One synthetic draw; returns no rows when nothing is selected."""
    seed = replication_seed(config.master_seed, n_s, rep)
    p = config.p
    dataset = generate_synthetic(
        SyntheticConfig(
            n_s,
            config.n_t,
            p,
            (config.beta_source_value,) * p,
            (config.beta_target_value,) * p,
            config.noise_sd,
            seed,
        )
    )
    problem = build_problem(dataset)
    selection = select_features(dataset, config.penalty, problem)
    active = selection.active_set
    if not active:
        return []
    if config.all_features:
        features = list(active)
    else:
        features = [int(make_rng(seed, 1).choice(active))]

    split = data_split_p(dataset, config.penalty, seed) if "ds" in config.methods else None
    rows = []
    for j in features:
        line = decompose_line(dataset, build_eta(dataset, active, j))
        outcomes: dict[str, tuple[float, float, int]] = {}
        if "sfs-da" in config.methods:
            res = infer_feature(dataset, config.penalty, active, j, problem)
            outcomes["sfs-da"] = (res.p_value, res.runtime_s, res.interval_count)
        if "oc" in config.methods:
            res = infer_feature_oc(dataset, config.penalty, active, j, problem)
            outcomes["oc"] = (res.p_value, res.runtime_s, res.interval_count)
        naive = naive_p(line)
        if "naive" in config.methods:
            outcomes["naive"] = (naive, 0.0, 0)
        if "bonferroni" in config.methods:
            outcomes["bonferroni"] = (bonferroni_p(naive, p), 0.0, 0)
        if split is not None:
            # a feature DS did not select (or could not test) is not declared
            p_ds = split.p_values.get(j)
            outcomes["ds"] = (1.0 if p_ds is None else p_ds, 0.0, 0)
        if "no-inference" in config.methods:
            outcomes["no-inference"] = (0.0, 0.0, 0)
        for method in config.methods:
            p_val, runtime, count = outcomes[method]
            rows.append(
                ReplicationRow(
                    n_s,
                    rep,
                    method,
                    j,
                    p_val,
                    bool(p_val <= config.alpha),
                    runtime if config.record_timing else 0.0,
                    count,
                )
            )
    return rows


def _run_task(args):
    config, n_s, rep = args
    return run_replication(config, n_s, rep)


def summarize(config: ExperimentConfig, rows: list[ReplicationRow]) -> list[CellSummary]:
    cells = []
    for n_s in config.ns_grid:
        cell_rows = [r for r in rows if r.n_s == n_s]
        trials = {(r.rep, r.feature) for r in cell_rows}
        used = len(trials)
        rejections = {m: sum(r.reject for r in cell_rows if r.method == m) for m in config.methods}
        rates = {m: (rejections[m] / used if used else math.nan) for m in config.methods}
        sfs = [r for r in cell_rows if r.method == "sfs-da"]
        runtime = (
            float(np.mean([r.runtime_s for r in sfs])) if sfs and config.record_timing else None
        )
        intervals = float(np.mean([r.interval_count for r in sfs])) if sfs else None
        cells.append(
            CellSummary(n_s, config.replications, used, rejections, rates, runtime, intervals)
        )
    return cells


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    tasks = [(config, n_s, rep) for n_s in config.ns_grid for rep in range(config.replications)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=4))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    return ExperimentResult(config, summarize(config, rows), rows)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_rows_csv(path, rows: list[ReplicationRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.n_s,
                    r.rep,
                    r.method,
                    r.feature,
                    _fmt(r.p_value),
                    int(r.reject),
                    _fmt(r.runtime_s),
                    r.interval_count,
                ]
            )


def write_summary_json(path, result: ExperimentResult) -> None:
    Path(path).write_text(json.dumps(result.summary_dict(), indent=2, sort_keys=True) + "\n")


# -- brute-force oracle --------------------------------------------------------


def pipeline_active_set(
    dataset: TwoDomainDataset,
    stacked_response: np.ndarray,
    penalty: PenaltyConfig,
    problem: TransportProblem | None = None,
) -> tuple[int, ...]:
    """Active set from a cold DA + fit on the given response."""
    problem = build_problem(dataset) if problem is None else problem
    solution = solve_transport(problem, stacked_response)
    omega = transport_matrix(solution.plan)
    return fit(omega @ dataset.stacked_features, omega @ stacked_response, penalty).pattern.active_set


def grid_oracle_region(
    dataset: TwoDomainDataset,
    line: LineParametrization,
    penalty: PenaltyConfig,
    observed_active,
    grid_points: int,
) -> TruncationRegion:
    """Truncation region by re-running the pipeline on an equispaced grid.

    Each grid point owns the cell reaching halfway to its neighbours; cells
    of points that select ``observed_active`` are merged into intervals.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    observed_active = tuple(int(j) for j in observed_active)
    problem = build_problem(dataset)
    z_min, z_max = line.z_bounds
    grid = np.linspace(z_min, z_max, grid_points)
    half = 0.5 * (grid[1] - grid[0])
    cells = []
    for z in grid:
        if pipeline_active_set(dataset, line.at(z), penalty, problem) == observed_active:
            cells.append((max(z - half, z_min), min(z + half, z_max)))
    return TruncationRegion.from_intervals(cells, merge_gap=1e-9 * half)
