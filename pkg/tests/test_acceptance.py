"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import itertools
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import kstest

import sfsda.inference as inference_module
from sfsda.cli import main
from sfsda.datasets import SyntheticConfig, generate_synthetic
from sfsda.harness import ExperimentConfig, grid_oracle_region, run_experiment
from sfsda.inference import build_eta, decompose_line, divide_and_conquer, select_features
from sfsda.sparse_regression import PenaltyConfig, fit
from sfsda.transport import build_problem, solve_transport

pytestmark = pytest.mark.slow

DATA = Path(__file__).parent / "data"
ALPHA = 0.05
LAMBDA = 10.0
MASTER_SEED = 1


def report(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")


@lru_cache(maxsize=None)
def experiment_run(mode, gamma):
    cfg = ExperimentConfig(
        mode=mode,
        ns_grid=(100,),
        n_t=10,
        p=5,
        beta_target_value=0.0 if mode == "fpr" else 0.5,
        penalty=PenaltyConfig(LAMBDA, gamma),
        alpha=ALPHA,
        replications=120,
        master_seed=MASTER_SEED,
    )
    start = time.perf_counter()
    result = run_experiment(cfg)
    return result.cell(100), time.perf_counter() - start


@lru_cache(maxsize=None)
def null_pvalues(gamma):
    # smaller source domain keeps 500+ sweeps affordable; validity does not depend on n_s
    cfg = ExperimentConfig(
        mode="fpr",
        ns_grid=(30,),
        n_t=10,
        p=5,
        beta_target_value=0.0,
        penalty=PenaltyConfig(LAMBDA, gamma),
        alpha=ALPHA,
        replications=620,
        master_seed=MASTER_SEED,
        methods=("sfs-da",),
        record_timing=False,
    )
    return np.array([r.p_value for r in run_experiment(cfg).rows])


def fpr_checks(gamma):
    cell, seconds = experiment_run("fpr", gamma)
    r = cell.rates
    parts = {
        "sfs-da in [0.01, 0.11]": 0.01 <= r["sfs-da"] <= 0.11,
        "naive > 0.10": r["naive"] > 0.10,
        "no-inference >= 0.95": r["no-inference"] >= 0.95,
        "runtime < 600 s": seconds < 600,
    }
    detail = (
        f"trials={cell.trials_used} sfs-da={r['sfs-da']:.4f} naive={r['naive']:.4f} "
        f"no-inference={r['no-inference']:.4f} oc={r['oc']:.4f} ds={r['ds']:.4f} "
        f"bonferroni={r['bonferroni']:.4f} time={seconds:.0f}s"
    )
    return parts, detail


def ks_checks(gamma):
    pv = null_pvalues(gamma)
    stat, pval = kstest(pv, "uniform")
    parts = {">= 500 p-values": pv.size >= 500, "KS p-value > 0.01": pval > 0.01}
    return parts, f"n={pv.size} KS D={stat:.4f} KS p={pval:.4f}"


def tpr_checks(gamma):
    cell, _ = experiment_run("tpr", gamma)
    r = cell.rates
    parts = {
        "sfs-da >= oc": r["sfs-da"] >= r["oc"],
        "sfs-da >= bonferroni": r["sfs-da"] >= r["bonferroni"],
        "sfs-da >= ds - 0.05": r["sfs-da"] >= r["ds"] - 0.05,
    }
    detail = (
        f"trials={cell.trials_used} sfs-da={r['sfs-da']:.4f} oc={r['oc']:.4f} "
        f"bonferroni={r['bonferroni']:.4f} ds={r['ds']:.4f} naive={r['naive']:.4f}"
    )
    return parts, detail


def conclude(capsys, criterion, parts, detail):
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    report(capsys, criterion, ok, detail + (f" | failed: {'; '.join(failed)}" if failed else ""))
    assert ok, f"criterion {criterion} failed: {failed} ({detail})"


def test_criterion_1_fpr_control(capsys):
    conclude(capsys, 1, *fpr_checks(0.0))


def test_criterion_2_null_uniformity(capsys):
    conclude(capsys, 2, *ks_checks(0.0))


def test_criterion_3_tpr_ordering(capsys):
    conclude(capsys, 3, *tpr_checks(0.0))


def test_criterion_4_elastic_net(capsys):
    parts, details = {}, []
    for name, checks in (("fpr", fpr_checks), ("ks", ks_checks), ("tpr", tpr_checks)):
        sub, detail = checks(1.0)
        parts.update({f"{name}: {k}": v for k, v in sub.items()})
        details.append(f"{name}[{detail}]")
    conclude(capsys, 4, parts, " ".join(details))


def _small_instances(gamma, count=20):
    penalty = PenaltyConfig(2.0, gamma)
    seed = 0
    while count:
        ds = generate_synthetic(SyntheticConfig(10, 5, 3, (2.0,) * 3, (0.5,) * 3, 1.0, seed))
        active = select_features(ds, penalty).active_set
        seed += 1
        if active:
            count -= 1
            yield ds, penalty, active


def test_criterion_5_region_correctness(capsys):
    worst, bad, total = 0.0, 0, 0
    for gamma in (0.0, 1.0):
        for ds, penalty, active in _small_instances(gamma):
            line = decompose_line(ds, build_eta(ds, active, active[0]))
            _, analytic = divide_and_conquer(ds, line, penalty, active)
            oracle = grid_oracle_region(ds, line, penalty, active, 2000)
            lo, hi = line.z_bounds
            spacing = (hi - lo) / 1999
            ratio = analytic.symmetric_difference_length(oracle, lo, hi) / spacing
            worst = max(worst, ratio)
            bad += ratio > 3
            total += 1
    conclude(
        capsys,
        5,
        {"symmetric difference <= 3 spacings": bad == 0},
        f"instances={total} (20 lasso + 20 enet, lambda=2) over-tolerance={bad} worst={worst:.3f} spacings",
    )


def _vertex_minimum(problem, cost):
    n_s, n_t = problem.n_source, problem.n_target
    h = problem.constraint_matrix.toarray()[:-1]
    best = np.inf
    for cols in itertools.combinations(range(n_s * n_t), n_s + n_t - 1):
        sub = h[:, cols]
        if abs(np.linalg.det(sub)) < 1e-9:
            continue
        x = np.linalg.solve(sub, problem.marginals[:-1])
        if np.all(x >= -1e-12):
            best = min(best, float(cost[list(cols)] @ x))
    return best


def test_criterion_6_solver_certificates(capsys, monkeypatch):
    kkt, marg = [], []
    real_fit_gram, real_solve = inference_module.fit_gram, inference_module.solve_transport

    def recording_fit_gram(*args, **kwargs):
        res = real_fit_gram(*args, **kwargs)
        kkt.append(res.kkt_residual)
        return res

    def recording_solve(problem, *args, **kwargs):
        sol = real_solve(problem, *args, **kwargs)
        marg.append(
            max(
                np.max(np.abs(sol.plan.sum(1) - 1 / problem.n_source)),
                np.max(np.abs(sol.plan.sum(0) - 1 / problem.n_target)),
            )
        )
        return sol

    monkeypatch.setattr(inference_module, "fit_gram", recording_fit_gram)
    monkeypatch.setattr(inference_module, "solve_transport", recording_solve)
    for seed in range(6):
        for gamma in (0.0, 1.0):
            ds = generate_synthetic(SyntheticConfig(60, 10, 5, (2.0,) * 5, (0.5 * (seed % 2),) * 5, 1.0, seed))
            penalty = PenaltyConfig(LAMBDA, gamma)
            sel = select_features(ds, penalty)
            kkt.append(sel.fit.kkt_residual)
            for j in sel.active_set[:2]:
                inference_module.infer_feature(ds, penalty, sel.active_set, j)

    vertex_gap, shapes = 0.0, 0
    for n_s, n_t in [(1, 12), (2, 6), (3, 4), (4, 3), (6, 2), (3, 3), (2, 5), (5, 2)]:
        for seed in range(5):
            ds = generate_synthetic(SyntheticConfig(n_s, n_t, 2, (2.0, 2.0), (0.0, 0.0), 1.0, seed))
            problem = build_problem(ds)
            cost = problem.cost(ds.stacked_response)
            sol = solve_transport(problem, ds.stacked_response)
            vertex_gap = max(vertex_gap, abs(sol.objective - _vertex_minimum(problem, cost)))
            shapes += 1

    parts = {
        "KKT residual <= 1e-6": max(kkt) <= 1e-6,
        "marginals within 1e-10": max(marg) <= 1e-10,
        "vertex objective within 1e-8": vertex_gap <= 1e-8,
    }
    detail = (
        f"fits={len(kkt)} max KKT={max(kkt):.2e} plans={len(marg)} max marginal error={max(marg):.2e} "
        f"vertex instances={shapes} max gap={vertex_gap:.2e}"
    )
    conclude(capsys, 6, parts, detail)


def test_criterion_7_scaling_trend(capsys):
    grid = (50, 100, 150, 200)
    cfg = ExperimentConfig(
        mode="fpr",
        ns_grid=grid,
        n_t=10,
        p=5,
        beta_target_value=0.0,
        penalty=PenaltyConfig(LAMBDA),
        replications=20,
        master_seed=MASTER_SEED,
        methods=("sfs-da",),
    )
    cells = run_experiment(cfg).cells
    counts = [c.mean_interval_count for c in cells]
    times = [c.mean_runtime_per_pvalue for c in cells]
    ratio = counts[-1] / counts[0]
    parts = {
        "interval count nondecreasing": all(a <= b for a, b in zip(counts, counts[1:])),
        "runtime nondecreasing": all(a <= b for a, b in zip(times, times[1:])),
        "200/50 count ratio in [2, 6]": 2 <= ratio <= 6,
    }
    detail = (
        "counts=" + ",".join(f"{c:.1f}" for c in counts)
        + " runtime_s=" + ",".join(f"{t:.3f}" for t in times)
        + f" ratio={ratio:.2f}"
    )
    conclude(capsys, 7, parts, detail)


def test_criterion_8_cli_golden_file(capsys, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        code = main(
            [
                "infer", "--source", str(DATA / "source.csv"), "--target", str(DATA / "target.csv"),
                "--lambda", "5", "--gamma", "1", "--seed", "3", "--out", str(out),
            ]
        )
        outs.append((code, out.read_bytes()))
    golden = (DATA / "golden_report.json").read_bytes()
    parts = {
        "exit 0": all(code == 0 for code, _ in outs),
        "matches golden file": outs[0][1] == golden,
        "repeat run byte-identical": outs[0][1] == outs[1][1],
    }
    conclude(capsys, 8, parts, f"report bytes={len(golden)}")
