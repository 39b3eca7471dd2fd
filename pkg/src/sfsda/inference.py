"""Selective p-values for features chosen by a penalized fit after OT domain adaptation.

The test statistic for a selected feature is its target-only least-squares
coefficient.  Conditioning on the nuisance component restricts the response
to a line ``a + b z``; the truncation region is the set of ``z`` whose
DA-then-fit pipeline selects the observed active set, and the p-value is a
two-sided tail probability of a normal truncated to that region.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .datasets import TwoDomainDataset
from .intervals import TruncationRegion, solve_linear_inequalities
from .sparse_regression import (
    FitResult,
    PenaltyConfig,
    SelectionPattern,
    fit,
    fit_gram,
    selection_inequalities,
)
from .transport import (
    TransportProblem,
    TransportSolution,
    basis_region,
    build_problem,
    solve_transport,
    transport_matrix,
)

log = logging.getLogger(__name__)

Z_RANGE_SDS = 20.0
NUDGE_SDS = 1e-6
MIN_LOG_MASS = math.log(1e-300)
STAGNATION_LIMIT = 200


class NumericalDegeneracyError(ArithmeticError):
    pass


class SweepStagnationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LineParametrization:
    """Response restricted to ``anchor + direction * z``.

    ``statistic_sd`` is the null standard deviation of ``eta @ Y`` and
    ``observed_statistic`` its observed value.
    """

    anchor: np.ndarray
    direction: np.ndarray
    statistic_sd: float
    observed_statistic: float
    eta: np.ndarray

    def at(self, z: float) -> np.ndarray:
        return self.anchor + self.direction * z

    @property
    def z_bounds(self) -> tuple[float, float]:
        half = Z_RANGE_SDS * self.statistic_sd
        # keep the observed statistic well inside the sweep
        half = max(half, abs(self.observed_statistic) + 0.5 * half)
        return (-half, half)

    @property
    def nudge(self) -> float:
        return NUDGE_SDS * self.statistic_sd


@dataclass(frozen=True)
class SubProblemRecord:
    transport_index: int
    selection_index: int
    interval: tuple[float, float]
    pattern: SelectionPattern
    matches_observed: bool


@dataclass(frozen=True, eq=False)
class FeatureInference:
    feature: int
    statistic: float
    sigma: float
    region: TruncationRegion
    p_value: float
    interval_count: int = 0
    runtime_s: float = 0.0
    line: LineParametrization | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class Selection:
    """Observed DA + fit outcome."""

    transport: TransportSolution
    fit: FitResult
    design: np.ndarray
    transform: np.ndarray

    @property
    def active_set(self) -> tuple[int, ...]:
        return self.fit.pattern.active_set


def select_features(
    dataset: TwoDomainDataset,
    penalty: PenaltyConfig,
    problem: TransportProblem | None = None,
) -> Selection:
    """Run OT domain adaptation then the penalized fit on the observed data."""
    problem = build_problem(dataset) if problem is None else problem
    y = dataset.stacked_response
    solution = solve_transport(problem, y)
    omega = transport_matrix(solution.plan)
    design = omega @ dataset.stacked_features
    result = fit(design, omega @ y, penalty)
    return Selection(solution, result, design, omega)


def build_eta(dataset: TwoDomainDataset, active_set, feature: int) -> np.ndarray:
    """Contrast whose inner product with ``(Y^s; Y^t)`` is the target-only
    least-squares coefficient of ``feature`` on the columns ``active_set``."""
    active = list(active_set)
    if feature not in active:
        raise ValueError(f"feature {feature} is not in the active set {active}")
    xt = dataset.target_features[:, active]
    gram = xt.T @ xt
    e = np.zeros(len(active))
    e[active.index(feature)] = 1.0
    try:
        if np.linalg.matrix_rank(gram) < len(active):
            raise np.linalg.LinAlgError
        coef = np.linalg.solve(gram, e)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "target design restricted to the active set is rank deficient"
        ) from None
    return np.concatenate([np.zeros(dataset.n_source), xt @ coef])


def decompose_line(dataset: TwoDomainDataset, eta: np.ndarray) -> LineParametrization:
    eta = np.asarray(eta, dtype=float)
    cov = dataset.stacked_cov
    sigma_eta = cov @ eta
    var = float(eta @ sigma_eta)
    if not var > 0:
        raise NumericalDegeneracyError("test statistic has non-positive variance")
    y = dataset.stacked_response
    b = sigma_eta / var
    z_obs = float(eta @ y)
    a = y - b * z_obs
    return LineParametrization(a, b, math.sqrt(var), z_obs, eta)


def divide_and_conquer(
    dataset: TwoDomainDataset,
    line: LineParametrization,
    penalty: PenaltyConfig,
    observed_active,
    problem: TransportProblem | None = None,
) -> tuple[list[SubProblemRecord], TruncationRegion]:
    """Sweep ``z`` across the range, one sub-problem (fixed transport basis,
    active set and signs) at a time, and collect the union of sub-problem
    intervals whose active set equals ``observed_active``."""
    problem = build_problem(dataset) if problem is None else problem
    observed_active = tuple(int(j) for j in observed_active)
    x = dataset.stacked_features
    z_min, z_max = line.z_bounds
    delta = line.nudge

    records: list[SubProblemRecord] = []
    u = -1
    v = 0
    basis = None
    basis_hi = -math.inf
    beta = None
    prev_end = z_min
    z = z_min
    stalls = 0
    while z < z_max:
        if z > basis_hi:
            sol = solve_transport(problem, line.at(z), initial_basis=basis)
            basis = sol.basis
            (basis_lo, basis_hi), = basis_region(problem, sol, line, z, z_min, z_max).intervals
            omega = transport_matrix(sol.plan)
            design_t = omega @ x
            anchor_t = omega @ line.anchor
            direction_t = omega @ line.direction
            gram = design_t.T @ design_t
            corr_a = design_t.T @ anchor_t
            corr_b = design_t.T @ direction_t
            u += 1
            v = 0

        result = fit_gram(gram, corr_a + corr_b * z, penalty, beta0=beta)
        beta = result.coefficients
        psi, phi = selection_inequalities(design_t, anchor_t, direction_t, result.pattern, penalty)
        sel_lo, sel_hi = solve_linear_inequalities(psi, phi)
        hi = min(basis_hi, sel_hi, z_max)
        lo = max(basis_lo, sel_lo)
        if hi < z:
            log.debug("sub-problem at z=%g has empty interval; stepping by the nudge", z)
            hi = z
        start = max(min(lo, z), prev_end) if records else z_min
        records.append(
            SubProblemRecord(
                u,
                v,
                (start, hi),
                result.pattern,
                result.pattern.active_set == observed_active,
            )
        )
        v += 1

        if hi - z < delta:
            stalls += 1
            if stalls > STAGNATION_LIMIT:
                raise SweepStagnationError(
                    f"{stalls} consecutive sub-problems narrower than {delta:.3g} near z={z:.6g}"
                )
        else:
            stalls = 0
        prev_end = hi
        z = hi + delta

    region = TruncationRegion.from_intervals(
        (r.interval for r in records if r.matches_observed), merge_gap=2 * delta
    )
    return records, region


def _log_mass(lo: float, hi: float) -> float:
    """log P(lo <= N(0, 1) <= hi), accurate in both tails."""
    if hi <= lo:
        return -math.inf
    if lo >= 0:
        a, b = log_ndtr(-lo), log_ndtr(-hi)
        return float(a + math.log1p(-math.exp(b - a))) if b < a else -math.inf
    if hi <= 0:
        return _log_mass(-hi, -lo)
    return math.log(ndtr(hi) - ndtr(lo))


def _log_region_mass(pieces) -> float:
    logs = [_log_mass(lo, hi) for lo, hi in pieces]
    return float(np.logaddexp.reduce(logs)) if logs else -math.inf


def truncated_two_sided_p(line: LineParametrization, region: TruncationRegion) -> float:
    """``P(|Z| >= |Z_obs| | Z in region)`` for ``Z ~ N(0, sigma^2)``."""
    if region.is_empty:
        raise ValueError("empty truncation region")
    sigma = line.statistic_sd
    t = abs(line.observed_statistic) / sigma
    std = [(lo / sigma, hi / sigma) for lo, hi in region]
    log_den = _log_region_mass(std)
    if log_den < MIN_LOG_MASS:
        raise NumericalDegeneracyError("truncation region has negligible null mass")
    tails = []
    for lo, hi in std:
        if hi > t:
            tails.append((max(lo, t), hi))
        if lo < -t:
            tails.append((lo, min(hi, -t)))
    log_num = _log_region_mass(tails)
    return float(min(1.0, max(0.0, math.exp(log_num - log_den))))


def _check_contains(line: LineParametrization, region: TruncationRegion) -> None:
    if not region.contains(line.observed_statistic, tol=10 * line.nudge):
        log.warning(
            "observed statistic %.6g lies outside its truncation region %s",
            line.observed_statistic,
            region.to_list(),
        )


def infer_feature(
    dataset: TwoDomainDataset,
    penalty: PenaltyConfig,
    active_set,
    feature: int,
    problem: TransportProblem | None = None,
) -> FeatureInference:
    """Selective inference for one selected feature (full union over sub-problems)."""
    start = time.perf_counter()
    line = decompose_line(dataset, build_eta(dataset, active_set, feature))
    records, region = divide_and_conquer(dataset, line, penalty, active_set, problem)
    _check_contains(line, region)
    p = truncated_two_sided_p(line, region)
    return FeatureInference(
        feature,
        line.observed_statistic,
        line.statistic_sd,
        region,
        p,
        len(records),
        time.perf_counter() - start,
        line,
    )


def observed_subproblem_region(
    dataset: TwoDomainDataset,
    line: LineParametrization,
    penalty: PenaltyConfig,
    problem: TransportProblem | None = None,
) -> TruncationRegion:
    """Interval of the single sub-problem containing the observed data:
    same transport basis, active set and signs."""
    problem = build_problem(dataset) if problem is None else problem
    z_obs = line.observed_statistic
    z_min, z_max = line.z_bounds
    sol = solve_transport(problem, line.at(z_obs))
    (b_lo, b_hi), = basis_region(problem, sol, line, z_obs, z_min, z_max).intervals
    omega = transport_matrix(sol.plan)
    design_t = omega @ dataset.stacked_features
    anchor_t, direction_t = omega @ line.anchor, omega @ line.direction
    result = fit(design_t, anchor_t + direction_t * z_obs, penalty)
    psi, phi = selection_inequalities(design_t, anchor_t, direction_t, result.pattern, penalty)
    s_lo, s_hi = solve_linear_inequalities(psi, phi)
    lo, hi = max(b_lo, s_lo), min(b_hi, s_hi)
    lo, hi = min(lo, z_obs), max(hi, z_obs)
    if hi <= lo:
        hi = lo + line.nudge
    return TruncationRegion(((lo, hi),))


def infer_feature_oc(
    dataset: TwoDomainDataset,
    penalty: PenaltyConfig,
    active_set,
    feature: int,
    problem: TransportProblem | None = None,
) -> FeatureInference:
    """Over-conditioned variant: truncate to the observed sub-problem only."""
    start = time.perf_counter()
    line = decompose_line(dataset, build_eta(dataset, active_set, feature))
    region = observed_subproblem_region(dataset, line, penalty, problem)
    p = truncated_two_sided_p(line, region)
    return FeatureInference(
        feature,
        line.observed_statistic,
        line.statistic_sd,
        region,
        p,
        1,
        time.perf_counter() - start,
        line,
    )


def sfs_da(dataset: TwoDomainDataset, penalty: PenaltyConfig) -> list[FeatureInference]:
    """Selective p-value for every feature selected on the observed data."""
    problem = build_problem(dataset)
    selection = select_features(dataset, penalty, problem)
    active = selection.active_set
    return [infer_feature(dataset, penalty, active, j, problem) for j in active]


def sfs_da_oc(dataset: TwoDomainDataset, penalty: PenaltyConfig) -> list[FeatureInference]:
    problem = build_problem(dataset)
    selection = select_features(dataset, penalty, problem)
    active = selection.active_set
    return [infer_feature_oc(dataset, penalty, active, j, problem) for j in active]
