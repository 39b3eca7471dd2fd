"""Comparison procedures: naive z-test, Bonferroni over all active sets, data splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .datasets import TwoDomainDataset, make_rng
from .inference import build_eta, decompose_line, select_features
from .sparse_regression import PenaltyConfig


def naive_p(line) -> float:
    """Two-sided normal p-value that ignores the selection step."""
    if not line.statistic_sd > 0:
        raise ValueError("statistic_sd must be positive")
    return float(2.0 * norm.sf(abs(line.observed_statistic) / line.statistic_sd))


def bonferroni_p(naive: float, p_features: int) -> float:
    """Naive p-value inflated by the number of possible active sets, ``2**p``."""
    if not 0.0 <= naive <= 1.0:
        raise ValueError("naive p-value must lie in [0, 1]")
    # 2**p overflows float for p > 1023; the product is then certainly capped
    if p_features > 1000:
        return 1.0 if naive > 0 else 0.0
    return min(1.0, math.ldexp(naive, p_features))


@dataclass(frozen=True)
class SplitReport:
    """Outcome of data splitting.

    ``p_values`` maps each feature selected on the first half to its p-value
    on the second half, or to ``None`` when the inference design is singular.
    """

    active_set: tuple[int, ...]
    p_values: dict[int, float | None]
    selection_rows: tuple[tuple[int, ...], tuple[int, ...]]
    inference_rows: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def skipped(self) -> tuple[int, ...]:
        return tuple(j for j, p in self.p_values.items() if p is None)


def split_rows(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def data_split_p(dataset: TwoDomainDataset, penalty: PenaltyConfig, seed: int) -> SplitReport:
    """Select on one half of each domain, test on the other target half."""
    n_s, n_t = dataset.n_source, dataset.n_target
    if n_s < 2 or n_t < 2:
        raise ValueError("data splitting needs at least two rows in each domain")
    rng = make_rng(seed)
    sel_s, inf_s = split_rows(n_s, rng)
    sel_t, inf_t = split_rows(n_t, rng)

    selection = select_features(dataset.subset(sel_s, sel_t), penalty)
    active = selection.active_set
    held_out = dataset.subset(inf_s, inf_t)

    p_values: dict[int, float | None] = {}
    for j in active:
        try:
            eta = build_eta(held_out, active, j)
        except np.linalg.LinAlgError:
            p_values[j] = None
            continue
        p_values[j] = naive_p(decompose_line(held_out, eta))
    return SplitReport(
        active,
        p_values,
        (tuple(sel_s.tolist()), tuple(sel_t.tolist())),
        (tuple(inf_s.tolist()), tuple(inf_t.tolist())),
    )
