"""Unions of closed real intervals and the inequality solvers that produce them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

COEF_EPS = 1e-12


@dataclass(frozen=True)
class TruncationRegion:
    """Sorted, pairwise-disjoint closed intervals on the real line.

    Use :meth:`from_intervals` to build one from arbitrary (possibly
    overlapping) pieces; the plain constructor trusts its input.
    """

    intervals: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    @classmethod
    def from_intervals(
        cls, pieces: Iterable[Sequence[float]], merge_gap: float = 0.0
    ) -> "TruncationRegion":
        return cls(tuple(merge_intervals(pieces, merge_gap)))

    @classmethod
    def whole(cls, lo: float, hi: float) -> "TruncationRegion":
        return cls(((float(lo), float(hi)),))

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def length(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def contains(self, z: float, tol: float = 0.0) -> bool:
        return any(lo - tol <= z <= hi + tol for lo, hi in self.intervals)

    def intersect(self, other: "TruncationRegion") -> "TruncationRegion":
        out = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return TruncationRegion(tuple(out))

    def union(self, other: "TruncationRegion") -> "TruncationRegion":
        return TruncationRegion.from_intervals(self.intervals + other.intervals)

    def complement_within(self, lo: float, hi: float) -> "TruncationRegion":
        out = []
        cursor = lo
        for a, b in self.intervals:
            if a > cursor:
                out.append((cursor, min(a, hi)))
            cursor = max(cursor, b)
        if cursor < hi:
            out.append((cursor, hi))
        return TruncationRegion(tuple((a, b) for a, b in out if a < b))

    def symmetric_difference_length(
        self, other: "TruncationRegion", lo: float, hi: float
    ) -> float:
        """Total length of points in exactly one of the two regions, within [lo, hi]."""
        only_self = self.intersect(other.complement_within(lo, hi))
        only_other = other.intersect(self.complement_within(lo, hi))
        return only_self.length + only_other.length

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


def merge_intervals(
    pieces: Iterable[Sequence[float]], merge_gap: float = 0.0
) -> list[tuple[float, float]]:
    """Sort and merge intervals whose gap is at most ``merge_gap``.

    Empty pieces (``lo > hi``) are dropped; zero-width pieces are kept only
    when they touch a neighbour.
    """
    items = sorted((float(lo), float(hi)) for lo, hi in pieces if lo <= hi)
    merged: list[list[float]] = []
    for lo, hi in items:
        if merged and lo - merged[-1][1] <= merge_gap:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged if lo < hi]


def solve_linear_inequalities(
    psi: np.ndarray, phi: np.ndarray, lo: float = -math.inf, hi: float = math.inf
) -> tuple[float, float]:
    """Return the interval ``{z : psi * z <= phi}`` intersected with [lo, hi].

    Rows with ``|psi| <= COEF_EPS`` constrain nothing when ``phi >= -COEF_EPS``
    and make the set empty otherwise; an empty result comes back as ``(hi, lo)``
    style inverted bounds, which callers treat as infeasible.
    """
    psi = np.asarray(psi, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    flat = np.abs(psi) <= COEF_EPS
    if np.any(phi[flat] < -COEF_EPS):
        return (math.inf, -math.inf)
    pos = psi > COEF_EPS
    neg = psi < -COEF_EPS
    if np.any(pos):
        hi = min(hi, float(np.min(phi[pos] / psi[pos])))
    if np.any(neg):
        lo = max(lo, float(np.max(phi[neg] / psi[neg])))
    return (lo, hi)


def _stable_roots(a: float, b: float, c: float) -> tuple[float, float] | None:
    """Real roots of ``a z^2 + b z + c`` (a != 0) in increasing order, or None."""
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t = -0.5 * (b + math.copysign(sq, b))
    if t == 0.0:
        return (0.0, 0.0)
    r1 = t / a
    r2 = c / t
    return (min(r1, r2), max(r1, r2))


def quadratic_interval_containing(
    p: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    z: float,
    lo: float = -math.inf,
    hi: float = math.inf,
) -> tuple[float, float]:
    """Maximal interval around ``z`` on which ``p + q t + r t^2 >= 0`` holds
    for every component.

    Each component's feasible set is a union of at most two half-lines or a
    single bounded interval; the piece nearest ``z`` is kept so that a point
    sitting on a boundary (numerically just outside) still gets its own cell.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))

    linear = np.abs(r) <= COEF_EPS
    if np.any(linear):
        lo, hi = solve_linear_inequalities(-q[linear], p[linear], lo, hi)

    for pk, qk, rk in zip(p[~linear], q[~linear], r[~linear]):
        roots = _stable_roots(rk, qk, pk)
        if rk > 0:
            if roots is None:
                continue
            z1, z2 = roots
            if z <= 0.5 * (z1 + z2):
                hi = min(hi, z1)
            else:
                lo = max(lo, z2)
        else:
            if roots is None:
                # concave and negative everywhere; collapse to the point itself
                return (z, z)
            z1, z2 = roots
            lo = max(lo, z1)
            hi = min(hi, z2)
    return (lo, hi)
