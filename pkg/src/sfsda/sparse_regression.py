"""Lasso / elastic-net fitting and the KKT polyhedron of a selection event."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .intervals import TruncationRegion, solve_linear_inequalities

ZERO_THRESHOLD = 1e-10
CD_TOL = 1e-12
MAX_SWEEPS = 100_000
POLISH_EVERY = 5


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final KKT residual {residual:.3e})")
        self.residual = residual


class IllPosedSelectionError(ArithmeticError):
    """The active-set Gram matrix is singular, so the KKT region is undefined."""


@dataclass(frozen=True)
class PenaltyConfig:
    l1_weight: float
    l2_weight: float = 0.0

    def __post_init__(self):
        if not self.l1_weight >= 0 or not self.l2_weight >= 0:
            raise ValueError("penalty weights must be nonnegative")


@dataclass(frozen=True)
class SelectionPattern:
    active_set: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        active = tuple(int(j) for j in self.active_set)
        signs = tuple(int(s) for s in self.signs)
        if len(active) != len(signs):
            raise ValueError("active_set and signs must have equal length")
        if any(b <= a for a, b in zip(active, active[1:])):
            raise ValueError("active_set must be strictly increasing")
        if any(s not in (-1, 1) for s in signs):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "active_set", active)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def from_coefficients(cls, beta: np.ndarray) -> "SelectionPattern":
        active = np.flatnonzero(np.abs(beta) > ZERO_THRESHOLD)
        return cls(tuple(active.tolist()), tuple(np.sign(beta[active]).astype(int).tolist()))


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    pattern: SelectionPattern
    kkt_residual: float
    sweeps: int = 0
    nonunique: bool = False


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def kkt_residual(gram: np.ndarray, corr: np.ndarray, beta: np.ndarray, penalty: PenaltyConfig) -> float:
    """Largest violation of the stationarity / subgradient conditions.

    ``gram = X^T X`` and ``corr = X^T y``.
    """
    lam, gam = penalty.l1_weight, penalty.l2_weight
    grad = corr - gram @ beta
    active = beta != 0
    viol = np.zeros_like(beta)
    viol[active] = np.abs(grad[active] - gam * beta[active] - lam * np.sign(beta[active]))
    viol[~active] = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(viol.max(initial=0.0))


def _polish(gram, corr, beta, penalty) -> np.ndarray | None:
    """Exact solution on the current support and signs, if it satisfies KKT."""
    lam, gam = penalty.l1_weight, penalty.l2_weight
    active = np.flatnonzero(np.abs(beta) > ZERO_THRESHOLD)
    signs = np.sign(beta[active])
    out = np.zeros_like(beta)
    if active.size:
        g = gram[np.ix_(active, active)] + gam * np.eye(active.size)
        try:
            b_m = np.linalg.solve(g, corr[active] - lam * signs)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(b_m) != signs) or np.any(np.abs(b_m) <= ZERO_THRESHOLD):
            return None
        out[active] = b_m
    inactive = np.ones(beta.size, dtype=bool)
    inactive[active] = False
    slack = np.abs(corr[inactive] - gram[inactive] @ out)
    scale = max(1.0, lam)
    if np.any(slack > lam + 1e-9 * scale):
        return None
    return out


def fit_gram(
    gram: np.ndarray,
    corr: np.ndarray,
    penalty: PenaltyConfig,
    beta0: np.ndarray | None = None,
) -> FitResult:
    """Cyclic coordinate descent on the Gram form of the objective.

    Sweeps stop once the largest coefficient change is at most ``CD_TOL``,
    or earlier when solving the KKT equations on the current support and
    sign pattern gives an exact certificate.
    """
    lam, gam = penalty.l1_weight, penalty.l2_weight
    p = corr.size
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    diag = np.diag(gram) + gam
    g_rows = [gram[j] for j in range(p)]
    sweeps = 0
    exact = None
    while sweeps < MAX_SWEEPS:
        sweeps += 1
        max_change = 0.0
        for j in range(p):
            old = beta[j]
            if diag[j] <= 0.0:
                new = 0.0
            else:
                rho = corr[j] - g_rows[j] @ beta + gram[j, j] * old
                if rho > lam:
                    new = (rho - lam) / diag[j]
                elif rho < -lam:
                    new = (rho + lam) / diag[j]
                else:
                    new = 0.0
            if new != old:
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change <= CD_TOL:
            break
        if sweeps % POLISH_EVERY == 0:
            exact = _polish(gram, corr, beta, penalty)
            if exact is not None:
                break
    else:
        beta[np.abs(beta) <= ZERO_THRESHOLD] = 0.0
        raise ConvergenceError(
            f"coordinate descent did not converge in {MAX_SWEEPS} sweeps",
            kkt_residual(gram, corr, beta, penalty),
        )

    if exact is None:
        exact = _polish(gram, corr, beta, penalty)
    if exact is not None:
        beta = exact
    beta[np.abs(beta) <= ZERO_THRESHOLD] = 0.0
    pattern = SelectionPattern.from_coefficients(beta)
    nonunique = False
    if gam == 0.0 and pattern.active_set:
        sub = gram[np.ix_(pattern.active_set, pattern.active_set)]
        nonunique = np.linalg.matrix_rank(sub) < len(pattern.active_set)
    return FitResult(beta, pattern, kkt_residual(gram, corr, beta, penalty), sweeps, nonunique)


def fit(design: np.ndarray, response: np.ndarray, penalty: PenaltyConfig) -> FitResult:
    """Minimize ``0.5 ||y - X b||^2 + l1 ||b||_1 + 0.5 l2 ||b||^2``."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim != 2 or response.shape != (design.shape[0],):
        raise ValueError("design must be (n, p) and response (n,)")
    return fit_gram(design.T @ design, design.T @ response, penalty)


def selection_inequalities(
    design_t: np.ndarray,
    anchor_t: np.ndarray,
    direction_t: np.ndarray,
    pattern: SelectionPattern,
    penalty: PenaltyConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``(psi, phi)`` with the selection event equal to ``{z : psi z <= phi}``.

    ``design_t`` is the transported design and ``anchor_t``/``direction_t``
    the transported line, so the response at ``z`` is
    ``anchor_t + direction_t * z``.
    """
    lam, gam = penalty.l1_weight, penalty.l2_weight
    if lam <= 0:
        raise ValueError("the selection region needs a positive l1 weight")
    p = design_t.shape[1]
    active = np.array(pattern.active_set, dtype=int)
    inactive = np.setdiff1d(np.arange(p), active)
    signs = np.array(pattern.signs, dtype=float)
    x_in = design_t[:, inactive]

    psi_parts, phi_parts = [], []
    if active.size:
        x_m = design_t[:, active]
        g = x_m.T @ x_m + gam * np.eye(active.size)
        try:
            g_inv_xt = np.linalg.solve(g, x_m.T)
            g_inv_s = np.linalg.solve(g, signs)
        except np.linalg.LinAlgError:
            raise IllPosedSelectionError("singular active-set Gram matrix") from None
        if gam == 0.0 and np.linalg.cond(g) > 1e12:
            raise IllPosedSelectionError("ill-conditioned active-set Gram matrix")
        # sign(beta_M(z)) == S
        psi_parts.append(-signs * (g_inv_xt @ direction_t))
        phi_parts.append(signs * (g_inv_xt @ anchor_t) - lam * signs * g_inv_s)
        resid_a = anchor_t - x_m @ (g_inv_xt @ anchor_t)
        resid_b = direction_t - x_m @ (g_inv_xt @ direction_t)
        offset = x_in.T @ (x_m @ g_inv_s)
    else:
        resid_a, resid_b = anchor_t, direction_t
        offset = np.zeros(inactive.size)

    if inactive.size:
        # -1 <= offset + (x_in^T resid(z)) / lam <= 1
        slope = x_in.T @ resid_b / lam
        icpt = x_in.T @ resid_a / lam
        psi_parts += [slope, -slope]
        phi_parts += [1.0 - offset - icpt, 1.0 + offset + icpt]

    if not psi_parts:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(psi_parts), np.concatenate(phi_parts)


def selection_region(
    design: np.ndarray,
    transform: np.ndarray,
    line,
    pattern: SelectionPattern,
    penalty: PenaltyConfig,
    z_current: float | None = None,
    z_min: float = -math.inf,
    z_max: float = math.inf,
) -> TruncationRegion:
    """Interval of ``z`` on which the fit at ``transform @ (a + b z)`` keeps ``pattern``.

    ``design`` is the untransported stack ``(X^s; X^t)``.  If ``z_current``
    is given, the returned interval is widened to include it, guarding
    against rounding when ``z_current`` sits on a boundary.
    """
    design_t = transform @ design
    psi, phi = selection_inequalities(
        design_t, transform @ line.anchor, transform @ line.direction, pattern, penalty
    )
    lo, hi = solve_linear_inequalities(psi, phi, z_min, z_max)
    if z_current is not None:
        lo, hi = min(lo, z_current), max(hi, z_current)
    return TruncationRegion(((lo, hi),))
