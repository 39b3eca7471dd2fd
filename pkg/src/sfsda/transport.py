"""Optimal-transport domain adaptation as a transportation LP with an explicit basis.

Variables are the entries of the plan ``T`` vectorized row-major: index
``k = i * n_t + j`` is source row ``i`` sent to target row ``j``.  A basis is
a set of ``n_s + n_t - 1`` cells forming a spanning tree of the bipartite
source/target graph; one target-marginal constraint is redundant and is
dropped (target ``n_t - 1`` gets potential zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse

from .datasets import TwoDomainDataset
from .intervals import TruncationRegion, quadratic_interval_containing


class SingularBasisError(ArithmeticError):
    """The given index set is not a spanning-tree basis of the transportation LP."""


@dataclass(frozen=True, eq=False)
class TransportProblem:
    n_source: int
    n_target: int
    feature_cost: np.ndarray
    pair_difference_map: sparse.csr_matrix
    constraint_matrix: sparse.csr_matrix
    marginals: np.ndarray

    def pair_differences(self, stacked: np.ndarray) -> np.ndarray:
        """``Theta @ stacked``: entry (i, j) is ``stacked[i] - stacked[n_s + j]``."""
        return self.pair_difference_map @ np.asarray(stacked, dtype=float)

    def cost(self, stacked_response: np.ndarray) -> np.ndarray:
        d = self.pair_differences(stacked_response)
        return self.feature_cost + d * d


@dataclass(frozen=True, eq=False)
class TransportSolution:
    plan: np.ndarray
    basis: np.ndarray
    objective: float

    @property
    def flat_plan(self) -> np.ndarray:
        return self.plan.ravel()


def build_problem(dataset: TwoDomainDataset) -> TransportProblem:
    xs, xt = dataset.source_features, dataset.target_features
    n_s, n_t = xs.shape[0], xt.shape[0]
    diff = xs[:, None, :] - xt[None, :, :]
    feature_cost = np.einsum("ijk,ijk->ij", diff, diff).ravel()

    theta = sparse.hstack(
        [
            sparse.kron(sparse.identity(n_s), np.ones((n_t, 1))),
            -sparse.kron(np.ones((n_s, 1)), sparse.identity(n_t)),
        ]
    ).tocsr()
    h_rows = sparse.kron(sparse.identity(n_s), np.ones((1, n_t)))
    h_cols = sparse.kron(np.ones((1, n_s)), sparse.identity(n_t))
    constraint = sparse.vstack([h_rows, h_cols]).tocsr()
    marginals = np.concatenate([np.full(n_s, 1.0 / n_s), np.full(n_t, 1.0 / n_t)])
    return TransportProblem(n_s, n_t, feature_cost, theta, constraint, marginals)


# -- spanning-tree helpers ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Tree:
    """Basis cells as a tree rooted at the last target node.

    Node ``i`` is source row i, node ``n_s + j`` is target j; ``edge[v]`` is
    the cell joining ``v`` to its parent.
    """

    order: np.ndarray
    parent: np.ndarray
    edge: np.ndarray
    depth: np.ndarray


def _tree(basis: np.ndarray, n_s: int, n_t: int) -> _Tree:
    basis = np.asarray(basis, dtype=np.int64)
    n_nodes = n_s + n_t
    if basis.size != n_nodes - 1:
        raise SingularBasisError(
            f"basis has {basis.size} cells, a spanning tree needs {n_nodes - 1}"
        )
    rows, cols = np.divmod(basis, n_t)
    ends = np.concatenate([rows, n_s + cols])
    others = np.concatenate([n_s + cols, rows]).tolist()
    cells = np.concatenate([basis, basis]).tolist()
    by_node = np.argsort(ends, kind="stable").tolist()
    indptr = np.concatenate([[0], np.cumsum(np.bincount(ends, minlength=n_nodes))]).tolist()

    root = n_nodes - 1
    parent = [-1] * n_nodes
    edge = [-1] * n_nodes
    dep = [0] * n_nodes
    seen = [False] * n_nodes
    seen[root] = True
    order = [root]
    for v in order:
        for slot in by_node[indptr[v] : indptr[v + 1]]:
            w = others[slot]
            if not seen[w]:
                seen[w] = True
                parent[w] = v
                edge[w] = cells[slot]
                dep[w] = dep[v] + 1
                order.append(w)
    if len(order) != n_nodes:
        raise SingularBasisError("basis cells do not form a spanning tree")
    return _Tree(np.array(order), np.array(parent), np.array(edge), np.array(dep))


def potentials(
    basis: np.ndarray, costs: np.ndarray, n_s: int, n_t: int, tree: _Tree | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Dual potentials with ``u_i + v_j = c_ij`` on basic cells and ``v_{n_t-1} = 0``.

    ``costs`` may be a vector or a (n_cells, m) array; every column is solved
    on the same tree.  Equivalent to ``c_B^T H_B^{-1}`` with the last target
    row of ``H`` removed.
    """
    tree = _tree(basis, n_s, n_t) if tree is None else tree
    costs = np.asarray(costs, dtype=float)
    pot = np.zeros((n_s + n_t,) + costs.shape[1:])
    edge_cost = costs[tree.edge[tree.order[1:]]]
    parent = tree.parent
    par = parent.tolist()
    nodes = tree.order[1:].tolist()
    columns = edge_cost.reshape(len(nodes), -1).T
    for col, col_cost in enumerate(columns):
        vals = [0.0] * (n_s + n_t)
        for v, c in zip(nodes, col_cost.tolist()):
            vals[v] = c - vals[par[v]]
        pot.reshape(n_s + n_t, -1)[:, col] = vals
    return pot[:n_s], pot[n_s:]


def reduced_costs(
    basis: np.ndarray, costs: np.ndarray, n_s: int, n_t: int, tree: _Tree | None = None
) -> np.ndarray:
    """Reduced cost of every cell (zero on basic cells), shape ``(n_s*n_t, ...)``."""
    u, v = potentials(basis, costs, n_s, n_t, tree)
    full = np.asarray(costs, dtype=float).reshape((n_s, n_t) + np.shape(costs)[1:])
    red = full - u[:, None, ...] - v[None, :, ...]
    return red.reshape(np.shape(costs))


def basis_flows(
    basis: np.ndarray, problem: TransportProblem, tree: _Tree | None = None
) -> np.ndarray:
    """Plan values on the basic cells (in the order of ``basis``).

    Processing nodes leaves-first, the flow on a node's parent edge is the
    node's marginal minus the flow already sent through its children.
    """
    n_s, n_t = problem.n_source, problem.n_target
    tree = _tree(basis, n_s, n_t) if tree is None else tree
    residual = problem.marginals.tolist()
    par = tree.parent.tolist()
    edge = tree.edge.tolist()
    flows: dict[int, float] = {}
    for v in tree.order[:0:-1].tolist():
        amount = residual[v]
        flows[edge[v]] = amount
        residual[par[v]] -= amount
    return np.array([flows[int(k)] for k in basis])


def northwest_corner(problem: TransportProblem) -> np.ndarray:
    n_s, n_t = problem.n_source, problem.n_target
    supply = problem.marginals[:n_s].copy()
    demand = problem.marginals[n_s:].copy()
    cells = []
    i = j = 0
    while True:
        cells.append(i * n_t + j)
        if i == n_s - 1 and j == n_t - 1:
            break
        amount = min(supply[i], demand[j])
        supply[i] -= amount
        demand[j] -= amount
        if j == n_t - 1 or (i < n_s - 1 and supply[i] <= demand[j]):
            i += 1
        else:
            j += 1
    return np.array(sorted(cells))


@njit(cache=True)
def _simplex_kernel(cost, n_s, n_t, basis, flows, tol, max_pivots):  # pragma: no cover - jitted
    """Bland-rule pivots in place on ``basis``/``flows``; returns the pivot count or -1."""
    n_nodes = n_s + n_t
    m = n_nodes - 1
    root = n_nodes - 1
    ends = np.empty(2 * m, np.int64)
    others = np.empty(2 * m, np.int64)
    indptr = np.zeros(n_nodes + 1, np.int64)
    slots = np.empty(2 * m, np.int64)
    fill = np.empty(n_nodes, np.int64)
    parent = np.empty(n_nodes, np.int64)
    pslot = np.empty(n_nodes, np.int64)
    depth = np.empty(n_nodes, np.int64)
    order = np.empty(n_nodes, np.int64)
    seen = np.empty(n_nodes, np.bool_)
    pot = np.empty(n_nodes)
    head = np.empty(n_nodes, np.int64)
    tail = np.empty(n_nodes, np.int64)
    path = np.empty(n_nodes, np.int64)

    for pivots in range(max_pivots + 1):
        # adjacency of the basis tree
        indptr[:] = 0
        for e in range(m):
            i = basis[e] // n_t
            j = basis[e] % n_t
            ends[2 * e] = i
            others[2 * e] = n_s + j
            ends[2 * e + 1] = n_s + j
            others[2 * e + 1] = i
        for s in range(2 * m):
            indptr[ends[s] + 1] += 1
        for v in range(n_nodes):
            indptr[v + 1] += indptr[v]
            fill[v] = indptr[v]
        for s in range(2 * m):
            v = ends[s]
            slots[fill[v]] = s
            fill[v] += 1

        seen[:] = False
        seen[root] = True
        order[0] = root
        parent[root] = -1
        depth[root] = 0
        pot[root] = 0.0
        count = 1
        pos = 0
        while pos < count:
            v = order[pos]
            pos += 1
            for t in range(indptr[v], indptr[v + 1]):
                s = slots[t]
                w = others[s]
                if not seen[w]:
                    seen[w] = True
                    parent[w] = v
                    pslot[w] = s // 2
                    depth[w] = depth[v] + 1
                    pot[w] = cost[basis[s // 2]] - pot[v]
                    order[count] = w
                    count += 1
        if count != n_nodes:
            return -2

        enter = -1
        for k in range(n_s * n_t):
            if cost[k] - pot[k // n_t] - pot[n_s + k % n_t] < -tol:
                enter = k
                break
        if enter < 0:
            return pivots
        if pivots == max_pivots:
            return -1

        a = enter // n_t
        b = n_s + enter % n_t
        nh = 0
        nt = 0
        while depth[a] > depth[b]:
            head[nh] = pslot[a]
            nh += 1
            a = parent[a]
        while depth[b] > depth[a]:
            tail[nt] = pslot[b]
            nt += 1
            b = parent[b]
        while a != b:
            head[nh] = pslot[a]
            nh += 1
            a = parent[a]
            tail[nt] = pslot[b]
            nt += 1
            b = parent[b]
        n_path = 0
        for t in range(nh):
            path[n_path] = head[t]
            n_path += 1
        for t in range(nt - 1, -1, -1):
            path[n_path] = tail[t]
            n_path += 1

        theta = np.inf
        for t in range(0, n_path, 2):
            if flows[path[t]] < theta:
                theta = flows[path[t]]
        leave = -1
        for t in range(0, n_path, 2):
            e = path[t]
            if flows[e] <= theta and (leave < 0 or basis[e] < basis[leave]):
                leave = e
        for t in range(n_path):
            if t % 2 == 0:
                flows[path[t]] -= theta
            else:
                flows[path[t]] += theta
        basis[leave] = enter
        flows[leave] = theta
    return -1


def solve_transport(
    problem: TransportProblem,
    response_stack: np.ndarray,
    initial_basis: np.ndarray | None = None,
    max_pivots: int = 1_000_000,
) -> TransportSolution:
    """Transportation simplex with Bland's rule.

    Starts from the north-west-corner basis, or from ``initial_basis`` when
    given (any spanning-tree basis is primal feasible because the marginals
    do not depend on the cost).
    """
    n_s, n_t = problem.n_source, problem.n_target
    response_stack = np.asarray(response_stack, dtype=float)
    if response_stack.shape != (n_s + n_t,):
        raise ValueError(f"response_stack must have length {n_s + n_t}")
    cost = problem.cost(response_stack)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(cost))))

    basis = northwest_corner(problem) if initial_basis is None else np.sort(np.asarray(initial_basis))
    basis = basis.astype(np.int64)
    flows = basis_flows(basis, problem)
    status = _simplex_kernel(cost, n_s, n_t, basis, flows, tol, max_pivots)
    if status == -2:
        raise SingularBasisError("basis cells do not form a spanning tree")
    if status < 0:
        raise RuntimeError("transportation simplex exceeded the pivot limit")

    plan = np.zeros(n_s * n_t)
    plan[basis] = np.clip(flows, 0.0, None)
    basis = np.sort(basis)
    return TransportSolution(plan.reshape(n_s, n_t), basis, float(plan @ cost))


def apply_transport(
    solution: TransportSolution, dataset: TwoDomainDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Omega @ X, Omega)`` where ``Omega = [[0, n_s T], [0, I]]``."""
    n_s, n_t = dataset.n_source, dataset.n_target
    omega = transport_matrix(solution.plan)
    design = omega @ dataset.stacked_features
    return design, omega


def transport_matrix(plan: np.ndarray) -> np.ndarray:
    n_s, n_t = plan.shape
    omega = np.zeros((n_s + n_t, n_s + n_t))
    omega[:n_s, n_s:] = n_s * plan
    omega[n_s:, n_s:] = np.eye(n_t)
    return omega


def cost_coefficients(problem: TransportProblem, line) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell costs along ``a + b z`` as ``p + q z + r z^2`` (per cell)."""
    theta_a = problem.pair_differences(line.anchor)
    theta_b = problem.pair_differences(line.direction)
    return (
        problem.feature_cost + theta_a * theta_a,
        2.0 * theta_a * theta_b,
        theta_b * theta_b,
    )


def basis_region(
    problem: TransportProblem,
    solution: TransportSolution,
    line,
    z_current: float,
    z_min: float = -math.inf,
    z_max: float = math.inf,
) -> TruncationRegion:
    """Interval of ``z`` around ``z_current`` on which ``solution.basis`` stays optimal."""
    n_s, n_t = problem.n_source, problem.n_target
    p_cell, q_cell, r_cell = cost_coefficients(problem, line)
    red = reduced_costs(solution.basis, np.column_stack([p_cell, q_cell, r_cell]), n_s, n_t)
    nonbasic = np.ones(n_s * n_t, dtype=bool)
    nonbasic[solution.basis] = False
    p, q, r = red[nonbasic].T
    lo, hi = quadratic_interval_containing(p, q, r, z_current, z_min, z_max)
    lo, hi = min(lo, z_current), max(hi, z_current)
    return TruncationRegion(((lo, hi),))
