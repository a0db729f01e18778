"""Dense linear programming: ``maximize c·z subject to G z <= g`` with free ``z``.

The default solver is a two-phase tableau simplex with Bland's rule.  It works
on the dual problem ``minimize g·y subject to Gᵀ y = c, y >= 0``, whose tableau
has only ``dim(z)`` constraint rows, which keeps pivots cheap for the tall
constraint matrices produced by admissible-set construction.  A HiGHS backend
(through :func:`scipy.optimize.linprog`) is available for large batches.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
REFACTOR = 20


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    DEGENERATE = "numerically-degenerate"


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        G = np.asarray(self.rows, dtype=float)
        g = np.asarray(self.rhs, dtype=float).ravel()
        if G.size == 0:
            G = G.reshape(0, len(c))
        if G.ndim != 2 or G.shape[1] != len(c) or G.shape[0] != len(g):
            raise ValueError(f"rows {G.shape}, rhs {g.shape} and objective {c.shape} do not conform")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise ValueError("linear program data must be finite")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "rows", G)
        object.__setattr__(self, "rhs", g)


@dataclass(frozen=True)
class LpOutcome:
    status: LpStatus
    value: float = float("nan")
    point: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _refactor(T, A, b, cost, basis):
    """Rebuild tableau ``T`` from the original data for the current basis."""
    m = len(basis)
    Bm = A[:, basis]
    if np.linalg.cond(Bm) > 1e12:
        return
    Binv = np.linalg.inv(Bm)
    T[:m, :-1] = Binv @ A
    T[:m, -1] = np.maximum(Binv @ b, 0.0)
    T[-1, :-1] = cost - cost[basis] @ T[:m, :-1]
    T[-1, -1] = -cost[basis] @ T[:m, -1]


def _simplex_standard(A, b, cost, max_pivots):
    """Minimize ``cost·y`` s.t. ``A y = b``, ``y >= 0`` by two-phase simplex.

    Returns ``(status, y, basis)`` where basis lists the basic columns of the
    rows that survived phase one.  The tableau is rebuilt from ``A`` every
    ``REFACTOR`` pivots so rounding errors cannot pile up into a cycle.
    """
    m, n = A.shape
    A = A.copy()
    b = b.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # columns: n structural, m artificial, 1 rhs
    A1 = np.hstack([A, np.eye(m)])
    cost1 = np.r_[np.zeros(n), np.ones(m)]
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :-1] = A1
    T[:m, -1] = b
    basis = list(range(n, n + m))
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()

    pivots = 0

    def run(T, A_full, b_full, c_full):
        nonlocal pivots
        allowed = A_full.shape[1]
        while True:
            red = T[-1, :allowed]
            entering = np.flatnonzero(red < -PIVOT_TOL)
            if entering.size == 0:
                return "optimal"
            col = entering[0]
            colv = T[:-1, col]
            pos = colv > PIVOT_TOL * max(1.0, np.abs(colv).max())
            if not pos.any():
                return "unbounded"
            ratios = np.full(colv.shape, np.inf)
            ratios[pos] = T[:-1, -1][pos] / colv[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
            row = min(ties, key=lambda r: basis[r])
            _pivot(T, row, col)
            basis[row] = col
            pivots += 1
            if pivots > max_pivots:
                return "stall"
            if pivots % REFACTOR == 0:
                _refactor(T, A_full, b_full, c_full, basis)

    status = run(T, A1, b, cost1)
    if status == "stall":
        return LpStatus.DEGENERATE, None, None
    if T[-1, -1] < -FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        return LpStatus.INFEASIBLE, None, None

    # drive zero-level artificials out of the basis, dropping dependent rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if cand.size:
                _pivot(T, r, cand[0])
                basis[r] = cand[0]
                keep.append(r)
        else:
            keep.append(r)
    T = np.vstack([T[keep][:, list(range(n)) + [T.shape[1] - 1]], np.zeros((1, n + 1))])
    basis = [basis[r] for r in keep]
    A2, b2 = A[keep], b[keep]
    _refactor(T, A2, b2, cost, basis)

    status = run(T, A2, b2, cost)
    if status == "stall":
        return LpStatus.DEGENERATE, None, None
    if status == "unbounded":
        return LpStatus.UNBOUNDED, None, basis
    y = np.zeros(n)
    y[basis] = T[:-1, -1]
    return LpStatus.OPTIMAL, y, basis


def _pivot(T, row, col):
    T[row] /= T[row, col]
    f = T[:, col].copy()
    f[row] = 0.0
    T -= np.outer(f, T[row])


def _solve_simplex(lp: LinearProgram, max_pivots=None) -> LpOutcome:
    G, g, c = lp.rows, lp.rhs, lp.objective
    m, d = G.shape
    if max_pivots is None:
        max_pivots = 50 * (m + d) + 1000
    if m == 0:
        if np.any(c != 0):
            return LpOutcome(LpStatus.UNBOUNDED)
        return LpOutcome(LpStatus.OPTIMAL, 0.0, np.zeros(d))

    status, y, basis = _simplex_standard(G.T, c, g, max_pivots)
    if status is LpStatus.DEGENERATE:
        return LpOutcome(status)
    if status is LpStatus.UNBOUNDED:
        # dual unbounded: primal infeasible
        return LpOutcome(LpStatus.INFEASIBLE)
    if status is LpStatus.INFEASIBLE:
        # dual infeasible: primal is unbounded or infeasible; Farkas decides
        A = np.vstack([G.T, np.ones((1, m))])
        b = np.zeros(d + 1)
        b[-1] = 1.0
        st2, y2, _ = _simplex_standard(A, b, g, max_pivots)
        if st2 is LpStatus.DEGENERATE:
            return LpOutcome(st2)
        if st2 is LpStatus.OPTIMAL and g @ y2 < -FEAS_TOL:
            return LpOutcome(LpStatus.INFEASIBLE)
        return LpOutcome(LpStatus.UNBOUNDED)

    active = G[basis]
    z = np.linalg.lstsq(active, g[basis], rcond=None)[0]
    slack = G @ z - g
    scale = max(1.0, float(np.abs(g).max()))
    if slack.max(initial=-np.inf) > FEAS_TOL * scale:
        return LpOutcome(LpStatus.DEGENERATE)
    return LpOutcome(LpStatus.OPTIMAL, float(c @ z), z)


def _solve_highs(lp: LinearProgram) -> LpOutcome:
    from scipy.optimize import linprog

    G, g, c = lp.rows, lp.rhs, lp.objective
    if G.shape[0] == 0:
        return _solve_simplex(lp)
    res = linprog(-c, A_ub=G, b_ub=g, bounds=(None, None), method="highs")
    if res.status == 0:
        return LpOutcome(LpStatus.OPTIMAL, float(c @ res.x), res.x)
    if res.status == 2:
        return LpOutcome(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpOutcome(LpStatus.UNBOUNDED)
    return LpOutcome(LpStatus.DEGENERATE)


def solve_lp(lp: LinearProgram, method: str = "simplex") -> LpOutcome:
    """Maximize ``lp.objective · z`` over ``lp.rows z <= lp.rhs``.

    ``method`` is ``"simplex"`` (the built-in Bland-rule solver) or ``"highs"``.
    """
    if method == "simplex":
        return _solve_simplex(lp)
    if method == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown LP method {method!r}")


def maximize(c, G, g, method: str = "simplex") -> LpOutcome:
    return solve_lp(LinearProgram(c, G, g), method)
