"""Online reference governor on a lifted admissible set.

The reference starts at a minimum-norm admissible value and afterwards follows
``v(k) = (1 - lam) * beta * v(k-1)`` with the largest admissible ``lam`` in
``[0, 1]`` found by bisection.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .lift import ProblemSpec
from .moas import Polytope, RobustMOAS
from .polykron import PowerLift

DEFAULT_DEPTH = 30
INIT_TOL = 1e-9
# rows are unit-norm, so this is a distance into the interior of the set
MARGIN = 0.0


class InadmissibleInitialState(RuntimeError):
    def __init__(self, message, violated_rows=()):
        super().__init__(message)
        self.violated_rows = list(violated_rows)


class SafetyMarginWarning(RuntimeWarning):
    """Even the slowest admissible decay left the admissible set."""


class OrderingMismatch(ValueError):
    pass


def make_lift(n: int, p: int) -> PowerLift:
    return PowerLift(degree=p).fit(np.zeros((1, n)))


def embed(x, v, basis: PowerLift) -> np.ndarray:
    """Stacked powers of ``x_v = [x; v]``."""
    xv = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)),
                         np.atleast_1d(np.asarray(v, dtype=float))])
    return basis.transform(xv[None, :])[0]


def _check_ordering(moas: Polytope, basis: PowerLift):
    if moas.ordering and moas.ordering != basis.ordering_id:
        raise OrderingMismatch(f"polytope ordering {moas.ordering!r} differs from {basis.ordering_id!r}")


def _admissible_many(x, V, moas: Polytope, basis: PowerLift, margin=MARGIN) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.atleast_2d(V)
    XV = np.hstack([np.tile(x, (len(V), 1)), V])
    return moas.contains(basis.transform(XV), tol=-margin)


@dataclass
class GovernorState:
    v: np.ndarray
    beta: float
    moas: Polytope
    basis: PowerLift
    bisection_depth: int = DEFAULT_DEPTH
    margin: float = MARGIN
    last_lambda: float = float("nan")
    steps: int = 0

    def admissible(self, x, v) -> bool:
        return self.moas.contains(embed(x, v, self.basis), tol=-self.margin)


def _bisect_toward(x, v_bad, v_good, moas, basis, tol, margin):
    """Shrink ``[v_bad, v_good]`` onto the admissible boundary, keeping ``v_good`` admissible."""
    while np.max(np.abs(v_good - v_bad)) > tol:
        mid = 0.5 * (v_bad + v_good)
        if _admissible_many(x, mid[None, :], moas, basis, margin)[0]:
            v_good = mid
        else:
            v_bad = mid
    return v_good


def init_reference(x0, moas: Polytope, basis: PowerLift, v_box=None, tol=INIT_TOL,
                   grid: int = 4001, margin: float = MARGIN) -> np.ndarray:
    """Approximately minimum-norm ``v`` with ``(x0, v)`` admissible.

    The search runs over ``v_box`` (``(n_v, 2)`` bounds, taken from the set
    itself when omitted): grid scan, then bisection from the best grid point
    toward the origin.
    """
    _check_ordering(moas, basis)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n_v = basis.n_features_in_ - len(x0)
    zero = np.zeros(n_v)
    if _admissible_many(x0, zero[None, :], moas, basis, margin)[0]:
        return zero
    if v_box is None:
        v_box = np.zeros((n_v, 2))
        for k in range(n_v):
            lo, hi = moas_ref_range(moas, len(x0), n_v, k)
            v_box[k] = lo, hi
    v_box = np.asarray(v_box, dtype=float).reshape(n_v, 2)

    if n_v == 1:
        best = None
        for side in (v_box[0, 1], v_box[0, 0]):
            if side == 0:
                continue
            pts = np.linspace(0.0, side, grid)[1:, None]
            ok = _admissible_many(x0, pts, moas, basis, margin)
            if not ok.any():
                continue
            first = int(np.argmax(ok))
            bad = pts[first - 1] if first > 0 else zero
            cand = _bisect_toward(x0, bad, pts[first], moas, basis, tol, margin)
            if best is None or abs(cand[0]) < abs(best[0]):
                best = cand
        if best is None:
            raise InadmissibleInitialState("no admissible reference in the search box",
                                           moas.violated_rows(embed(x0, zero, basis)))
        return best

    per_axis = max(3, int(round(grid ** (1.0 / n_v))))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in v_box]
    pts = np.array(list(itertools.product(*axes)))
    ok = _admissible_many(x0, pts, moas, basis, margin)
    if not ok.any():
        raise InadmissibleInitialState("no admissible reference in the search box",
                                       moas.violated_rows(embed(x0, zero, basis)))
    cand = pts[ok]
    v = cand[np.argmin(np.linalg.norm(cand, axis=1))]
    # coordinate descent toward the origin
    for _ in range(20):
        prev = v.copy()
        for k in range(n_v):
            target = v.copy()
            target[k] = 0.0
            if _admissible_many(x0, target[None, :], moas, basis, margin)[0]:
                v = target
            else:
                v = _bisect_toward(x0, target, v, moas, basis, tol, margin)
        if np.allclose(prev, v, atol=tol):
            break
    return v


def moas_ref_range(moas: Polytope, n_x: int, n_v: int, k: int, method="highs") -> tuple[float, float]:
    e = np.zeros(moas.dim)
    e[n_x + k] = 1.0
    hi = moas.maximize(e, method)
    lo = moas.maximize(-e, method)
    if not (hi.optimal and lo.optimal):
        raise InadmissibleInitialState("reference range of the admissible set is not bounded")
    return -lo.value, hi.value


def update(x_k, state: GovernorState) -> np.ndarray:
    """One governor step; mutates and returns ``state.v``."""
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    decayed = state.beta * state.v
    state.steps += 1
    zero = np.zeros_like(state.v)
    if _admissible_many(x_k, zero[None, :], state.moas, state.basis, state.margin)[0]:
        state.last_lambda = 1.0
        state.v = zero
        return state.v
    if not np.any(state.v) or not _admissible_many(x_k, decayed[None, :], state.moas, state.basis, state.margin)[0]:
        warnings.warn(f"no admissible reference at step {state.steps}; holding beta * v",
                      SafetyMarginWarning, stacklevel=2)
        state.last_lambda = 0.0
        state.v = decayed
        return state.v
    lo, hi = 0.0, 1.0
    for _ in range(state.bisection_depth):
        mid = 0.5 * (lo + hi)
        if _admissible_many(x_k, ((1.0 - mid) * decayed)[None, :], state.moas, state.basis,
                            state.margin)[0]:
            lo = mid
        else:
            hi = mid
    state.last_lambda = lo
    state.v = (1.0 - lo) * decayed
    return state.v


class ReferenceGovernor(BaseEstimator):
    """Reference governor for a :class:`~polyrg.lift.ProblemSpec`.

    ``fit`` builds the robust admissible set (or adopts a precomputed one);
    ``reset`` picks the initial reference and ``step`` applies the bisection
    update.

    Parameters
    ----------
    eps, max_iter, lp_method
        Forwarded to :class:`~polyrg.moas.RobustMOAS`.  The default ``"auto"``
        keeps a positive tightening even without disturbances: a set built
        with zero tightening is invariant only in exact arithmetic.
    bisection_depth : int
        Number of halvings used to find ``lam``.
    init_tol : float
        Resolution of the initial-reference bisection.
    margin : float
        Distance kept from every (unit-norm) face of the admissible set.
    """

    def __init__(self, eps="auto", max_iter=10_000, lp_method="highs",
                 bisection_depth=DEFAULT_DEPTH, init_tol=INIT_TOL, margin=MARGIN):
        self.eps = eps
        self.max_iter = max_iter
        self.lp_method = lp_method
        self.bisection_depth = bisection_depth
        self.init_tol = init_tol
        self.margin = margin

    def fit(self, spec: ProblemSpec, polytope: Polytope | None = None):
        self.spec_ = spec
        self.basis_ = make_lift(spec.n_x + spec.n_v, spec.p)
        if polytope is None:
            self.moas_ = RobustMOAS(self.eps, self.max_iter, self.lp_method).fit(spec)
            polytope = self.moas_.polytope_
        _check_ordering(polytope, self.basis_)
        self.polytope_ = polytope
        self.v_box_ = np.array([moas_ref_range(polytope, spec.n_x, spec.n_v, k, self.lp_method)
                                for k in range(spec.n_v)])
        self.state_ = None
        return self

    def reset(self, x0) -> np.ndarray:
        check_is_fitted(self, "polytope_")
        v0 = init_reference(x0, self.polytope_, self.basis_, self.v_box_, self.init_tol,
                            margin=self.margin)
        self.state_ = GovernorState(v0, self.spec_.beta, self.polytope_, self.basis_,
                                    self.bisection_depth, self.margin)
        self.last_lambda_ = float("nan")
        return v0.copy()

    def step(self, x) -> np.ndarray:
        if getattr(self, "state_", None) is None:
            raise RuntimeError("call reset(x0) before step()")
        v = update(x, self.state_)
        self.last_lambda_ = self.state_.last_lambda
        return v.copy()

    def admissible(self, x, v) -> bool:
        check_is_fitted(self, "polytope_")
        return self.polytope_.contains(embed(x, v, self.basis_), tol=-self.margin)

    def embed(self, x, v) -> np.ndarray:
        check_is_fitted(self, "basis_")
        return embed(x, v, self.basis_)
