"""Finitely determined maximal output admissible sets.

Rows are propagated as ``c Phi^t z <= h - sum_{s<t} supp(c Phi^s Phi_w, Omega) - eps``
until every row of the next step is redundant with respect to the rows
accumulated so far.  The robust set for the lifted system is built in two
stages: the admissible set for the linear rows on ``x_v`` gives a bounding box,
the box bounds the lifted state and the lifted disturbance products, and the
admissible set of the extended system is then computed against those bounds.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .lift import (
    ExtendedSystem,
    ProblemSpec,
    extend,
    instantiate_vertices,
    lift_constraints,
)
from .lpcore import LpStatus, maximize
from .polykron import ORDERING, power_basis

logger = logging.getLogger(__name__)

RED_TOL = 1e-7
MEMBER_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


class MoasError(RuntimeError):
    pass


class TightenedInfeasible(MoasError):
    """Disturbance tightening left no admissible point."""


class NotFinitelyDetermined(MoasError):
    pass


class UnboundedSet(MoasError):
    pass


class RowTag(NamedTuple):
    source: str
    t: int = 0
    vertex: int = -1

    def __str__(self):
        return f"{self.source}:t={self.t}:v={self.vertex}"

    @classmethod
    def parse(cls, text: str) -> "RowTag":
        src, t, v = text.strip().rsplit(":", 2)
        return cls(src, int(t.split("=")[1]), int(v.split("=")[1]))


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def support(self, C) -> np.ndarray:
        """``max_{d in box} C d`` row by row."""
        C = np.atleast_2d(C)
        return np.maximum(C * self.lower, C * self.upper).sum(axis=1)

    def rows(self) -> tuple[np.ndarray, np.ndarray]:
        I = np.eye(self.dim)
        return np.vstack([I, -I]), np.concatenate([self.upper, -self.lower])

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.lower) or np.any(self.upper))

    def sample(self, rng, size) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


@dataclass
class Polytope:
    """H-representation ``G z <= g`` with per-row provenance tags."""

    G: np.ndarray
    g: np.ndarray
    tags: list = field(default_factory=list)
    ordering: str = ""

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.G.ndim != 2 or self.G.shape[0] != len(self.g):
            raise ValueError(f"G {self.G.shape} and g {self.g.shape} do not conform")
        if not self.tags:
            self.tags = [RowTag("row", 0, k) for k in range(len(self.g))]
        if len(self.tags) != len(self.g):
            raise ValueError("one tag per row required")
        zero = ~np.any(self.G, axis=1)
        if np.any(zero & (self.g < 0)):
            raise TightenedInfeasible("all-zero row with negative bound")

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def __len__(self):
        return len(self.g)

    def contains(self, z, tol=MEMBER_TOL):
        """Membership of a point, or of each row of a 2-D array."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return bool(np.all(self.G @ z <= self.g + tol))
        return np.all(z @ self.G.T <= self.g + tol, axis=1)

    def violated_rows(self, z, tol=MEMBER_TOL) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.G @ np.asarray(z, dtype=float) > self.g + tol)]

    def maximize(self, c, method="highs"):
        return maximize(c, self.G, self.g, method)

    def is_redundant(self, row, rhs, tol=RED_TOL, method="highs") -> bool:
        return is_redundant(row, rhs, self, tol=tol, method=method)

    def subset(self, keep) -> "Polytope":
        keep = list(keep)
        return Polytope(self.G[keep], self.g[keep], [self.tags[k] for k in keep], self.ordering)

    def to_text(self) -> str:
        lines = ["# polyrg polytope", f"dim {self.dim}", f"ordering {self.ordering or '-'}",
                 f"rows {len(self)}"]
        for a, b, tag in zip(self.G, self.g, self.tags):
            lines.append(" ".join(f"{v:.17g}" for v in a) + f" | {b:.17g} | {tag}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polytope":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        header = {}
        for ln in lines[:3]:
            key, val = ln.split(None, 1)
            header[key] = val.strip()
        dim, count = int(header["dim"]), int(header["rows"])
        ordering = "" if header["ordering"] == "-" else header["ordering"]
        G = np.zeros((count, dim))
        g = np.zeros(count)
        tags = []
        body = lines[3:]
        if len(body) != count:
            raise ValueError(f"header announces {count} rows, found {len(body)}")
        for k, ln in enumerate(body):
            coeffs, rhs, tag = ln.split("|")
            vals = coeffs.split()
            if len(vals) != dim:
                raise ValueError(f"row {k} has {len(vals)} coefficients, expected {dim}")
            G[k] = [float(v) for v in vals]
            g[k] = float(rhs)
            tags.append(RowTag.parse(tag))
        return cls(G, g, tags, ordering)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Polytope":
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass
class MoasResult:
    polytope: Polytope
    t_star: int
    iterations: int
    rows_before: int
    rows_after: int
    rows_generated: int = 0
    eps: float = 0.0
    wall_time: float = 0.0

    def summary(self) -> dict:
        return {
            "t_star": self.t_star,
            "iterations": self.iterations,
            "rows_generated": self.rows_generated,
            "rows_before_pruning": self.rows_before,
            "rows_after_pruning": self.rows_after,
            "eps": self.eps,
            "wall_time_s": round(self.wall_time, 3),
        }


def contains(polytope: Polytope, z, tol=MEMBER_TOL):
    return polytope.contains(z, tol)


def is_redundant(row, rhs, polytope: Polytope, tol=RED_TOL, method="highs") -> bool:
    """True when ``row · z <= rhs`` holds on the whole polytope."""
    out = maximize(row, polytope.G, polytope.g, method)
    if out.status is LpStatus.INFEASIBLE:
        raise TightenedInfeasible("polytope is empty")
    if out.status is LpStatus.UNBOUNDED:
        return False
    if out.status is LpStatus.DEGENERATE:
        raise MoasError("redundancy LP stalled")
    return out.value <= rhs + tol


def _normalize(G, g):
    norms = np.linalg.norm(G, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return G / safe[:, None], g / safe, norms


def remove_redundant(polytope: Polytope, tol=RED_TOL, method="highs") -> Polytope:
    """Drop rows implied by the remaining ones (one LP per row)."""
    keep = list(range(len(polytope)))
    k = 0
    while k < len(keep):
        idx = keep[k]
        others = keep[:k] + keep[k + 1:]
        G, g = polytope.G[others], polytope.g[others]
        row, rhs = polytope.G[idx], polytope.g[idx]
        # cap the tested row so the LP stays bounded
        out = maximize(row, np.vstack([G, row]), np.append(g, rhs + 1.0), method)
        if out.status is LpStatus.INFEASIBLE:
            raise TightenedInfeasible("polytope is empty")
        if out.status is LpStatus.DEGENERATE:
            raise MoasError("redundancy LP stalled")
        if out.value <= rhs + tol:
            keep.pop(k)
        else:
            k += 1
    return polytope.subset(keep)


def _dedupe(G, g, tags):
    seen = {}
    keep = []
    for k in range(len(g)):
        key = tuple(np.round(np.append(G[k], g[k]), 12))
        if key not in seen:
            seen[key] = k
            keep.append(k)
    return G[keep], g[keep], [tags[k] for k in keep]


def resolve_eps(eps, H, h, disturbed: bool) -> float:
    """``None``: zero when undisturbed, else ``1e-6 * h_max``; ``"auto"``: always ``1e-6 * h_max``.

    ``h_max`` is the largest bound after scaling rows to unit norm.
    """
    if eps is None and not disturbed:
        return 0.0
    if eps is None or eps == "auto":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        norms = np.linalg.norm(H, axis=1)
        ok = norms > 0
        return 1e-6 * float(np.max(np.asarray(h, dtype=float)[ok] / norms[ok]))
    eps = float(eps)
    if not (np.isfinite(eps) and eps >= 0):
        raise ValueError("eps must be a finite nonnegative number")
    return eps


def _admissible_set(Phi, Phi_w, H, h, tags, omega: Box | None, eps, max_iter, method,
                    bounding_box: Box | None = None, ordering: str = "", tol=RED_TOL) -> MoasResult:
    start = time.perf_counter()
    H = np.asarray(H, dtype=float)
    h = np.asarray(h, dtype=float)
    H, h, _ = _normalize(H, h)
    zero = ~np.any(H, axis=1)
    if np.any(zero & (h < 0)):
        raise TightenedInfeasible("constraint row with zero coefficients and negative bound")
    H, h, tags = H[~zero], h[~zero], [t for t, z in zip(tags, zero) if not z]
    H, h, tags = _dedupe(H, h, tags)
    disturbed = omega is not None and Phi_w is not None and not omega.is_zero

    acc_G = [H]
    acc_g = [h.copy()]
    acc_tags = [RowTag(t.source, 0, t.vertex) for t in tags]
    tight = np.zeros(len(h))
    P = H.copy()
    generated = len(h)
    t_star = None
    for t in range(1, max_iter + 2):
        if disturbed:
            tight += omega.support(P @ Phi_w)
        P = P @ Phi
        rhs = h - tight - eps
        cur_G = np.vstack(acc_G)
        cur_g = np.concatenate(acc_g)
        norms = np.linalg.norm(P, axis=1)
        new = []
        for k in range(len(h)):
            generated += 1
            if norms[k] <= 1e-14:
                if rhs[k] < -tol:
                    raise TightenedInfeasible(f"row {tags[k]} became infeasible at t={t}")
                continue
            a, b = P[k] / norms[k], rhs[k] / norms[k]
            if bounding_box is not None and bounding_box.support(a)[0] <= b + tol:
                continue
            out = maximize(a, cur_G, cur_g, method)
            if out.status is LpStatus.INFEASIBLE:
                raise TightenedInfeasible(f"admissible set empty at t={t - 1}")
            if out.status is LpStatus.DEGENERATE:
                raise MoasError(f"redundancy LP stalled at t={t}")
            if out.status is LpStatus.UNBOUNDED or out.value > b + tol:
                new.append((a, b, RowTag(tags[k].source, t, tags[k].vertex)))
        if not new:
            t_star = t - 1
            break
        acc_G.append(np.array([a for a, _, _ in new]))
        acc_g.append(np.array([b for _, b, _ in new]))
        acc_tags.extend(tag for _, _, tag in new)
        logger.debug("t=%d: %d new rows, %d total", t, len(new), sum(map(len, acc_g)))
    if t_star is None:
        raise NotFinitelyDetermined(f"no finite determination within {max_iter} steps")

    poly = Polytope(np.vstack(acc_G), np.concatenate(acc_g), acc_tags, ordering)
    before = len(poly)
    feas = maximize(np.zeros(poly.dim), poly.G, poly.g, method)
    if feas.status is LpStatus.INFEASIBLE:
        raise TightenedInfeasible("admissible set is empty")
    pruned = remove_redundant(poly, tol, method)
    return MoasResult(pruned, t_star, t_star + 1, before, len(pruned), generated, float(eps),
                      time.perf_counter() - start)


def compute_linear_moas(phi11, phi10, rows, w_box, eps=None, max_iter=DEFAULT_MAX_ITER,
                        method="highs", tags=None, ordering="") -> MoasResult:
    """Admissible set of ``x_v(k+1) = phi11 x_v + phi10 w`` for linear rows ``H x_v <= h``.

    ``eps`` is resolved by :func:`resolve_eps`.
    """
    H, h = rows
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    if len(h) == 0:
        raise ValueError("no constraint rows")
    w = Box(*np.asarray(w_box, dtype=float).reshape(-1, 2).T)
    eps = resolve_eps(eps, H, h, not w.is_zero and bool(np.any(phi10)))
    if tags is None:
        tags = [RowTag(f"c{k}") for k in range(len(h))]
    return _admissible_set(np.asarray(phi11, float), np.asarray(phi10, float), H, h, tags, w,
                           eps, max_iter, method, ordering=ordering)


def extract_box(polytope: Polytope, method="highs") -> Box:
    lo = np.zeros(polytope.dim)
    hi = np.zeros(polytope.dim)
    for k in range(polytope.dim):
        e = np.zeros(polytope.dim)
        e[k] = 1.0
        for sign, store in ((1.0, hi), (-1.0, lo)):
            out = maximize(sign * e, polytope.G, polytope.g, method)
            if out.status is LpStatus.UNBOUNDED:
                raise UnboundedSet(f"coordinate {k} is unbounded")
            if out.status is not LpStatus.OPTIMAL:
                raise MoasError(f"bounding LP for coordinate {k}: {out.status.value}")
            store[k] = sign * out.value
    return Box(lo, hi)


def interval_power(lo: float, hi: float, e: int) -> tuple[float, float]:
    if e == 0:
        return 1.0, 1.0
    a, b = lo**e, hi**e
    if e % 2 == 1 or lo >= 0:
        return a, b
    if hi <= 0:
        return b, a
    return 0.0, max(a, b)


def interval_mul(x: tuple[float, float], y: tuple[float, float]) -> tuple[float, float]:
    prods = (x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    return min(prods), max(prods)


def _monomial_range(box: Box, exponents) -> tuple[float, float]:
    out = (1.0, 1.0)
    for lo, hi, e in zip(box.lower, box.upper, exponents):
        if e:
            out = interval_mul(out, interval_power(lo, hi, e))
    return out


def _basis_ranges(box: Box, degree: int):
    return [_monomial_range(box, m.exponents) for m in power_basis(box.dim, degree).monomials]


def lift_box(box: Box, p: int) -> Box:
    """Interval hull of ``[x_v, x_v^2, ..., x_v^p]`` over a box."""
    ranges = [r for j in range(1, p + 1) for r in _basis_ranges(box, j)]
    lo, hi = zip(*ranges)
    return Box(lo, hi)


def omega_w(box: Box, w_box, p: int, layout: Sequence[tuple[int, int]] | None = None) -> Box:
    """Interval hull of the products ``x_v^i ⊗ w^q`` in ``layout`` order."""
    w = w_box if isinstance(w_box, Box) else Box(*np.asarray(w_box, dtype=float).reshape(-1, 2).T)
    if layout is None:
        layout = [(i, j - i) for j in range(1, p + 1) for i in range(j)]
    lo, hi = [], []
    for i, q in layout:
        xr = _basis_ranges(box, i)
        wr = _basis_ranges(w, q)
        for a in xr:
            for b in wr:
                r = interval_mul(a, b)
                lo.append(r[0])
                hi.append(r[1])
    return Box(lo, hi)


def interiorize(box: Box, keep: int = 0) -> Box:
    """Symmetric outer bound ``[-r, r]`` on every coordinate past the first ``keep``.

    Monomial ranges such as those of squares or odd powers of a nearly
    one-signed variable put the origin on (or within rounding of) the
    boundary, and tightened propagation then empties the set.
    """
    lo, hi = box.lower.copy(), box.upper.copy()
    for k in range(keep, box.dim):
        r = max(abs(lo[k]), abs(hi[k]))
        r = r if r > 0 else 1.0
        lo[k], hi[k] = -r, r
    return Box(lo, hi)


def compute_robust_moas(ext: ExtendedSystem, vertex_rows, state_box_rows, omega: Box, eps=None,
                        max_iter=DEFAULT_MAX_ITER, method="highs", state_box: Box | None = None,
                        vertex_tags=None) -> MoasResult:
    """Admissible set of ``X(k+1) = Phi X + Phi_w d`` with ``d`` in ``omega``.

    ``vertex_rows`` is the list of ``(C_k, H_k)`` per parameter vertex and
    ``state_box_rows`` a ``(G, g)`` pair bounding the lifted state.
    """
    G_list, g_list, tags = [], [], []
    for k, (C, Hk) in enumerate(vertex_rows):
        for r in range(len(Hk)):
            G_list.append(C[r])
            g_list.append(Hk[r])
            tags.append(vertex_tags[k][r] if vertex_tags else RowTag(f"c{r}", 0, k))
    Gb, gb = state_box_rows
    half = len(gb) // 2
    for r in range(len(gb)):
        G_list.append(Gb[r])
        g_list.append(gb[r])
        tags.append(RowTag(f"box{'+' if r < half else '-'}{r % half if half else r}"))
    H = np.array(G_list)
    h = np.array(g_list)
    # the state-box rows are auxiliary, so they do not set the tightening scale
    n_con = len(h) - len(gb)
    eps = resolve_eps(eps, H[:n_con], h[:n_con], not omega.is_zero and bool(np.any(ext.Phi_w)))
    return _admissible_set(ext.Phi, ext.Phi_w, H, h, tags, omega, eps, max_iter, method,
                           bounding_box=state_box, ordering=ext.ordering_id)


def linear_rows(spec: ProblemSpec, vertex_rows=None):
    """Vertex rows of the constraints that are affine in ``x_v``, restricted to ``x_v``."""
    n = spec.n_x + spec.n_v
    if vertex_rows is None:
        vertex_rows = instantiate_vertices(lift_constraints(spec), spec.theta_box)
    G, g, tags = [], [], []
    for k, (C, Hk) in enumerate(vertex_rows):
        for r, con in enumerate(spec.constraints):
            if con.degree <= 1:
                G.append(C[r, :n])
                g.append(Hk[r])
                tags.append(RowTag(f"c{r}", 0, k))
    if not G:
        raise MoasError("no constraint is linear in x_v; cannot bound the lifted state")
    return np.array(G), np.array(g), tags


class RobustMOAS(BaseEstimator):
    """Two-stage robust admissible set for a :class:`ProblemSpec`.

    Parameters
    ----------
    eps : float, "auto" or None
        Tightening applied from the second step on; see :func:`resolve_eps`.
    max_iter : int
        Cap on the number of propagation steps per stage.
    lp_method : {"highs", "simplex"}
        Backend for redundancy and bounding LPs.
    """

    def __init__(self, eps=None, max_iter=DEFAULT_MAX_ITER, lp_method="highs"):
        self.eps = eps
        self.max_iter = max_iter
        self.lp_method = lp_method

    def fit(self, spec: ProblemSpec, y=None):
        self.extended_ = extend(spec)
        self.lifted_ = lift_constraints(spec)
        vrows = instantiate_vertices(self.lifted_, spec.theta_box)
        self.vertex_rows_ = vrows
        n = spec.n_x + spec.n_v
        if spec.p == 1:
            # the lifted state is x_v itself: one stage over all vertex rows
            H = np.vstack([C for C, _ in vrows])
            h = np.concatenate([Hk for _, Hk in vrows])
            tags = [RowTag(f"c{r}", 0, k) for k, (_, Hk) in enumerate(vrows) for r in range(len(Hk))]
            self.linear_ = compute_linear_moas(self.extended_.phi11, self.extended_.phi10, (H, h),
                                               spec.w_box, self.eps, self.max_iter, self.lp_method,
                                               tags=tags, ordering=self.extended_.ordering_id)
            self.box_ = self.lifted_box_ = self.omega_ = None
            self.result_ = self.linear_
            self.polytope_ = self.result_.polytope
            return self
        H, h, tags = linear_rows(spec, vrows)
        self.linear_ = compute_linear_moas(self.extended_.phi11, self.extended_.phi10, (H, h),
                                           spec.w_box, self.eps, self.max_iter, self.lp_method,
                                           tags=tags, ordering=f"{ORDERING}/n={n}/p=1")
        self.box_ = extract_box(self.linear_.polytope, self.lp_method)
        lifted_box = interiorize(lift_box(self.box_, spec.p), keep=n)
        self.lifted_box_ = lifted_box
        self.omega_ = omega_w(self.box_, spec.w_box, spec.p, self.extended_.layout)
        self.result_ = compute_robust_moas(self.extended_, vrows, lifted_box.rows(), self.omega_,
                                           self.eps, self.max_iter, self.lp_method,
                                           state_box=lifted_box)
        self.polytope_ = self.result_.polytope
        return self

    def report(self) -> dict:
        check_is_fitted(self, "result_")
        return {
            "ordering": self.extended_.ordering_id,
            "lifted_dim": self.extended_.dim,
            "theta_vertices": len(self.vertex_rows_),
            "vertex_rows": int(sum(len(h) for _, h in self.vertex_rows_)),
            "linear": self.linear_.summary(),
            "single_stage": self.box_ is None,
            "box_lower": None if self.box_ is None else self.box_.lower.tolist(),
            "box_upper": None if self.box_ is None else self.box_.upper.tolist(),
            "omega_zero": None if self.omega_ is None else bool(self.omega_.is_zero),
            "robust": self.result_.summary(),
        }
