"""Extended LTI dynamics on stacked power vectors and lifted constraints.

With ``x_v = [x; v]`` and the reference decaying as ``v(k+1) = beta v(k)``,
the stacked vector ``X_v = [x_v, x_v^2, ..., x_v^p]`` evolves linearly,

    X_v(k+1) = Phi X_v(k) + Phi_w D(k),

where ``D`` stacks the products ``x_v^i ⊗ w^(j-i)`` for ``1 <= j <= p`` and
``0 <= i < j`` in degree-major order.  A polynomial constraint that is affine
in the unknown parameters ``theta`` becomes ``D0 theta + C0 X_v + C1 (theta ⊗
X_v) <= h``, and by convexity it suffices to impose it at the vertices of the
parameter box.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .polykron import (
    ORDERING,
    commute_merge_matrix,
    eval_power,
    power_basis,
    shift_merge_matrix,
    sigma,
    stack_powers,
    step_compression,
)

SCHUR_MARGIN = 1e-9


class ProblemError(ValueError):
    """Invalid problem definition; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Term:
    coeff: float
    exponents: tuple[int, ...]
    theta_index: int | None = None


@dataclass(frozen=True)
class PolyConstraint:
    """``f(x_v, theta) <= h`` with ``f`` affine in ``theta``.

    ``c[j]`` is the row over ``x_v^j``; ``d[j]`` the row over ``theta ⊗ x_v^j``.
    """

    h: float
    d0: np.ndarray
    c: Mapping[int, np.ndarray]
    d: Mapping[int, np.ndarray]
    terms: tuple[Term, ...] = ()
    name: str = ""

    @property
    def degree(self) -> int:
        degs = [j for j, row in self.c.items() if np.any(row)]
        degs += [j for j, row in self.d.items() if np.any(row)]
        return max(degs, default=0)

    @property
    def uses_theta(self) -> bool:
        return bool(np.any(self.d0)) or any(np.any(row) for row in self.d.values())

    @classmethod
    def from_terms(cls, h, terms, n: int, n_theta: int, p: int, name: str = ""):
        """Build coefficient rows from exponent-keyed terms.

        Terms without any ``x_v`` factor and without ``theta`` are constants and
        are moved into ``h``.
        """
        h = float(h)
        d0 = np.zeros(n_theta)
        c = {j: np.zeros(sigma(n, j)) for j in range(1, p + 1)}
        d = {j: np.zeros(n_theta * sigma(n, j)) for j in range(1, p + 1)}
        kept = []
        for t in terms:
            if not isinstance(t, Term):
                t = Term(float(t["coeff"]), tuple(int(e) for e in t["exponents"]),
                         None if t.get("theta_index") is None else int(t["theta_index"]))
            if len(t.exponents) != n:
                raise ProblemError(name or "constraint", f"term exponents {t.exponents} need length {n}")
            j = sum(t.exponents)
            if j > p:
                raise ProblemError(name or "constraint", f"term degree {j} exceeds p={p}")
            if t.theta_index is not None and not 0 <= t.theta_index < n_theta:
                raise ProblemError(name or "constraint", f"theta_index {t.theta_index} out of range")
            kept.append(t)
            if j == 0:
                if t.theta_index is None:
                    h -= t.coeff
                else:
                    d0[t.theta_index] += t.coeff
                continue
            pos = power_basis(n, j).position_of[t.exponents]
            if t.theta_index is None:
                c[j][pos] += t.coeff
            else:
                d[j][t.theta_index * sigma(n, j) + pos] += t.coeff
        if h < 0:
            raise ProblemError(name or "constraint", f"bound h={h} must be >= 0")
        return cls(h, d0, c, d, tuple(kept), name)

    def evaluate(self, xv, theta=()) -> float:
        """Direct evaluation from the terms (independent of the lifted rows)."""
        xv = np.asarray(xv, dtype=float)
        theta = np.asarray(theta, dtype=float)
        total = 0.0
        for t in self.terms:
            val = t.coeff * math.prod(float(xv[k]) ** e for k, e in enumerate(t.exponents) if e)
            if t.theta_index is not None:
                val *= theta[t.theta_index]
            total += val
        return total

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "h": self.h,
            "terms": [{"coeff": t.coeff, "exponents": list(t.exponents), "theta_index": t.theta_index}
                      for t in self.terms],
        }


@dataclass(frozen=True)
class ProblemSpec:
    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    beta: float
    p: int
    constraints: tuple[PolyConstraint, ...]
    theta_box: np.ndarray
    w_box: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n_x = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n_x, -1)
        B_w = np.asarray(self.B_w, dtype=float).reshape(n_x, -1)
        theta_box = np.asarray(self.theta_box, dtype=float).reshape(-1, 2)
        w_box = np.asarray(self.w_box, dtype=float).reshape(-1, 2)
        for name, val in (("A", A), ("B", B), ("B_w", B_w), ("theta_box", theta_box), ("w_box", w_box)):
            if not np.all(np.isfinite(val)):
                raise ProblemError(name, "entries must be finite")
        if A.shape != (n_x, n_x):
            raise ProblemError("A", f"must be square, got {A.shape}")
        if B_w.shape[1] == 0:
            B_w = np.zeros((n_x, 1))
            w_box = np.zeros((1, 2))
        if w_box.shape[0] != B_w.shape[1]:
            raise ProblemError("w_box", f"needs {B_w.shape[1]} rows, got {w_box.shape[0]}")
        if np.any(theta_box[:, 0] > theta_box[:, 1]):
            raise ProblemError("theta_box", "lower bound exceeds upper bound")
        if np.any(w_box[:, 0] > w_box[:, 1]):
            raise ProblemError("w_box", "lower bound exceeds upper bound")
        if not 0.0 < float(self.beta) < 1.0:
            raise ProblemError("beta", f"must lie in (0, 1), got {self.beta}")
        if int(self.p) < 1:
            raise ProblemError("p", "must be >= 1")
        rho = spectral_radius(A)
        if rho >= 1.0 - SCHUR_MARGIN:
            raise ProblemError("A", f"not Schur (spectral radius {rho:.12g})")
        n = n_x + B.shape[1]
        for k, con in enumerate(self.constraints):
            for j in range(1, int(self.p) + 1):
                if len(con.c.get(j, ())) != sigma(n, j) or len(con.d.get(j, ())) != len(theta_box) * sigma(n, j):
                    raise ProblemError(f"constraints[{k}]", f"rows for degree {j} do not match the bases")
            if len(con.d0) != len(theta_box):
                raise ProblemError(f"constraints[{k}]", "d0 length differs from theta count")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "B_w", B_w)
        object.__setattr__(self, "theta_box", theta_box)
        object.__setattr__(self, "w_box", w_box)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_v(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_theta(self) -> int:
        return self.theta_box.shape[0]

    @property
    def disturbed(self) -> bool:
        return bool(np.any(self.B_w)) and bool(np.any(self.w_box))

    def with_beta(self, beta: float) -> "ProblemSpec":
        return replace(self, beta=beta)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "B_w": self.B_w.tolist(),
            "beta": self.beta,
            "p": self.p,
            "theta_box": self.theta_box.tolist(),
            "w_box": self.w_box.tolist(),
            "ordering": ORDERING,
            "constraints": [con.to_dict() for con in self.constraints],
        }


_PROBLEM_FIELDS = {"name", "A", "B", "B_w", "beta", "p", "theta_box", "w_box", "constraints", "ordering"}


def problem_from_dict(data: dict) -> ProblemSpec:
    unknown = set(data) - _PROBLEM_FIELDS
    if unknown:
        raise ProblemError(sorted(unknown)[0], "unknown field")
    for key in ("A", "B", "beta", "p", "constraints"):
        if key not in data:
            raise ProblemError(key, "missing")
    if data.get("ordering", ORDERING) != ORDERING:
        raise ProblemError("ordering", f"unsupported ordering {data['ordering']!r}")
    try:
        A = np.atleast_2d(np.asarray(data["A"], dtype=float))
        n_x = A.shape[0]
        B = np.asarray(data["B"], dtype=float).reshape(n_x, -1)
        B_w = np.asarray(data.get("B_w", np.zeros((n_x, 0))), dtype=float).reshape(n_x, -1)
        theta_box = np.asarray(data.get("theta_box", []), dtype=float).reshape(-1, 2)
        w_box = np.asarray(data.get("w_box", np.zeros((B_w.shape[1], 2))), dtype=float).reshape(-1, 2)
    except (TypeError, ValueError) as exc:
        raise ProblemError("matrices", str(exc)) from None
    n = n_x + B.shape[1]
    p = int(data["p"])
    cons = []
    for k, item in enumerate(data["constraints"]):
        extra = set(item) - {"h", "terms", "name"}
        if extra:
            raise ProblemError(f"constraints[{k}].{sorted(extra)[0]}", "unknown field")
        try:
            cons.append(PolyConstraint.from_terms(item["h"], item["terms"], n, len(theta_box), p,
                                                  item.get("name") or f"c{k}"))
        except KeyError as exc:
            raise ProblemError(f"constraints[{k}]", f"missing {exc}") from None
        except ProblemError as exc:
            raise ProblemError(f"constraints[{k}]", str(exc)) from None
    return ProblemSpec(A, B, B_w, data["beta"], p, tuple(cons), theta_box, w_box, data.get("name", ""))


def load_problem(path) -> ProblemSpec:
    with open(Path(path)) as fh:
        return problem_from_dict(json.load(fh))


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(M)).max())


def build_phi11(A, B, beta) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError(f"A {A.shape} and B {B.shape} do not conform")
    n_x, n_v = B.shape
    return np.block([[A, B], [np.zeros((n_v, n_x)), beta * np.eye(n_v)]])


def build_phi10(B_w, n_v: int) -> np.ndarray:
    B_w = np.asarray(B_w, dtype=float)
    if B_w.ndim == 1:
        B_w = B_w[:, None]
    return np.vstack([B_w, np.zeros((n_v, B_w.shape[1]))])


def build_blocks(phi11, phi10, p: int, n_w: int | None = None) -> dict[tuple[int, int], np.ndarray]:
    """Coefficients ``Phi[j, i]`` with ``x^j(k+1) = sum_i Phi[j, i] (x^i ⊗ w^(j-i))``."""
    phi11 = np.asarray(phi11, dtype=float)
    phi10 = np.asarray(phi10, dtype=float)
    n = phi11.shape[0]
    m = phi10.shape[1] if n_w is None else n_w
    if p < 1:
        raise ValueError("p must be >= 1")
    blocks = {(1, 1): phi11, (1, 0): phi10.reshape(n, m)}
    for j in range(2, p + 1):
        S = step_compression(n, j)
        new = {(j, i): np.zeros((sigma(n, j), sigma(n, i) * sigma(m, j - i))) for i in range(j + 1)}
        for i in range(j):
            prev = blocks[(j - 1, i)]
            q = j - 1 - i
            # (Phi11 x) ⊗ (Phi[j-1,i] x^i w^q) lands on x^(i+1) w^q
            new[(j, i + 1)] += S @ np.kron(phi11, prev) @ shift_merge_matrix(i, q, n, m)
            # (Phi10 w) ⊗ (Phi[j-1,i] x^i w^q) lands on x^i w^(q+1)
            new[(j, i)] += S @ np.kron(blocks[(1, 0)], prev) @ commute_merge_matrix(i, j, n, m)
        blocks.update(new)
    return blocks


@dataclass(frozen=True)
class ExtendedSystem:
    phi11: np.ndarray
    phi10: np.ndarray
    blocks: dict = field(repr=False)
    Phi: np.ndarray = field(repr=False)
    Phi_w: np.ndarray = field(repr=False)
    n: int
    n_w: int
    p: int
    # (i, q) pairs of x_v^i ⊗ w^q in the stacking order of the disturbance vector
    layout: tuple[tuple[int, int], ...] = ()

    @property
    def dim(self) -> int:
        return self.Phi.shape[0]

    @property
    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + [sigma(self.n, j) for j in range(1, self.p + 1)]))

    @property
    def ordering_id(self) -> str:
        return f"{ORDERING}/n={self.n}/p={self.p}"

    def embed(self, xv) -> np.ndarray:
        return stack_powers(xv, self.p)

    def disturbance_vector(self, xv, w) -> np.ndarray:
        """Products ``x_v^i ⊗ w^q`` stacked in ``layout`` order."""
        xv = np.asarray(xv, dtype=float)
        w = np.asarray(w, dtype=float)
        return np.concatenate([
            np.kron(eval_power(xv, power_basis(self.n, i)), eval_power(w, power_basis(self.n_w, q)))
            for i, q in self.layout
        ])

    def step(self, X, xv, w) -> np.ndarray:
        return self.Phi @ X + self.Phi_w @ self.disturbance_vector(xv, w)


def assemble_extended(blocks: dict, p: int | None = None) -> ExtendedSystem:
    phi11 = blocks[(1, 1)]
    phi10 = blocks[(1, 0)]
    n = phi11.shape[0]
    m = phi10.shape[1]
    if p is None:
        p = max(j for j, _ in blocks)
    for j in range(1, p + 1):
        for i in range(j + 1):
            if (j, i) not in blocks:
                raise ValueError(f"missing block Phi[{j},{i}]")
    layout = tuple((i, j - i) for j in range(1, p + 1) for i in range(j))
    Phi = sla.block_diag(*[blocks[(j, j)] for j in range(1, p + 1)])
    col_sizes = [sigma(n, i) * sigma(m, q) for i, q in layout]
    col_off = np.cumsum([0] + col_sizes)
    row_off = np.cumsum([0] + [sigma(n, j) for j in range(1, p + 1)])
    Phi_w = np.zeros((row_off[-1], col_off[-1]))
    for k, (i, q) in enumerate(layout):
        j = i + q
        Phi_w[row_off[j - 1]:row_off[j], col_off[k]:col_off[k + 1]] = blocks[(j, i)]
    return ExtendedSystem(phi11, phi10, dict(blocks), Phi, Phi_w, n, m, p, layout)


def extend(spec: ProblemSpec) -> ExtendedSystem:
    phi11 = build_phi11(spec.A, spec.B, spec.beta)
    phi10 = build_phi10(spec.B_w, spec.n_v)
    return assemble_extended(build_blocks(phi11, phi10, spec.p, spec.n_w), spec.p)


@dataclass(frozen=True)
class LiftedConstraints:
    D0: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    H: np.ndarray
    theta_box: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def n_theta(self) -> int:
        return self.D0.shape[1]

    def evaluate(self, X, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.D0 @ theta + self.C0 @ X + self.C1 @ np.kron(theta, X)

    @property
    def vertex_rows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return instantiate_vertices(self, self.theta_box)


def lift_constraints(spec: ProblemSpec) -> LiftedConstraints:
    n = spec.n_x + spec.n_v
    dims = [sigma(n, j) for j in range(1, spec.p + 1)]
    off = np.cumsum([0] + dims)
    N = off[-1]
    nt = spec.n_theta
    nc = len(spec.constraints)
    D0 = np.zeros((nc, nt))
    C0 = np.zeros((nc, N))
    C1 = np.zeros((nc, nt * N))
    H = np.zeros(nc)
    for r, con in enumerate(spec.constraints):
        D0[r] = con.d0
        H[r] = con.h
        for j in range(1, spec.p + 1):
            C0[r, off[j - 1]:off[j]] = con.c[j]
            dj = np.asarray(con.d[j]).reshape(nt, dims[j - 1])
            for a in range(nt):
                C1[r, a * N + off[j - 1]:a * N + off[j]] = dj[a]
    return LiftedConstraints(D0, C0, C1, H, spec.theta_box.copy(),
                             tuple(c.name for c in spec.constraints))


def theta_vertices(theta_box) -> np.ndarray:
    theta_box = np.asarray(theta_box, dtype=float).reshape(-1, 2)
    if len(theta_box) == 0:
        # a single vertex of the zero-dimensional box
        return np.zeros((1, 0))
    return np.array(list(itertools.product(*theta_box)), dtype=float)


def instantiate_vertices(lifted: LiftedConstraints, theta_box) -> list[tuple[np.ndarray, np.ndarray]]:
    """Row sets ``(C_{0,k}, H_k)`` for every vertex ``k`` of the parameter box."""
    N = lifted.C0.shape[1]
    out = []
    for th in theta_vertices(theta_box):
        C = lifted.C0 + lifted.C1 @ np.kron(th[:, None], np.eye(N)) if len(th) else lifted.C0.copy()
        out.append((C, lifted.H - lifted.D0 @ th))
    return out


def shift_equilibrium(A, B, r) -> np.ndarray:
    """Equilibrium ``x̄ = A x̄ + B r`` of a Schur system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    M = np.eye(A.shape[0]) - A
    if spectral_radius(A) >= 1.0 - SCHUR_MARGIN:
        raise np.linalg.LinAlgError("I - A may be singular: A is not Schur")
    return np.linalg.solve(M, B @ r)
