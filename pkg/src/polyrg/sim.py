"""Plant discretization, closed-loop simulation and the aircraft example."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.linalg import expm

from .lift import PolyConstraint, ProblemSpec, Term, extend, theta_vertices
from .moas import MoasError, compute_linear_moas, linear_rows
from .polykron import ORDERING

RNG_NAME = "numpy.PCG64"


@dataclass(frozen=True)
class ContinuousPlant:
    F: np.ndarray
    G: np.ndarray
    Ts: float

    def __post_init__(self):
        if not self.Ts > 0:
            raise ValueError("sampling period must be positive")


def c2d(plant: ContinuousPlant) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization via the exponential of ``[[F, G], [0, 0]] Ts``."""
    F = np.atleast_2d(np.asarray(plant.F, dtype=float))
    n = F.shape[0]
    G = np.asarray(plant.G, dtype=float).reshape(n, -1)
    m = G.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = F
    M[:n, n:] = G
    E = expm(M * plant.Ts)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True)
class AircraftPreset:
    """Longitudinal aircraft model with cubic lift ``L = l0 + l1 a - l3 a^3``."""

    d1: float = 8.0
    d2: float = 40.0
    J: float = 4.5e6
    l0: float = 2.5e5
    l1: float = 8.6e6
    l3: float = 4.35e7
    kp: float = 5.2e7
    kd: float = 7.6e6
    Ts: float = 0.01
    alpha_min: float = -0.2 * math.pi / 180
    alpha_max: float = 14.7 * math.pi / 180
    u_max: float = 4e5
    theta_scale: tuple[float, float] = (0.8, 1.2)
    w_bound: float = 0.05
    B_w: tuple[float, float] = (1.0, 0.0)

    @property
    def theta_nominal(self) -> np.ndarray:
        return np.array([self.l0, self.l1, self.l3])

    @property
    def theta_box(self) -> np.ndarray:
        return np.outer(self.theta_nominal, self.theta_scale)

    def plant(self) -> ContinuousPlant:
        # u = -kp (alpha - v) - kd alpha_dot + (d1/d2) L cancels the lift exactly
        g = self.d2 / self.J
        F = np.array([[0.0, 1.0], [-g * self.kp, -g * self.kd]])
        G = np.array([[0.0], [g * self.kp]])
        return ContinuousPlant(F, G, self.Ts)

    def elevator_force(self, x, v, theta=None) -> np.ndarray:
        """Elevator force for states ``x`` (rows ``[alpha, alpha_dot]``) and references ``v``."""
        theta = self.theta_nominal if theta is None else np.asarray(theta, dtype=float)
        x = np.atleast_2d(x)
        a, ad = x[:, 0], x[:, 1]
        v = np.asarray(v, dtype=float).reshape(-1)
        lift = theta[0] + theta[1] * a - theta[2] * a**3
        return -self.kp * (a - v) - self.kd * ad + self.d1 / self.d2 * lift


def _u_terms(pre: AircraftPreset, sign: float) -> list[Term]:
    r = pre.d1 / pre.d2
    # x_v = (alpha, alpha_dot, v); theta = (l0, l1, l3)
    return [
        Term(sign * -pre.kp, (1, 0, 0)),
        Term(sign * -pre.kd, (0, 1, 0)),
        Term(sign * pre.kp, (0, 0, 1)),
        Term(sign * r, (0, 0, 0), 0),
        Term(sign * r, (1, 0, 0), 1),
        Term(sign * -r, (3, 0, 0), 2),
    ]


def build_aircraft_problem(preset: AircraftPreset | None = None, with_disturbance: bool = False,
                           beta: float = 0.95, p: int = 3) -> ProblemSpec:
    pre = preset or AircraftPreset()
    A, B = c2d(pre.plant())
    n, nt = 3, 3
    cons = (
        PolyConstraint.from_terms(pre.alpha_max, [Term(1.0, (1, 0, 0))], n, nt, p, "alpha_max"),
        PolyConstraint.from_terms(-pre.alpha_min, [Term(-1.0, (1, 0, 0))], n, nt, p, "alpha_min"),
        PolyConstraint.from_terms(pre.u_max, _u_terms(pre, 1.0), n, nt, p, "u_max"),
        PolyConstraint.from_terms(pre.u_max, _u_terms(pre, -1.0), n, nt, p, "u_min"),
    )
    if with_disturbance:
        B_w = np.array(pre.B_w, dtype=float).reshape(2, 1)
        w_box = np.array([[-pre.w_bound, pre.w_bound]])
    else:
        B_w = np.zeros((2, 1))
        w_box = np.zeros((1, 2))
    name = "aircraft-disturbed" if with_disturbance else "aircraft"
    return ProblemSpec(A, B, B_w, beta, p, cons, pre.theta_box, w_box, name)


def disturbance_source(seed: int, w_box, kind: str = "uniform") -> Iterator[np.ndarray]:
    """Deterministic disturbance stream.

    ``kind`` is ``"uniform"`` (independent uniform draws in the box),
    ``"zero"`` or ``"worst-corner"`` (uniformly chosen box corners).
    """
    box = np.asarray(w_box, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(box)):
        raise ValueError("disturbance box must be finite")
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = box[:, 0], box[:, 1]
    if kind == "zero":
        while True:
            yield np.zeros(len(box))
    elif kind == "uniform":
        while True:
            yield rng.uniform(lo, hi)
    elif kind == "worst-corner":
        while True:
            yield np.where(rng.integers(0, 2, len(box)) == 1, hi, lo)
    else:
        raise ValueError(f"unknown disturbance kind {kind!r}")


def theta_grid(theta_box, levels: int = 3) -> np.ndarray:
    """All box vertices first, then the remaining points of a ``levels``-point grid."""
    box = np.asarray(theta_box, dtype=float).reshape(-1, 2)
    verts = theta_vertices(box)
    if len(box) == 0:
        return verts
    axes = [np.linspace(lo, hi, levels) for lo, hi in box]
    grid = np.array(list(itertools.product(*axes)))
    extra = [g for g in grid if not any(np.allclose(g, v) for v in verts)]
    return np.vstack([verts] + ([np.array(extra)] if extra else []))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    refs: np.ndarray
    disturbances: np.ndarray
    thetas: np.ndarray
    # constraint_outputs[s, k, i] = f_i(x_v(k), theta_s)
    constraint_outputs: np.ndarray
    bounds: np.ndarray
    names: tuple[str, ...] = ()
    audit: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def xv(self) -> np.ndarray:
        return np.hstack([self.states, self.refs])

    def violations(self, rel_tol: float = 1e-6) -> np.ndarray:
        """Boolean mask ``[s, k, i]`` of constraint violations."""
        slack = self.bounds * (1.0 + rel_tol) + rel_tol * (self.bounds == 0)
        return self.constraint_outputs > slack[None, None, :]

    def first_violation(self, rel_tol: float = 1e-6):
        bad = self.violations(rel_tol)
        if not bad.any():
            return None
        s, k, i = np.argwhere(bad)[np.argmin(np.argwhere(bad)[:, 1])]
        return int(k), int(i), int(s)


class SimulationError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def evaluate_outputs(spec: ProblemSpec, xv: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    out = np.zeros((len(thetas), len(xv), len(spec.constraints)))
    for s, th in enumerate(thetas):
        for k, z in enumerate(xv):
            out[s, k] = [c.evaluate(z, th) for c in spec.constraints]
    return out


def simulate(spec: ProblemSpec, governor=None, x0=None, N: int = 600, w_source=None,
             thetas=None) -> Trajectory:
    """Propagate ``x(k+1) = A x + B v + B_w w`` for ``N`` steps.

    ``governor`` needs ``reset(x0) -> v`` and ``step(x) -> v``; without one the
    reference is held at zero.  ``w_source`` is an iterator of disturbances
    (zero when omitted).
    """
    x = np.zeros(spec.n_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise SimulationError(0, "initial state is not finite")
    if thetas is None:
        thetas = theta_vertices(spec.theta_box)
    thetas = np.asarray(thetas, dtype=float).reshape(-1, spec.n_theta)
    states = np.zeros((N, spec.n_x))
    refs = np.zeros((N, spec.n_v))
    dist = np.zeros((N, spec.n_w))
    audit = np.zeros(N, dtype=bool) if governor is not None else None
    lambdas = np.full(N, np.nan) if governor is not None else None
    for k in range(N):
        if governor is not None:
            v = governor.reset(x) if k == 0 else governor.step(x)
            audit[k] = governor.admissible(x, v)
            lambdas[k] = getattr(governor, "last_lambda_", np.nan)
        else:
            v = np.zeros(spec.n_v)
        w = np.zeros(spec.n_w) if w_source is None else np.asarray(next(w_source), dtype=float)
        states[k], refs[k], dist[k] = x, v, w
        x = spec.A @ x + spec.B @ v + spec.B_w @ w
        if not np.all(np.isfinite(x)):
            raise SimulationError(k + 1, "state became non-finite")
    xv = np.hstack([states, refs])
    outputs = evaluate_outputs(spec, xv, thetas)
    bounds = np.array([c.h for c in spec.constraints])
    return Trajectory(np.arange(N), states, refs, dist, thetas, outputs, bounds,
                      tuple(c.name for c in spec.constraints), audit, lambdas,
                      {"beta": spec.beta, "problem": spec.name})


def theta_sweep(traj: Trajectory, spec: ProblemSpec, theta_samples=None) -> dict:
    """Constraint outputs along a stored trajectory for each parameter sample."""
    if theta_samples is None:
        theta_samples = theta_grid(spec.theta_box)
    thetas = np.asarray(theta_samples, dtype=float).reshape(-1, spec.n_theta)
    outputs = evaluate_outputs(spec, traj.xv, thetas)
    bounds = np.array([c.h for c in spec.constraints])
    if len(traj):
        max_abs = np.abs(outputs).max(axis=1)
        worst = (outputs - bounds).max(axis=(1, 2))
    else:
        max_abs = np.zeros((len(thetas), len(bounds)))
        worst = np.full(len(thetas), -np.inf)
    return {
        "thetas": thetas,
        "outputs": outputs,
        "names": tuple(c.name for c in spec.constraints),
        "max_abs": max_abs,
        "worst_margin": worst,
    }


def linear_stage(spec: ProblemSpec, eps="auto", max_iter: int = 10_000, method="highs"):
    """First-stage admissible set (rows affine in ``x_v``) for ``spec``."""
    ext = extend(spec)
    H, h, tags = linear_rows(spec)
    n = spec.n_x + spec.n_v
    return compute_linear_moas(ext.phi11, ext.phi10, (H, h), spec.w_box, eps, max_iter, method,
                               tags=tags, ordering=f"{ORDERING}/n={n}/p=1")


@dataclass
class Calibration:
    target: tuple[int, int]
    sweep: list[dict]
    beta: float | None = None
    interval: tuple[float, float] | None = None
    result: dict | None = None

    @property
    def reproduced(self) -> bool:
        return (self.result is not None and self.result["t_star"] == self.target[0]
                and abs(self.result["rows_after_pruning"] - self.target[1]) <= 10)


def calibrate_beta(spec: ProblemSpec, target: tuple[int, int], betas=(0.90, 0.95, 0.99),
                   refine: bool = True, steps: int = 14, **kw) -> Calibration:
    """Decay rate whose first-stage set has ``target = (t*, rows)``.

    The coarse ``betas`` are evaluated first.  With ``refine`` the bracket
    around ``target[0]`` is narrowed by bisection, assuming ``t*`` grows with
    ``beta``; the returned ``beta`` is the middle of the interval found.
    """
    def t_star(beta):
        try:
            res = linear_stage(spec.with_beta(beta), **kw).summary()
        except MoasError as exc:
            return None, {"beta": beta, "error": f"{type(exc).__name__}: {exc}"}
        return res["t_star"], {"beta": beta, **res}

    sweep = [t_star(float(b))[1] for b in betas]
    cal = Calibration(tuple(target), sweep)
    good = [e for e in sweep if "t_star" in e]
    if not good:
        return cal
    nearest = min(good, key=lambda e: (abs(e["t_star"] - target[0]),
                                       abs(e["rows_after_pruning"] - target[1])))
    cal.beta, cal.result = nearest["beta"], nearest
    if not refine or nearest["t_star"] == target[0]:
        return cal
    below = [e["beta"] for e in good if e["t_star"] < target[0]]
    above = [e["beta"] for e in good if e["t_star"] > target[0]]
    if not below or not above:
        return cal

    def edge(lo, hi, level):
        # smallest beta in (lo, hi] with t* >= level
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            t, _ = t_star(mid)
            if t is not None and t >= level:
                hi = mid
            else:
                lo = mid
        return hi

    lo, hi = max(below), min(above)
    start = edge(lo, hi, target[0])
    stop = edge(start, hi, target[0] + 1)
    t, entry = t_star(0.5 * (start + stop))
    if t == target[0]:
        cal.beta, cal.result, cal.interval = entry["beta"], entry, (start, stop)
    return cal
