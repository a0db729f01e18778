"""Command-line front end: ``polyrg build-moas | run | sweep | grid-init | calibrate-beta``.

Every file written is accompanied by a ``<file>.meta.json`` sidecar with the
seed, beta, eps, basis ordering, generator name and tool version.  Exit codes:
0 success, 2 configuration error, 3 infeasible or inadmissible, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .governor import InadmissibleInitialState, ReferenceGovernor, SafetyMarginWarning
from .lift import ProblemError, ProblemSpec, load_problem, theta_vertices
from .moas import (
    MoasError,
    NotFinitelyDetermined,
    Polytope,
    RobustMOAS,
    TightenedInfeasible,
    UnboundedSet,
)
from .polykron import ORDERING
from .sim import (
    RNG_NAME,
    AircraftPreset,
    SimulationError,
    build_aircraft_problem,
    calibrate_beta,
    disturbance_source,
    simulate,
    theta_grid,
    theta_sweep,
)

logger = logging.getLogger("polyrg")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4
ENV_PREFIX = "POLYRG_"
PRESETS = ("aircraft", "aircraft-disturbed")
COMMANDS = ("build-moas", "run", "sweep", "grid-init", "calibrate-beta")
# (t*, rows) of the linear stage reported for the aircraft example
CALIBRATION_TARGETS = {"aircraft": (75, 105), "aircraft-disturbed": (47, 81)}


class ConfigError(ValueError):
    pass


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunConfig:
    command: str
    preset: str | None = None
    problem: str | None = None
    out: str = "polyrg-out"
    seed: int = 0
    beta: float | None = None
    eps: float | str | None = "auto"
    bisection_depth: int = 30
    max_iter: int = 10_000
    steps: int = 600
    no_governor: bool = False
    w_bound: float | None = None
    w_kind: str = "uniform"
    x0: list | None = None
    lp_method: str = "highs"
    samples: str = "grid"
    grid_points: int = 11
    betas: list = field(default_factory=lambda: [0.90, 0.95, 0.99])
    robust: bool = False
    refine: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config field {sorted(unknown)[0]!r}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if (self.preset is None) == (self.problem is None):
            raise ConfigError("give exactly one of --preset and --problem")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if isinstance(self.eps, str) and self.eps != "auto":
            raise ConfigError("eps must be a number or 'auto'")
        if self.eps is not None and not isinstance(self.eps, str) and not self.eps >= 0:
            raise ConfigError("eps must be nonnegative")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if self.bisection_depth < 1 or self.max_iter < 1:
            raise ConfigError("bisection depth and iteration cap must be positive")
        if self.w_bound is not None and not self.w_bound >= 0:
            raise ConfigError("w bound must be nonnegative")
        if self.w_kind not in ("uniform", "zero", "worst-corner"):
            raise ConfigError(f"unknown disturbance kind {self.w_kind!r}")
        if self.samples not in ("vertices", "grid", "nominal"):
            raise ConfigError(f"unknown sample set {self.samples!r}")
        if self.lp_method not in ("highs", "simplex"):
            raise ConfigError(f"unknown LP method {self.lp_method!r}")

    def overrides(self) -> dict:
        """Numeric settings that change the admissible set."""
        return {"beta": self.beta, "eps": self.eps, "max_iter": self.max_iter,
                "lp_method": self.lp_method, "w_bound": self.w_bound}


# ---------------------------------------------------------------- problems

def load_preset(name: str) -> dict:
    text = resources.files("polyrg").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def build_problem(cfg: RunConfig) -> tuple[ProblemSpec, np.ndarray | None, AircraftPreset | None]:
    """Problem, default initial state and (for presets) the physical model."""
    if cfg.preset is not None:
        data = load_preset(cfg.preset)
        params = dict(data["params"])
        params["theta_scale"] = tuple(params["theta_scale"])
        params["B_w"] = tuple(params["B_w"])
        if cfg.w_bound is not None:
            params["w_bound"] = cfg.w_bound
        pre = AircraftPreset(**params)
        beta = data["beta"] if cfg.beta is None else cfg.beta
        spec = build_aircraft_problem(pre, data["with_disturbance"], beta, data["p"])
        return spec, np.asarray(data["x0"], dtype=float), pre
    spec = load_problem(cfg.problem)
    if cfg.beta is not None:
        spec = spec.with_beta(cfg.beta)
    if cfg.w_bound is not None:
        spec = dataclasses.replace(spec, w_box=np.tile([-cfg.w_bound, cfg.w_bound], (spec.n_w, 1)))
    return spec, None, None


def cache_key(spec: ProblemSpec, cfg: RunConfig) -> str:
    payload = {"problem": spec.to_dict(), "overrides": cfg.overrides()}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- output

def metadata(cfg: RunConfig, spec: ProblemSpec, ordering: str, **extra) -> dict:
    meta = {
        "tool": "polyrg",
        "version": tool_version(),
        "command": cfg.command,
        "problem": spec.name,
        "seed": cfg.seed,
        "beta": spec.beta,
        "eps": cfg.eps,
        "ordering": ordering,
        "rng": RNG_NAME,
        "overrides": cfg.overrides(),
    }
    meta.update(extra)
    return meta


def write_with_meta(path: Path, text: str, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    return "%.17g" % x


def trajectory_csv(traj, pre: AircraftPreset | None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_x, n_v, n_w = traj.states.shape[1], traj.refs.shape[1], traj.disturbances.shape[1]
    head = ["k"] + [f"x_{i + 1}" for i in range(n_x)] + [f"v_{i + 1}" for i in range(n_v)]
    head += [f"w_{i + 1}" for i in range(n_w)]
    head += [f"{name}@theta_{s + 1}" for s in range(len(traj.thetas)) for name in traj.names]
    if pre is not None:
        head += [f"u@theta_{s + 1}" for s in range(len(traj.thetas))]
    head += ["audit", "lambda"]
    w.writerow(head)
    for k in range(len(traj)):
        row = [str(int(traj.times[k]))]
        row += [_fmt(z) for z in traj.states[k]] + [_fmt(z) for z in traj.refs[k]]
        row += [_fmt(z) for z in traj.disturbances[k]]
        row += [_fmt(z) for z in traj.constraint_outputs[:, k, :].ravel()]
        if pre is not None:
            row += [_fmt(pre.elevator_force(traj.states[k], traj.refs[k], th)[0]) for th in traj.thetas]
        if traj.audit is None:
            row += ["", ""]
        else:
            row += ["true" if traj.audit[k] else "false", _fmt(traj.lambdas[k])]
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def _polytope(cfg: RunConfig, spec: ProblemSpec, out: Path) -> tuple[Polytope, dict | None]:
    """Cached admissible set; builds it when the cache misses."""
    key = cache_key(spec, cfg)
    cached = out / "cache" / f"{key}.poly"
    if cached.exists():
        logger.info("using cached admissible set %s", cached)
        return Polytope.load(cached), None
    est = RobustMOAS(cfg.eps, cfg.max_iter, cfg.lp_method).fit(spec)
    report = est.report()
    cached.parent.mkdir(parents=True, exist_ok=True)
    est.polytope_.save(cached)
    return est.polytope_, report


def cmd_build_moas(cfg: RunConfig) -> int:
    spec, _, _ = build_problem(cfg)
    out = Path(cfg.out)
    key = cache_key(spec, cfg)
    est = RobustMOAS(cfg.eps, cfg.max_iter, cfg.lp_method).fit(spec)
    report = est.report()
    report["cache_key"] = key
    poly_text = est.polytope_.to_text()
    meta = metadata(cfg, spec, est.polytope_.ordering, cache_key=key)
    write_with_meta(out / "moas.poly", poly_text, meta)
    write_with_meta(out / "cache" / f"{key}.poly", poly_text, meta)
    write_with_meta(out / "moas_report.json", json.dumps(report, indent=2) + "\n", meta)
    lin, rob = report["linear"], report["robust"]
    print(f"theta vertices: {report['theta_vertices']}")
    print(f"linear stage: t*={lin['t_star']} rows={lin['rows_after_pruning']}")
    print(f"robust stage: t*={rob['t_star']} iterations={rob['iterations']} "
          f"rows={rob['rows_before_pruning']}->{rob['rows_after_pruning']} "
          f"({rob['wall_time_s']} s)")
    if report.get("single_stage"):
        print("p = 1: the robust stage coincides with the linear stage")
    return EXIT_OK


def _simulate(cfg: RunConfig, spec, x0, governed: bool, out: Path):
    w_src = None
    if spec.disturbed:
        w_src = disturbance_source(cfg.seed, spec.w_box, cfg.w_kind)
    gov = None
    if governed:
        poly, _ = _polytope(cfg, spec, out)
        gov = ReferenceGovernor(cfg.eps, cfg.max_iter, cfg.lp_method, cfg.bisection_depth).fit(spec, poly)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SafetyMarginWarning)
        traj = simulate(spec, gov, x0, cfg.steps, w_src)
    for item in caught:
        logger.warning("%s", item.message)
    ordering = gov.polytope_.ordering if gov is not None else ""
    return traj, ordering, len(caught)


def _x0(cfg: RunConfig, default) -> np.ndarray:
    if cfg.x0 is not None:
        return np.asarray(cfg.x0, dtype=float)
    if default is None:
        raise ConfigError("--x0 is required for problem files")
    return default


def cmd_run(cfg: RunConfig) -> int:
    spec, x0, pre = build_problem(cfg)
    x0 = _x0(cfg, x0)
    if len(x0) != spec.n_x:
        raise ConfigError(f"x0 has {len(x0)} entries, expected {spec.n_x}")
    out = Path(cfg.out)
    traj, ordering, warned = _simulate(cfg, spec, x0, not cfg.no_governor, out)
    first = traj.first_violation()
    summary = {
        "governed": not cfg.no_governor,
        "steps": len(traj),
        "first_violation": None if first is None else
        {"step": first[0], "constraint": traj.names[first[1]], "theta_index": first[2]},
        "audit_all_true": None if traj.audit is None else bool(traj.audit.all()),
        "safety_margin_warnings": warned,
        "v0": traj.refs[0].tolist() if len(traj) else [],
    }
    meta = metadata(cfg, spec, ordering, x0=x0.tolist(), summary=summary)
    write_with_meta(out / "trajectory.csv", trajectory_csv(traj, pre), meta)
    if first is None:
        print(f"{len(traj)} steps, no constraint violation")
    else:
        print(f"constraint {traj.names[first[1]]} violated at step {first[0]} "
              f"(theta sample {first[2] + 1})")
    if traj.audit is not None:
        print(f"audit: {'all admissible' if traj.audit.all() else 'membership lost'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    spec, x0, pre = build_problem(cfg)
    x0 = _x0(cfg, x0)
    out = Path(cfg.out)
    traj, ordering, _ = _simulate(cfg, spec, x0, not cfg.no_governor, out)
    if cfg.samples == "vertices":
        samples = theta_vertices(spec.theta_box)
    elif cfg.samples == "nominal":
        samples = spec.theta_box.mean(axis=1, keepdims=True).T
    else:
        samples = theta_grid(spec.theta_box)
    res = theta_sweep(traj, spec, samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["sample", "k"] + [f"theta_{i + 1}" for i in range(spec.n_theta)] + list(res["names"])
    if pre is not None:
        head.append("u")
    w.writerow(head)
    for s, th in enumerate(res["thetas"]):
        u = pre.elevator_force(traj.states, traj.refs[:, 0], th) if pre is not None else None
        for k in range(len(traj)):
            row = [str(s), str(k)] + [_fmt(z) for z in th] + [_fmt(z) for z in res["outputs"][s, k]]
            if u is not None:
                row.append(_fmt(u[k]))
            w.writerow(row)
    summary = {
        "samples": len(res["thetas"]),
        "names": list(res["names"]),
        "max_abs": res["max_abs"].tolist(),
        "worst_margin": res["worst_margin"].tolist(),
    }
    if pre is not None and len(traj):
        summary["max_abs_u"] = float(max(np.abs(pre.elevator_force(traj.states, traj.refs[:, 0], th)).max()
                                         for th in res["thetas"]))
    meta = metadata(cfg, spec, ordering, x0=x0.tolist())
    write_with_meta(out / "sweep.csv", buf.getvalue(), meta)
    write_with_meta(out / "sweep_summary.json", json.dumps(summary, indent=2) + "\n", meta)
    print(f"{summary['samples']} series written")
    if "max_abs_u" in summary:
        print(f"max |u| over samples: {summary['max_abs_u']:.6g}")
    return EXIT_OK


def cmd_grid_init(cfg: RunConfig) -> int:
    spec, _, _ = build_problem(cfg)
    out = Path(cfg.out)
    poly, _ = _polytope(cfg, spec, out)
    gov = ReferenceGovernor(cfg.eps, cfg.max_iter, cfg.lp_method, cfg.bisection_depth).fit(spec, poly)
    # x-range of the admissible set along each state axis
    axes = []
    for i in range(spec.n_x):
        e = np.zeros(poly.dim)
        e[i] = 1.0
        hi, lo = poly.maximize(e, cfg.lp_method), poly.maximize(-e, cfg.lp_method)
        if not (hi.optimal and lo.optimal):
            raise UnboundedSet(f"admissible set is unbounded along x_{i + 1}")
        axes.append(np.linspace(-lo.value, hi.value, cfg.grid_points))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{i + 1}" for i in range(spec.n_x)] + [f"v0_{i + 1}" for i in range(spec.n_v)]
               + ["admissible"])
    count = 0
    for x in np.array(np.meshgrid(*axes, indexing="ij")).reshape(spec.n_x, -1).T:
        try:
            v0 = gov.reset(x)
            w.writerow([_fmt(z) for z in x] + [_fmt(z) for z in v0] + ["true"])
            count += 1
        except InadmissibleInitialState:
            w.writerow([_fmt(z) for z in x] + [""] * spec.n_v + ["false"])
    meta = metadata(cfg, spec, poly.ordering, grid_points=cfg.grid_points)
    write_with_meta(out / "grid_init.csv", buf.getvalue(), meta)
    print(f"{count} of {cfg.grid_points ** spec.n_x} grid states admit a reference")
    return EXIT_OK


def cmd_calibrate_beta(cfg: RunConfig) -> int:
    spec, _, _ = build_problem(cfg)
    target = CALIBRATION_TARGETS.get(cfg.preset) if cfg.preset else None
    if target is None:
        raise ConfigError("calibration targets are known only for the aircraft presets")
    cal = calibrate_beta(spec, target, cfg.betas, refine=cfg.refine, eps=cfg.eps,
                         max_iter=cfg.max_iter, method=cfg.lp_method)
    for entry in cal.sweep:
        print(json.dumps(entry))
    report = {"target": list(target), "sweep": cal.sweep, "beta": cal.beta,
              "interval": cal.interval, "result": cal.result, "reproduced": cal.reproduced}
    if cfg.robust and cal.beta is not None:
        est = RobustMOAS(cfg.eps, cfg.max_iter, cfg.lp_method).fit(spec.with_beta(cal.beta))
        report["robust"] = est.report()["robust"]
    meta = metadata(cfg, spec, f"{ORDERING}/n={spec.n_x + spec.n_v}/p=1")
    write_with_meta(Path(cfg.out) / "calibration.json", json.dumps(report, indent=2) + "\n", meta)
    print(f"beta: {cal.beta} interval: {cal.interval} reproduced: {cal.reproduced}")
    if "robust" in report:
        rob = report["robust"]
        print(f"robust stage at that beta: t*={rob['t_star']} rows={rob['rows_after_pruning']}")
    return EXIT_OK


HANDLERS = {
    "build-moas": cmd_build_moas,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "grid-init": cmd_grid_init,
    "calibrate-beta": cmd_calibrate_beta,
}


# ---------------------------------------------------------------- parsing

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _eps(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("eps must be a number or 'auto'") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyrg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--preset", choices=PRESETS)
        src.add_argument("--problem", help="problem JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--eps", type=_eps, help="tightening for t >= 1, or 'auto'")
        p.add_argument("--bisection-depth", type=int)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--w-bound", type=float, help="replace the disturbance bound")
        p.add_argument("--w-kind", choices=("uniform", "zero", "worst-corner"))
        p.add_argument("--lp-method", choices=("highs", "simplex"))
        p.add_argument("--x0", type=_floats, help="initial state, comma separated")
        p.add_argument("--no-governor", action="store_true", default=None)
        if name == "sweep":
            p.add_argument("--samples", choices=("vertices", "grid", "nominal"))
        if name == "grid-init":
            p.add_argument("--grid-points", type=int)
        if name == "calibrate-beta":
            p.add_argument("--betas", type=_floats)
            p.add_argument("--robust", action="store_true", default=None)
            p.add_argument("--no-refine", dest="refine", action="store_false", default=None)
    return ap


_ENV_TYPES = {"seed": int, "beta": float, "eps": _eps, "bisection_depth": int, "max_iter": int,
              "steps": int, "w_bound": float, "out": str, "lp_method": str}


def env_overrides(environ=None) -> dict:
    """``POLYRG_BETA=0.97`` and friends; command-line flags take precedence."""
    environ = os.environ if environ is None else environ
    found = {}
    for name, conv in _ENV_TYPES.items():
        key = ENV_PREFIX + name.upper()
        if key in environ:
            try:
                found[name] = conv(environ[key])
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
    return found


def config_from_args(args: argparse.Namespace, environ=None) -> RunConfig:
    data = env_overrides(environ)
    for key, value in vars(args).items():
        if key == "verbose" or value is None:
            continue
        data[key] = value
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, ProblemError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissibleInitialState as exc:
        print(f"inadmissible-initial-state: {exc}; violated rows at v=0: {exc.violated_rows}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    except (TightenedInfeasible, UnboundedSet) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NotFinitelyDetermined, MoasError, SimulationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
