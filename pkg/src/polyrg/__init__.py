"""Reference governors for linear systems with uncertain polynomial constraints."""
from importlib.metadata import PackageNotFoundError, version

from .governor import (
    GovernorState,
    InadmissibleInitialState,
    ReferenceGovernor,
    SafetyMarginWarning,
    embed,
    init_reference,
    update,
)
from .lift import PolyConstraint, ProblemError, ProblemSpec, Term, extend, lift_constraints, load_problem
from .lpcore import LinearProgram, LpOutcome, LpStatus, solve_lp
from .moas import (
    Box,
    MoasError,
    MoasResult,
    NotFinitelyDetermined,
    Polytope,
    RobustMOAS,
    TightenedInfeasible,
    compute_linear_moas,
    compute_robust_moas,
)
from .polykron import ORDERING, PowerLift, eval_power, kron_power, power_basis, sigma
from .sim import AircraftPreset, Trajectory, build_aircraft_problem, c2d, simulate, theta_sweep

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0+unknown"

__all__ = [
    "AircraftPreset", "Box", "GovernorState", "InadmissibleInitialState", "LinearProgram",
    "LpOutcome", "LpStatus", "MoasError", "MoasResult", "NotFinitelyDetermined", "ORDERING",
    "PolyConstraint", "Polytope", "PowerLift", "ProblemError", "ProblemSpec", "ReferenceGovernor",
    "RobustMOAS", "SafetyMarginWarning", "Term", "TightenedInfeasible", "Trajectory",
    "build_aircraft_problem", "c2d", "compute_linear_moas", "compute_robust_moas", "embed",
    "eval_power", "extend", "init_reference", "kron_power", "lift_constraints", "load_problem",
    "power_basis", "sigma", "simulate", "solve_lp", "theta_sweep", "update",
]
