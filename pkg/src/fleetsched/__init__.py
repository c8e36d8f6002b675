"""fleetsched: commitment scheduling for fleets of degrading power units.

Two solvers build schedules that meet a power demand for as long as the
fleet's decaying capacities allow: a fast successive-projections method and
an entropic mirror-prox method with smooth exponential penalties.  The
package also ships the random instance generator, the analytic horizon
ceiling, solution reports, a small exhaustive oracle, and a benchmark CLI.
"""

from .domain import (
    DemandProfile,
    DomainError,
    FeasibilityReport,
    FleetInstance,
    FmaxParams,
    FmaxTrajectory,
    MachineSpec,
    PowerSchedule,
    SolveResult,
    Violation,
    check_feasibility,
    fmax_step,
    roll_fmax,
)
from .evaluation import ScheduleReport, oracle_best_horizon, production_horizon, report, upper_bound
from .generator import GeneratorConfig, LoadFactor, constant_demand, generate_fleet, nominal_total
from .mirrorprox import (
    MirrorProxConfig,
    ProxState,
    demand_anchor,
    grad_h_dem,
    grad_h_slope,
    h_dem,
    h_slope,
    mirror_grad,
    mirror_inv,
    mp_iteration,
    solve_mirror_prox,
)
from .projections import (
    ProjectionConfig,
    clip_to_fmax,
    project_onto_demand,
    select_machine,
    solve_projections,
)

__version__ = "0.1.0"

__all__ = [
    "DemandProfile",
    "DomainError",
    "FeasibilityReport",
    "FleetInstance",
    "FmaxParams",
    "FmaxTrajectory",
    "MachineSpec",
    "PowerSchedule",
    "SolveResult",
    "Violation",
    "check_feasibility",
    "fmax_step",
    "roll_fmax",
    "ScheduleReport",
    "oracle_best_horizon",
    "production_horizon",
    "report",
    "upper_bound",
    "GeneratorConfig",
    "LoadFactor",
    "constant_demand",
    "generate_fleet",
    "nominal_total",
    "MirrorProxConfig",
    "ProxState",
    "demand_anchor",
    "grad_h_dem",
    "grad_h_slope",
    "h_dem",
    "h_slope",
    "mirror_grad",
    "mirror_inv",
    "mp_iteration",
    "solve_mirror_prox",
    "ProjectionConfig",
    "clip_to_fmax",
    "project_onto_demand",
    "select_machine",
    "solve_projections",
]
