"""Solution post-processing: production horizon, analytic upper bound,
summary reports, and a small exhaustive oracle for cross-checking solvers.

The production horizon H of a schedule is the longest prefix of slots on
which total output reaches the demand; solvers optimize over an
overestimated decision horizon T >= H.  For a constant demand sigma the
horizon can never exceed floor(sum_j 0.6 * pmax0_j * rul_max_j / sigma),
the analytic ceiling used to normalize results across instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .domain import (
    DemandProfile,
    DomainError,
    FleetInstance,
    FmaxParams,
    PowerSchedule,
    _check_dims,
)

__all__ = [
    "ScheduleReport",
    "production_horizon",
    "upper_bound",
    "report",
    "oracle_best_horizon",
]

_DEMAND_TOL = 1e-6


@dataclass(frozen=True)
class ScheduleReport:
    """Summary metrics of one schedule against one demand profile.

    upper_bound and normalized_horizon are None for non-constant demand
    profiles (the analytic bound is defined for constant demand only).
    machine_starts counts off-to-on transitions per machine, in 1-based
    machine order.
    """

    horizon: int
    upper_bound: int | None
    normalized_horizon: float | None
    unmet_slots: int
    overproduction_energy: float
    machine_starts: tuple[int, ...]


def production_horizon(schedule: PowerSchedule, demand: DemandProfile, tol: float = _DEMAND_TOL) -> int:
    """Largest h such that total output reaches demand on every slot t < h.

    "Reaches" allows a relative shortfall of ``tol`` to absorb float noise;
    the default 1e-6 is a property of the solution, independent of any
    solver stopping threshold.
    """
    if schedule.slots != demand.slots:
        raise DomainError("schedule and demand lengths differ")
    totals = schedule.f.sum(axis=0)
    met = totals >= demand.values * (1.0 - tol)
    misses = np.flatnonzero(~met)
    return int(misses[0]) if misses.size else schedule.slots


def upper_bound(instance: FleetInstance, sigma: float) -> int:
    """Analytic ceiling on the production horizon for constant demand:
    floor(sum_j 0.6 * pmax0_j * rul_max_j / sigma) slots."""
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    energy = sum(0.6 * mch.pmax0 * mch.rul_max for mch in instance.machines)
    return int(math.floor(energy / sigma))


def report(
    schedule: PowerSchedule,
    demand: DemandProfile,
    instance: FleetInstance,
    tol: float = _DEMAND_TOL,
) -> ScheduleReport:
    """Assemble the full metric set for one schedule."""
    _check_dims(schedule, instance, demand)
    totals = schedule.f.sum(axis=0)
    sigma = demand.values
    horizon = production_horizon(schedule, demand, tol)
    unmet = int(np.count_nonzero(totals < sigma * (1.0 - tol)))
    over = float(np.maximum(totals - sigma, 0.0).sum() * instance.slot_hours)

    constant = bool(np.all(sigma == sigma[0]))
    ub: int | None = None
    normalized: float | None = None
    if constant and sigma[0] > 0:
        ub = upper_bound(instance, float(demand.mean()))
        if ub > 0:
            normalized = horizon / ub

    on = schedule.f > 0
    started = on & ~np.concatenate([np.zeros((schedule.m, 1), dtype=bool), on[:, :-1]], axis=1)
    starts = tuple(int(c) for c in started.sum(axis=1))
    return ScheduleReport(
        horizon=horizon,
        upper_bound=ub,
        normalized_horizon=normalized,
        unmet_slots=unmet,
        overproduction_energy=over,
        machine_starts=starts,
    )


def _pareto_max(vectors: list[np.ndarray]) -> list[np.ndarray]:
    """Componentwise-maximal elements of a small set of vectors."""
    keep: list[np.ndarray] = []
    for v in vectors:
        dominated = False
        for w in vectors:
            if w is v:
                continue
            if np.all(w >= v) and np.any(w > v):
                dominated = True
                break
        if not dominated:
            if not any(np.array_equal(v, k) for k in keep):
                keep.append(v)
    return keep


def oracle_best_horizon(
    instance: FleetInstance,
    sigma: float,
    levels: int,
    max_slots: int | None = None,
    params: FmaxParams | None = None,
    node_budget: int = 10_000_000,
) -> int:
    """Best horizon achievable when each output is restricted to ``levels``
    evenly spaced values in [0, current fmax_j(t)].

    Exhaustive depth-first search stepping the capacity recurrence exactly,
    with three sound prunings: allocations that fail the demand end the
    branch, allocations whose successor capacities are componentwise
    dominated are dropped, and branches whose optimistic remaining horizon
    cannot beat the incumbent are cut.  The discretization makes the result
    a lower bound on the continuous optimum, so it cross-checks solver
    horizons (on reference-scale fleets it also stays below the analytic
    ceiling; tiny machines can outlive that bound).

    Refuses, naming the budget, when the explored space passes
    ``node_budget`` or the search would recurse deeper than Python allows.
    ``max_slots`` caps the searched horizon and is required for sigma = 0
    (otherwise every horizon is achievable).
    """
    params = params or FmaxParams()
    if instance.m > 3:
        raise DomainError(f"oracle supports m <= 3, got {instance.m}")
    if not (1 <= levels <= 8):
        raise DomainError(f"levels must be in [1, 8], got {levels}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        if max_slots is None:
            raise DomainError("sigma = 0 needs max_slots (any horizon is achievable)")
        return max_slots

    m = instance.m
    slopes = instance.slope_array()
    pmax0 = instance.pmax0_array()
    fractions = np.linspace(0.0, 1.0, levels) if levels > 1 else np.array([0.0])
    frac_grids = list(itertools.product(fractions, repeat=m))
    meet = sigma * (1.0 - 1e-12)
    # Any demand-meeting slot burns at least this much total capacity
    # (power ** upsilon is subadditive, so sum f^u >= (sum f)^u >= sigma^u).
    dmin = params.mu * float(np.min(np.abs(slopes))) * sigma ** params.upsilon

    depth_bound = max_slots if max_slots is not None else (
        1 + int(max(pmax0.sum() - sigma, 0.0) / dmin) if dmin > 0 else None
    )
    if depth_bound is None or depth_bound > 900:
        raise DomainError(
            f"oracle search depth would reach {depth_bound} slots; pass a "
            "max_slots cap of at most 900"
        )

    best = 0
    nodes = 0

    def step_caps(caps: np.ndarray, alloc: np.ndarray) -> np.ndarray:
        dec = np.where(alloc > 0, params.mu * slopes * alloc ** params.upsilon, 0.0)
        return np.maximum(0.0, caps + dec)

    def dfs(t: int, caps: np.ndarray) -> None:
        nonlocal best, nodes
        nodes += 1
        if nodes > node_budget:
            raise DomainError(
                f"oracle search exceeded the {node_budget} node budget "
                f"(m={m}, levels={levels}); shrink the instance"
            )
        if max_slots is not None and t >= max_slots:
            best = max(best, t)
            return
        total = float(caps.sum())
        if total < meet:
            best = max(best, t)
            return
        # Optimistic bound: each surviving slot costs at least dmin capacity.
        optimistic = t + 1 + int((total - sigma) / dmin) if dmin > 0 else None
        if max_slots is not None and optimistic is not None:
            optimistic = min(optimistic, max_slots)
        if optimistic is not None and optimistic <= best:
            return
        successors: list[np.ndarray] = []
        for frac in frac_grids:
            alloc = np.array(frac) * caps
            if alloc.sum() >= meet:
                successors.append(step_caps(caps, alloc))
        if not successors:
            best = max(best, t)
            return
        for nxt in sorted(_pareto_max(successors), key=lambda v: -float(v.sum())):
            dfs(t + 1, nxt)

    dfs(0, pmax0.copy())
    return best
