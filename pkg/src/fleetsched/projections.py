"""Successive projections onto the scheduling constraint sets.

One solver iteration applies three maps in sequence:

1. demand projection: per time interval, raise the outputs of the machines
   closest to their capacity until the demand at the interval end is met or
   no headroom remains;
2. capacity update: re-derive the fmax trajectory from the new usage;
3. capacity clip: cut every output back to its (updated) fmax.

Iterating the trio drives the schedule toward a fixed point where the
demand is met exactly on a prefix of the horizon and every output respects
its capacity.  The loop stops once the fleet's output profile moves less
than epsilon = epsilon_factor * mean(demand) at every slot, or at
max_iters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    DemandProfile,
    DomainError,
    FleetInstance,
    FmaxParams,
    FmaxTrajectory,
    PowerSchedule,
    SolveResult,
    _check_dims,
    _roll_fmax_raw,
)

__all__ = [
    "ProjectionConfig",
    "select_machine",
    "project_onto_demand",
    "clip_to_fmax",
    "solve_projections",
]


@dataclass(frozen=True)
class ProjectionConfig:
    """Projection-solver knobs.

    delta_t:        interval length in slots; increases are applied
                    uniformly across each interval.
    epsilon_factor: stopping threshold as a fraction of mean demand.
    max_iters:      safety cap on trio iterations.
    """

    delta_t: int = 1
    epsilon_factor: float = 0.1
    max_iters: int = 10_000
    fmax_params: FmaxParams = field(default_factory=FmaxParams)

    def __post_init__(self):
        if self.delta_t < 1:
            raise DomainError(f"delta_t must be >= 1, got {self.delta_t}")
        if not self.epsilon_factor > 0:
            raise DomainError(f"epsilon_factor must be > 0, got {self.epsilon_factor}")
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")


def select_machine(f_at_tend, fmax_at_tend) -> int | None:
    """Pick the machine whose output to raise first: the one with the
    smallest positive headroom to its capacity.

    Headroom is max(fmax_j - f_j, 0); machines without positive headroom
    are not candidates.  Ties break to the lowest index.  Returns a 0-based
    row index (reports elsewhere use 1-based machine numbers), or None when
    no machine has headroom.
    """
    f = np.asarray(f_at_tend, dtype=float)
    fm = np.asarray(fmax_at_tend, dtype=float)
    if f.shape != fm.shape or f.ndim != 1:
        raise DomainError("select_machine expects two equal-length 1-d arrays")
    headroom = np.maximum(fm - f, 0.0)
    positive = headroom > 0
    if not positive.any():
        return None
    candidates = np.flatnonzero(positive)
    return int(candidates[np.argmin(headroom[candidates])])


def _interval_bounds(slots: int, delta_t: int) -> tuple[np.ndarray, np.ndarray]:
    starts = np.arange(0, slots, delta_t)
    ends = np.minimum(starts + delta_t - 1, slots - 1)
    return starts, ends


def _project_raw(f: np.ndarray, fm: np.ndarray, sigma: np.ndarray, delta_t: int) -> np.ndarray:
    """Vectorized demand projection over all intervals at once.

    Per interval, the sequential rule (select the machine with least
    positive headroom, raise it by the remaining deficit capped at its
    capacity, repeat) is equivalent to a greedy fill in ascending-headroom
    order, which is what the sorted cumulative sums below compute.
    Machines at zero headroom sort first and absorb nothing.
    """
    slots = f.shape[1]
    starts, ends = _interval_bounds(slots, delta_t)
    f_end = f[:, ends]
    fm_end = fm[:, ends]
    headroom = np.maximum(fm_end - f_end, 0.0)
    deficit = np.maximum(sigma[ends] - f_end.sum(axis=0), 0.0)
    order = np.argsort(headroom, axis=0, kind="stable")
    sorted_room = np.take_along_axis(headroom, order, axis=0)
    used_before = np.cumsum(sorted_room, axis=0) - sorted_room
    alloc_sorted = np.clip(deficit[None, :] - used_before, 0.0, sorted_room)
    alloc = np.empty_like(alloc_sorted)
    np.put_along_axis(alloc, order, alloc_sorted, axis=0)
    # Only machines that absorbed part of the deficit get their interval
    # rewritten to the raised end-of-interval value; min() guards the
    # one-ulp overshoot of f + (fmax - f), and max() keeps the projection
    # monotone (it never lowers an entry).
    raised = np.where(alloc > 0, np.minimum(f_end + alloc, fm_end), 0.0)
    widths = ends - starts + 1
    return np.maximum(f, np.repeat(raised, widths, axis=1))


def project_onto_demand(
    schedule: PowerSchedule,
    fmax: FmaxTrajectory,
    demand: DemandProfile,
    cfg: ProjectionConfig,
) -> PowerSchedule:
    """Raise outputs toward the demand, interval by interval.

    For each interval the deficit is measured at the interval's last slot
    and the raise is applied uniformly to every slot of the interval.  The
    result is entrywise >= the input and never pushes an entry above the
    machine's capacity at the interval end.
    """
    if schedule.f.shape != fmax.fmax.shape:
        raise DomainError("schedule and fmax shapes differ")
    if schedule.slots != demand.slots:
        raise DomainError("schedule and demand lengths differ")
    if cfg.delta_t > schedule.slots:
        raise DomainError(f"delta_t={cfg.delta_t} exceeds horizon of {schedule.slots} slots")
    out = _project_raw(schedule.f, fmax.fmax, demand.values, cfg.delta_t)
    return PowerSchedule(out)


def clip_to_fmax(schedule: PowerSchedule, fmax: FmaxTrajectory) -> PowerSchedule:
    """Cut every output back to its capacity: f_j(t) <- min(f_j(t), fmax_j(t))."""
    if schedule.f.shape != fmax.fmax.shape:
        raise DomainError("schedule and fmax shapes differ")
    return PowerSchedule(np.minimum(schedule.f, fmax.fmax))


def _solve_projections_raw(
    f0: np.ndarray,
    pmax0: np.ndarray,
    slopes: np.ndarray,
    sigma: np.ndarray,
    cfg: ProjectionConfig,
) -> tuple[np.ndarray, np.ndarray, int, str]:
    params = cfg.fmax_params
    f = f0.copy()
    fmax = _roll_fmax_raw(f, pmax0, slopes, params)
    eps = cfg.epsilon_factor * float(sigma.mean())
    stop_reason = "max_iters"
    iterations = cfg.max_iters
    totals = f.sum(axis=0)
    for it in range(1, cfg.max_iters + 1):
        f = _project_raw(f, fmax, sigma, cfg.delta_t)
        fmax = _roll_fmax_raw(f, pmax0, slopes, params)
        f = np.minimum(f, fmax)
        # Schedule movement is measured on the fleet's output profile, the
        # same scale as the demand-based threshold; a per-entry norm would
        # sit below epsilon from the start once mean demand exceeds
        # 10 * pmax0 and stop the solver after one pass.
        totals_prev, totals = totals, f.sum(axis=0)
        if np.max(np.abs(totals - totals_prev)) <= eps:
            stop_reason = "converged"
            iterations = it
            break
    return f, fmax, iterations, stop_reason


def solve_projections(
    instance: FleetInstance,
    demand: DemandProfile,
    cfg: ProjectionConfig | None = None,
    init: PowerSchedule | None = None,
) -> SolveResult:
    """Iterate [demand projection -> capacity update -> capacity clip] until
    the schedule stabilizes.

    Starts from ``init`` (all zeros by default).  The clip runs last, so the
    returned schedule always respects the capacity trajectory it induces.
    Hitting max_iters is reported in the result, not raised.
    """
    cfg = cfg or ProjectionConfig()
    if init is None:
        init = PowerSchedule.zeros(instance.m, demand.slots)
    _check_dims(init, instance, demand)
    if cfg.delta_t > demand.slots:
        raise DomainError(f"delta_t={cfg.delta_t} exceeds horizon of {demand.slots} slots")
    t0 = time.perf_counter()
    f, fmax, iterations, stop_reason = _solve_projections_raw(
        init.f, instance.pmax0_array(), instance.slope_array(), demand.values, cfg
    )
    # Re-derive fmax from the final schedule so the returned pair is
    # self-consistent (clipping can only lower usage, hence raise fmax).
    fmax_final = _roll_fmax_raw(f, instance.pmax0_array(), instance.slope_array(), cfg.fmax_params)
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    return SolveResult(
        schedule=PowerSchedule(f),
        fmax=FmaxTrajectory(fmax_final),
        iterations=iterations,
        stop_reason=stop_reason,
        wall_time_ms=elapsed_ms,
    )
