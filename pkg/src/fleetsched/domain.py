"""Shared domain types for scheduling a fleet of degrading power units.

A fleet is a set of m independent machines (fuel-cell stacks).  Each machine
can deliver a nonnegative power output per time slot, bounded above by a
usage-dependent maximum ``fmax`` that only decreases when the machine is
actually used.  All power values are in watts, time is discretized into
slots of ``slot_hours`` hours, and schedules are m x (T+1) matrices whose
entry (j, t) is the output of machine j during slot t.

The capacity recurrence is

    fmax_j(t) = max(0, fmax_j(t-1) + mu * slope_j * f_j(t-1) ** upsilon)

with ``slope_j < 0`` the machine's intrinsic decay speed and (mu, upsilon)
the usage-response parameters.  An unused machine does not decay.

All types here are immutable value objects (arrays are marked read-only),
and all operations are pure functions, so everything is safe to share
across threads without synchronization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "MachineSpec",
    "FleetInstance",
    "DemandProfile",
    "PowerSchedule",
    "FmaxTrajectory",
    "FmaxParams",
    "Violation",
    "FeasibilityReport",
    "SolveResult",
    "fmax_step",
    "roll_fmax",
    "check_feasibility",
    "instance_to_dict",
    "instance_from_dict",
    "demand_to_dict",
    "demand_from_dict",
    "schedule_to_dict",
    "schedule_from_dict",
]

_SLOPE_REL_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an input violates a type invariant or operation contract."""


def _frozen_array(values, dtype=float, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise DomainError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MachineSpec:
    """Static characteristics of one machine.

    pmax0:   maximum output at the start of the horizon (W), > 0.
    pmin:    minimum useful output (W), kept for reporting; 0 <= pmin < pmax0.
    slope:   decay speed of the maximum output (W per slot), < 0.
    rul_max: slots of remaining life at minimal usage, > 0.

    The convex capacity model reaches zero output exactly at rul_max, so
    slope must equal -pmax0 / rul_max (within 1e-9 relative).
    """

    pmax0: float
    pmin: float
    slope: float
    rul_max: float

    def __post_init__(self):
        if not (self.pmax0 > 0 and math.isfinite(self.pmax0)):
            raise DomainError(f"pmax0 must be positive and finite, got {self.pmax0}")
        if not (0 <= self.pmin < self.pmax0):
            raise DomainError(f"pmin must satisfy 0 <= pmin < pmax0, got {self.pmin}")
        if not (self.slope < 0 and math.isfinite(self.slope)):
            raise DomainError(f"slope must be negative and finite, got {self.slope}")
        if not (self.rul_max > 0 and math.isfinite(self.rul_max)):
            raise DomainError(f"rul_max must be positive and finite, got {self.rul_max}")
        implied = -self.pmax0 / self.rul_max
        if abs(self.slope - implied) > _SLOPE_REL_TOL * abs(implied):
            raise DomainError(
                f"slope {self.slope} inconsistent with -pmax0/rul_max = {implied}"
            )

    @classmethod
    def from_limits(cls, pmax0: float, rul_max: float, pmin: float = 0.0) -> "MachineSpec":
        """Build a spec with the slope derived from (pmax0, rul_max)."""
        return cls(pmax0=pmax0, pmin=pmin, slope=-pmax0 / rul_max, rul_max=rul_max)


@dataclass(frozen=True)
class FleetInstance:
    """An ordered fleet of machines plus the slot duration and provenance seed.

    Machine order is stable; machine index j is reported 1-based everywhere
    user-facing, while in-memory arrays are 0-based rows in the same order.
    ``seed`` is None for hand-built instances.
    """

    machines: tuple[MachineSpec, ...]
    slot_hours: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        machines = tuple(self.machines)
        object.__setattr__(self, "machines", machines)
        if len(machines) < 1:
            raise DomainError("a fleet needs at least one machine")
        if not all(isinstance(mch, MachineSpec) for mch in machines):
            raise DomainError("machines must be MachineSpec values")
        if not (self.slot_hours > 0 and math.isfinite(self.slot_hours)):
            raise DomainError(f"slot_hours must be positive, got {self.slot_hours}")

    @property
    def m(self) -> int:
        return len(self.machines)

    def pmax0_array(self) -> np.ndarray:
        return np.array([mch.pmax0 for mch in self.machines])

    def slope_array(self) -> np.ndarray:
        return np.array([mch.slope for mch in self.machines])


@dataclass(frozen=True)
class DemandProfile:
    """The load demand sigma(t) for t = 0..T, one value per slot, in watts."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, ndim=1)
        if arr.size < 1:
            raise DomainError("demand profile needs at least one slot")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("demand values must be finite and >= 0")
        object.__setattr__(self, "values", arr)

    @property
    def slots(self) -> int:
        """Number of slots T+1."""
        return self.values.size

    @property
    def horizon(self) -> int:
        """Decision horizon T (last slot index)."""
        return self.values.size - 1

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class PowerSchedule:
    """Decision variable: an m x (T+1) matrix of nonnegative outputs f_j(t)."""

    f: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.f, ndim=2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"schedule must be m x (T+1) with m,T+1 >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("schedule entries must be finite")
        if np.any(arr < 0):
            raise DomainError("schedule entries must be >= 0")
        object.__setattr__(self, "f", arr)

    @property
    def m(self) -> int:
        return self.f.shape[0]

    @property
    def slots(self) -> int:
        return self.f.shape[1]

    @classmethod
    def zeros(cls, m: int, slots: int) -> "PowerSchedule":
        return cls(np.zeros((m, slots)))


@dataclass(frozen=True)
class FmaxTrajectory:
    """Usage-dependent maximum outputs: m x (T+1), rows non-increasing in t."""

    fmax: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.fmax, ndim=2)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("fmax entries must be finite and >= 0")
        if arr.shape[1] > 1:
            slack = 1e-9 * (1.0 + float(np.abs(arr).max()))
            if np.any(np.diff(arr, axis=1) > slack):
                raise DomainError("fmax rows must be non-increasing in t")
        object.__setattr__(self, "fmax", arr)

    @property
    def m(self) -> int:
        return self.fmax.shape[0]

    @property
    def slots(self) -> int:
        return self.fmax.shape[1]


@dataclass(frozen=True)
class FmaxParams:
    """Usage-response parameters (mu, upsilon) of the capacity recurrence."""

    mu: float = 0.2
    upsilon: float = 0.3

    def __post_init__(self):
        if not (0 <= self.mu <= 1):
            raise DomainError(f"mu must be in [0, 1], got {self.mu}")
        if not (0 <= self.upsilon <= 1):
            raise DomainError(f"upsilon must be in [0, 1], got {self.upsilon}")


@dataclass(frozen=True)
class Violation:
    """One feasibility violation at machine ``machine`` (1-based) and slot t."""

    machine: int
    slot: int
    kind: str  # "negative" or "exceeds_fmax"
    value: float
    limit: float
    excess: float


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    violations: tuple[Violation, ...]
    fmax: FmaxTrajectory


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one solver run.

    ``fmax`` is the capacity trajectory induced by the returned schedule,
    so the pair is self-consistent: schedule.f <= fmax.fmax entrywise.
    ``objective_trace`` is only populated by the mirror-prox solver.
    """

    schedule: PowerSchedule
    fmax: FmaxTrajectory
    iterations: int
    stop_reason: str  # "converged" or "max_iters"
    wall_time_ms: float
    objective_trace: tuple[float, ...] | None = None


def fmax_step(prev_fmax: float, prev_f: float, spec: MachineSpec, params: FmaxParams) -> float:
    """Advance one machine's maximum output by one slot of usage ``prev_f``.

    Returns max(0, prev_fmax + mu * slope * prev_f ** upsilon); an unused
    machine (prev_f = 0) keeps its capacity unchanged.
    """
    if prev_fmax < 0 or prev_f < 0:
        raise DomainError(
            f"fmax_step requires nonnegative inputs, got prev_fmax={prev_fmax}, prev_f={prev_f}"
        )
    if prev_f == 0:
        # No usage, no decay; also sidesteps 0 ** 0 == 1 when upsilon is 0.
        return prev_fmax
    return max(0.0, prev_fmax + params.mu * spec.slope * prev_f ** params.upsilon)


def _check_dims(schedule: PowerSchedule, instance: FleetInstance, demand: DemandProfile | None = None) -> None:
    if schedule.m != instance.m:
        raise DomainError(
            f"schedule has {schedule.m} machine rows, instance has {instance.m}"
        )
    if demand is not None and schedule.slots != demand.slots:
        raise DomainError(
            f"schedule has {schedule.slots} slots, demand has {demand.slots}"
        )


def _roll_fmax_raw(f: np.ndarray, pmax0: np.ndarray, slopes: np.ndarray, params: FmaxParams) -> np.ndarray:
    """Capacity trajectory for raw schedule matrix ``f``.

    The cumulative sum reproduces the per-slot recurrence bit for bit:
    decrements never depend on fmax itself, and once the running sum goes
    negative it stays negative, so a single clamp at zero is exact.
    """
    used = f[:, :-1]
    if params.upsilon == 0:
        pow_term = (used > 0).astype(float)  # unused machines do not decay
    else:
        pow_term = used ** params.upsilon
    decs = params.mu * slopes[:, None] * pow_term
    seeded = np.concatenate([pmax0[:, None], decs], axis=1)
    return np.maximum(0.0, np.cumsum(seeded, axis=1))


def roll_fmax(schedule: PowerSchedule, instance: FleetInstance, params: FmaxParams) -> FmaxTrajectory:
    """Capacity trajectory induced by a schedule: fmax_j(0) = pmax0_j, then
    one ``fmax_step`` per slot using the previous slot's output."""
    _check_dims(schedule, instance)
    out = _roll_fmax_raw(schedule.f, instance.pmax0_array(), instance.slope_array(), params)
    return FmaxTrajectory(out)


def check_feasibility(
    schedule: PowerSchedule,
    instance: FleetInstance,
    params: FmaxParams,
    tol: float = 1e-9,
) -> FeasibilityReport:
    """Check f >= 0 and f_j(t) <= fmax_j(t) * (1 + tol) against the rolled fmax.

    Violations are data, not errors: the report lists every offending
    (machine, slot) with its magnitude.  ``tol`` is relative because power
    magnitudes vary across machines.
    """
    _check_dims(schedule, instance)
    fmax = roll_fmax(schedule, instance, params)
    f = schedule.f
    cap = fmax.fmax * (1.0 + tol)
    violations: list[Violation] = []
    neg_rows, neg_cols = np.nonzero(f < 0)
    for j, t in zip(neg_rows.tolist(), neg_cols.tolist()):
        violations.append(
            Violation(machine=j + 1, slot=t, kind="negative",
                      value=float(f[j, t]), limit=0.0, excess=float(-f[j, t]))
        )
    over_rows, over_cols = np.nonzero(f > cap)
    for j, t in zip(over_rows.tolist(), over_cols.tolist()):
        violations.append(
            Violation(machine=j + 1, slot=t, kind="exceeds_fmax",
                      value=float(f[j, t]), limit=float(fmax.fmax[j, t]),
                      excess=float(f[j, t] - fmax.fmax[j, t]))
        )
    violations.sort(key=lambda v: (v.machine, v.slot, v.kind))
    return FeasibilityReport(ok=not violations, violations=tuple(violations), fmax=fmax)


# ---------------------------------------------------------------------------
# JSON wire format.  Python's json module serializes floats with shortest
# round-trip repr, so every value survives a write/read cycle losslessly.
# ---------------------------------------------------------------------------

def instance_to_dict(instance: FleetInstance) -> dict:
    d = {
        "machines": [
            {"pmax0": mch.pmax0, "pmin": mch.pmin, "slope": mch.slope, "rul_max": mch.rul_max}
            for mch in instance.machines
        ],
        "slot_hours": instance.slot_hours,
    }
    if instance.seed is not None:
        d["seed"] = instance.seed
    return d


def instance_from_dict(d: dict) -> FleetInstance:
    try:
        machines = tuple(
            MachineSpec(
                pmax0=float(mch["pmax0"]),
                pmin=float(mch["pmin"]),
                slope=float(mch["slope"]),
                rul_max=float(mch["rul_max"]),
            )
            for mch in d["machines"]
        )
        return FleetInstance(
            machines=machines,
            slot_hours=float(d.get("slot_hours", 1.0)),
            seed=int(d["seed"]) if "seed" in d and d["seed"] is not None else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed instance document: {exc}") from exc


def demand_to_dict(demand: DemandProfile) -> dict:
    return {"demand": demand.values.tolist()}


def demand_from_dict(d: dict) -> DemandProfile:
    try:
        return DemandProfile(np.array(d["demand"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed demand document: {exc}") from exc


def schedule_to_dict(schedule: PowerSchedule) -> dict:
    return {"schedule": [row.tolist() for row in schedule.f]}


def schedule_from_dict(d: dict) -> PowerSchedule:
    try:
        return PowerSchedule(np.array(d["schedule"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed schedule document: {exc}") from exc
