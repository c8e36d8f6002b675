"""Random fleet instances and constant demand profiles.

Machine characteristics follow the benchmark convention: remaining life
drawn uniformly around 1500 slots (+/- 20%), initial maximum output around
500 W (+/- 5%), minimum output at 15% of the initial maximum, and nominal
output at 75% of it.  A constant demand is a load factor alpha times the
fleet's total nominal power.

Reproducibility: draws come from SplitMix64, a fixed 64-bit mixing PRNG,
so a given (seed, m) pair yields a bit-identical instance on any platform
and any library version.  Each machine consumes exactly two draws from the
stream, in machine-index order: rul_max first, then pmax0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import DemandProfile, DomainError, FleetInstance, MachineSpec

__all__ = [
    "SplitMix64",
    "GeneratorConfig",
    "LoadFactor",
    "generate_fleet",
    "nominal_total",
    "constant_demand",
]

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64: state advances by a fixed odd constant, output is a
    bijective xor-shift/multiply mix of the state.  uniform() maps the top
    53 bits to [0, 1) the standard way."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the random fleet generator.

    Spreads are half-widths of the uniform ranges, as fractions of the
    center; ratios are fractions of each machine's pmax0.
    """

    m: int
    seed: int
    rul_center: float = 1500.0
    rul_spread: float = 0.20
    pmax_center: float = 500.0
    pmax_spread: float = 0.05
    pmin_ratio: float = 0.15
    pnom_ratio: float = 0.75

    def __post_init__(self):
        if self.m < 1:
            raise DomainError(f"m must be >= 1, got {self.m}")
        for name in ("rul_spread", "pmax_spread"):
            v = getattr(self, name)
            if not (0 <= v < 1):
                raise DomainError(f"{name} must be in [0, 1), got {v}")
        for name in ("pmin_ratio", "pnom_ratio"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise DomainError(f"{name} must be in (0, 1), got {v}")
        if self.rul_center <= 0 or self.pmax_center <= 0:
            raise DomainError("rul_center and pmax_center must be positive")


@dataclass(frozen=True)
class LoadFactor:
    """Demand as a fraction alpha of the fleet's total nominal power."""

    alpha: float

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise DomainError(f"alpha must be in (0, 1], got {self.alpha}")


def generate_fleet(cfg: GeneratorConfig) -> FleetInstance:
    """Draw a fleet instance; identical configs give bit-identical fleets."""
    rng = SplitMix64(cfg.seed)
    machines = []
    for _ in range(cfg.m):
        rul = rng.uniform(cfg.rul_center * (1 - cfg.rul_spread),
                          cfg.rul_center * (1 + cfg.rul_spread))
        pmax0 = rng.uniform(cfg.pmax_center * (1 - cfg.pmax_spread),
                            cfg.pmax_center * (1 + cfg.pmax_spread))
        machines.append(
            MachineSpec(pmax0=pmax0, pmin=cfg.pmin_ratio * pmax0,
                        slope=-pmax0 / rul, rul_max=rul)
        )
    return FleetInstance(machines=tuple(machines), slot_hours=1.0, seed=cfg.seed)


def nominal_total(instance: FleetInstance, pnom_ratio: float = 0.75) -> float:
    """Total nominal power of the fleet: sum of pnom_ratio * pmax0_j."""
    return float(sum(pnom_ratio * mch.pmax0 for mch in instance.machines))


def constant_demand(instance: FleetInstance, alpha: LoadFactor | float, horizon: int) -> DemandProfile:
    """Constant profile of T+1 slots at alpha times the fleet nominal power.

    The nominal ratio is pinned at 0.75 (the manufacturer-recommended
    operating point) regardless of generator configuration.
    """
    if horizon < 0:
        raise DomainError(f"horizon must be >= 0, got {horizon}")
    a = alpha.alpha if isinstance(alpha, LoadFactor) else float(alpha)
    if a < 0:
        raise DomainError(f"alpha must be >= 0, got {a}")
    level = a * nominal_total(instance, 0.75)
    return DemandProfile(np.full(horizon + 1, level))
