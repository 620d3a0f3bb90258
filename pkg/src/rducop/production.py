"""Unit-production decisions for an RTS army as a stochastic COP.

Decision variables ``plan_X`` (total units of type X we aim to have) and
``assign_XY`` (our X units set against enemy Y units), domains
``[0, threshold]``.  Stochastic variables ``enemy_X`` hold the enemy army
composition, conditioned on what we currently see of it.  The objective
sums per-enemy-type coverage, each capped at one spare unit::

    target_Y = min(1, sum_X c(X, Y) * assign_XY - enemy_Y)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .cop import CappedLinearObjective, Constraint, CopInstance, Decision, DecisionVar, Target
from .decision_core import IDENTITY, DeformationFunction
from .stochastic import (
    DEFAULT_K,
    DiscreteDistribution,
    StochasticVar,
    TickDistributionModel,
    condition_at_least,
)

__all__ = [
    "UnitType",
    "UNIT_TYPES",
    "UNIT_COST",
    "CoefficientMode",
    "CounterMatrix",
    "ProductionState",
    "ProductionDecision",
    "InvalidState",
    "DEFAULT_THRESHOLD",
    "build_instance",
    "objective",
    "default_coeffs",
    "ARENA_COEFFS",
    "default_enemy_model",
    "production_cost",
]

DEFAULT_THRESHOLD = 20


class UnitType(str, Enum):
    HEAVY = "H"
    LIGHT = "L"
    RANGED = "R"


UNIT_TYPES = (UnitType.HEAVY, UnitType.LIGHT, UnitType.RANGED)
UNIT_COST = {UnitType.HEAVY: 3, UnitType.LIGHT: 2, UnitType.RANGED: 2}


class InvalidState(ValueError):
    pass


class CoefficientMode(str, Enum):
    """How ``need[A][B]`` enters the objective.

    ``counter_power``: one A unit is worth ``1 / need[A][B]`` B units.
    ``literal``: one A unit is worth ``need[A][B]`` B units, as the formula is printed.
    """

    COUNTER_POWER = "counter_power"
    LITERAL = "literal"


def _ut(x) -> UnitType:
    return x if isinstance(x, UnitType) else UnitType(x)


@dataclass(frozen=True)
class CounterMatrix:
    """``need[A][B]``: units of A needed to counter one unit of B."""

    need: Mapping[UnitType, Mapping[UnitType, float]]

    def __post_init__(self):
        need = {_ut(a): {_ut(b): float(v) for b, v in row.items()} for a, row in self.need.items()}
        for a in UNIT_TYPES:
            for b in UNIT_TYPES:
                if not need.get(a, {}).get(b, 0) > 0:
                    raise ValueError(f"need[{a.value}][{b.value}] must be positive")
        object.__setattr__(self, "need", need)

    def __getitem__(self, ab: tuple) -> float:
        a, b = ab
        return self.need[_ut(a)][_ut(b)]

    def coefficient(self, a, b, mode: CoefficientMode = CoefficientMode.COUNTER_POWER) -> float:
        v = self[a, b]
        return v if CoefficientMode(mode) is CoefficientMode.LITERAL else 1.0 / v

    def reciprocity_error(self) -> float:
        return max(abs(self[a, b] * self[b, a] - 1.0) for a in UNIT_TYPES for b in UNIT_TYPES)

    def to_json(self) -> dict:
        return {a.value: {b.value: self[a, b] for b in UNIT_TYPES} for a in UNIT_TYPES}

    @classmethod
    def from_json(cls, obj: Mapping) -> "CounterMatrix":
        return cls({a: dict(row) for a, row in obj.items()})


# Reference survivor ratios of 10-vs-10 heavy/light duels (480 / 1284 and
# 1284 / 480).  The other entries are the arena estimator's output with
# default stats, 200 games, 10 units and seed 7; a test keeps them in sync.
_REFERENCE_HL = 0.3738
_REFERENCE_LH = 2.675
_ARENA_ESTIMATE = {
    "H": {"H": 1.0, "L": 0.31281477336317853, "R": 1.7161016949152543},
    "L": {"H": 3.196779964221825, "L": 1.0, "R": 0.3520958083832335},
    "R": {"H": 0.582716049382716, "L": 2.8401360544217686, "R": 1.0},
}


ARENA_COEFFS = CounterMatrix(_ARENA_ESTIMATE)


def default_coeffs() -> CounterMatrix:
    need = {a: dict(row) for a, row in _ARENA_ESTIMATE.items()}
    need["H"]["L"] = _REFERENCE_HL
    need["L"]["H"] = _REFERENCE_LH
    return CounterMatrix(need)


@dataclass(frozen=True)
class ProductionState:
    our_units: Mapping[UnitType, int]
    stock: float
    observed_enemy: Mapping[UnitType, int] = field(default_factory=dict)
    tick: int = 0

    def __post_init__(self):
        ours = {t: int(self.our_units.get(t, self.our_units.get(t.value, 0))) for t in UNIT_TYPES}
        seen = {t: int(self.observed_enemy.get(t, self.observed_enemy.get(t.value, 0))) for t in UNIT_TYPES}
        if any(v < 0 for v in ours.values()) or any(v < 0 for v in seen.values()):
            raise InvalidState("unit counts must be non-negative")
        if self.stock < 0:
            raise InvalidState(f"stock must be non-negative, got {self.stock}")
        object.__setattr__(self, "our_units", ours)
        object.__setattr__(self, "observed_enemy", seen)

    def to_json(self) -> dict:
        return {
            "our_units": {t.value: n for t, n in self.our_units.items()},
            "stock": self.stock,
            "observed_enemy": {t.value: n for t, n in self.observed_enemy.items()},
            "tick": self.tick,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ProductionState":
        return cls(obj.get("our_units", {}), obj.get("stock", 0), obj.get("observed_enemy", {}), obj.get("tick", 0))


def plan_name(x: UnitType) -> str:
    return f"plan_{x.value}"


def assign_name(x: UnitType, y: UnitType) -> str:
    return f"assign_{x.value}{y.value}"


def enemy_name(x: UnitType) -> str:
    return f"enemy_{x.value}"


DECISION_NAMES = tuple(plan_name(x) for x in UNIT_TYPES) + tuple(
    assign_name(x, y) for x in UNIT_TYPES for y in UNIT_TYPES
)


@dataclass(frozen=True)
class ProductionDecision:
    plan: Mapping[UnitType, int]
    assign: Mapping[UnitType, Mapping[UnitType, int]]

    @classmethod
    def from_values(cls, values) -> "ProductionDecision":
        if isinstance(values, Decision):
            values = values.values
        v = dict(zip(DECISION_NAMES, values))
        return cls(
            {x: v[plan_name(x)] for x in UNIT_TYPES},
            {x: {y: v[assign_name(x, y)] for y in UNIT_TYPES} for x in UNIT_TYPES},
        )

    @classmethod
    def idle(cls, state: ProductionState) -> "ProductionDecision":
        """Produce nothing; every unit assigned against its own type."""
        return cls(dict(state.our_units),
                   {x: {y: (state.our_units[x] if x is y else 0) for y in UNIT_TYPES} for x in UNIT_TYPES})

    def values(self) -> tuple[int, ...]:
        return tuple(self.plan[x] for x in UNIT_TYPES) + tuple(
            self.assign[x][y] for x in UNIT_TYPES for y in UNIT_TYPES
        )

    def to_produce(self, state: ProductionState) -> dict[UnitType, int]:
        return {x: max(self.plan[x] - state.our_units[x], 0) for x in UNIT_TYPES}

    def to_json(self) -> dict:
        return {
            "plan": {x.value: self.plan[x] for x in UNIT_TYPES},
            "assign": {x.value: {y.value: self.assign[x][y] for y in UNIT_TYPES} for x in UNIT_TYPES},
        }


def production_cost(plan: Mapping[UnitType, int], our_units: Mapping[UnitType, int]) -> int:
    return sum(UNIT_COST[x] * (plan[x] - our_units[x]) for x in UNIT_TYPES)


def objective(values, enemy: Mapping[UnitType, int], coeffs: CounterMatrix,
              mode: CoefficientMode = CoefficientMode.COUNTER_POWER) -> float:
    """Sum over enemy types Y of ``min(1, sum_X c(X, Y) * assign_XY - enemy_Y)``."""
    d = values if isinstance(values, ProductionDecision) else ProductionDecision.from_values(values)
    total = 0.0
    for y in UNIT_TYPES:
        cover = sum(coeffs.coefficient(x, y, mode) * d.assign[x][y] for x in UNIT_TYPES)
        total += min(1.0, cover - enemy.get(y, enemy.get(y.value, 0)))
    return total


def default_enemy_model(threshold: int = DEFAULT_THRESHOLD) -> TickDistributionModel:
    """Enemy army prior.  Per type, a mixture: the enemy either builds few units
    of that type or commits to it, the count then growing about 0.15 per tick."""
    return TickDistributionModel.commit_mixture([t.value for t in UNIT_TYPES], threshold=threshold)


def build_instance(
    state: ProductionState,
    coeffs: CounterMatrix | None = None,
    enemy_dists: Mapping[UnitType, DiscreteDistribution] | None = None,
    phi: DeformationFunction = IDENTITY,
    k: int = DEFAULT_K,
    threshold: int = DEFAULT_THRESHOLD,
    mode: CoefficientMode = CoefficientMode.COUNTER_POWER,
) -> CopInstance:
    coeffs = coeffs or default_coeffs()
    ours = state.our_units
    if threshold < max(ours.values()):
        raise InvalidState(f"threshold {threshold} below current unit count {max(ours.values())}")
    if enemy_dists is None:
        model = default_enemy_model(threshold)
        enemy_dists = {t: model.distribution(t.value, state.tick) for t in UNIT_TYPES}
    enemy_dists = {_ut(t): d for t, d in enemy_dists.items()}
    if set(enemy_dists) != set(UNIT_TYPES):
        raise InvalidState("need one enemy distribution per unit type")

    dvars = [DecisionVar(name, 0, threshold) for name in DECISION_NAMES]
    svars = [
        StochasticVar(enemy_name(t), condition_at_least(enemy_dists[t], state.observed_enemy[t]))
        for t in UNIT_TYPES
    ]
    cons = [
        Constraint.eq([(1, assign_name(x, y)) for y in UNIT_TYPES] + [(-1, plan_name(x))], 0,
                      f"assign_sum_{x.value}")
        for x in UNIT_TYPES
    ]
    stock = state.stock
    rhs = stock + sum(UNIT_COST[x] * ours[x] for x in UNIT_TYPES)
    if isinstance(stock, float) and stock.is_integer():
        rhs = int(rhs)
    cons.append(Constraint.le([(UNIT_COST[x], plan_name(x)) for x in UNIT_TYPES], rhs, "resources"))
    cons += [Constraint.ge([(1, plan_name(x))], ours[x], f"keep_{x.value}") for x in UNIT_TYPES]

    targets = [
        Target(
            decision={assign_name(x, y): coeffs.coefficient(x, y, mode) for x in UNIT_TYPES},
            stochastic={enemy_name(y): -1.0},
            cap=1.0,
        )
        for y in UNIT_TYPES
    ]
    return CopInstance(dvars, svars, cons, CappedLinearObjective(targets), phi, k)


def load_state(path) -> tuple[ProductionState, dict]:
    """Read a production state file; returns the state and the raw JSON for extra options."""
    with open(path) as fh:
        obj = json.load(fh)
    return ProductionState.from_json(obj.get("state", obj)), obj
