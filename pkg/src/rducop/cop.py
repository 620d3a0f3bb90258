"""Constrained optimization problems with stochastic objectives.

A :class:`CopInstance` couples integer decision variables, linear constraints
over them, independent stochastic variables and an objective mixing both.
Decisions are ranked by the RDU of their sampled objective values: every
sample in a batch carries probability ``1/k`` and the sorted values go
through the rank-dependent sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .decision_core import IDENTITY, DeformationFunction, deform
from .stochastic import (
    DEFAULT_K,
    DiscreteDistribution,
    RngStream,
    SampleBatch,
    StochasticVar,
    sample_batch,
)

__all__ = [
    "UnknownVariable",
    "InfeasibleDecision",
    "DecisionVar",
    "Constraint",
    "Sense",
    "StochasticObjective",
    "CappedLinearObjective",
    "Target",
    "CallableObjective",
    "CopInstance",
    "Decision",
    "FeasibilityReport",
    "PreferenceEstimate",
    "Ordering",
    "is_feasible",
    "estimate_preference",
    "compare",
    "tail_weights",
    "rank_rows",
    "best_row",
]

FLOAT_TOL = 1e-9


class UnknownVariable(KeyError):
    pass


class InfeasibleDecision(ValueError):
    pass


@dataclass(frozen=True)
class DecisionVar:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise ValueError(f"{self.name}: domain bounds must be integers")
        if self.lo > self.hi:
            raise ValueError(f"{self.name}: empty domain [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Constraint:
    """``sum(coef * var) == constant`` (kind ``eq``) or ``<= constant`` (kind ``le``)."""

    kind: str
    terms: tuple[tuple[float, str], ...]
    constant: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("eq", "le"):
            raise ValueError(f"constraint kind must be 'eq' or 'le', got {self.kind!r}")
        object.__setattr__(self, "terms", tuple((c, str(v)) for c, v in self.terms))

    @classmethod
    def eq(cls, terms, constant, name="") -> "Constraint":
        return cls("eq", tuple(terms), constant, name)

    @classmethod
    def le(cls, terms, constant, name="") -> "Constraint":
        return cls("le", tuple(terms), constant, name)

    @classmethod
    def ge(cls, terms, constant, name="") -> "Constraint":
        return cls("le", tuple((-c, v) for c, v in terms), -constant, name)

    @property
    def is_integral(self) -> bool:
        return all(isinstance(c, int) for c, _ in self.terms) and isinstance(self.constant, int)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "terms": [[c, v] for c, v in self.terms], "rhs": self.constant}
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Constraint":
        kind = obj.get("kind", "le")
        terms = [(c, v) for c, v in obj["terms"]]
        rhs = obj.get("rhs", obj.get("constant", 0))
        name = obj.get("name", "")
        if kind == "ge":
            return cls.ge(terms, rhs, name)
        return cls(kind, tuple(terms), rhs, name)


class Sense(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class StochasticObjective:
    """Objective ``f(decision, stochastic) -> float`` with an optimization sense.

    Subclasses implement :meth:`compile`, returning a function that maps an
    ``(N, n)`` array of decisions and a ``(k, m)`` sample array to the
    ``(N, k)`` objective values.
    """

    sense: Sense = Sense.MAXIMIZE

    def compile(self, decision_names: Sequence[str], stochastic_names: Sequence[str]):
        raise NotImplementedError

    def to_json(self) -> dict:
        raise TypeError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True)
class Target:
    """One capped linear term ``min(cap, a . decision + b . stochastic + constant)``."""

    decision: Mapping[str, float] = field(default_factory=dict)
    stochastic: Mapping[str, float] = field(default_factory=dict)
    constant: float = 0.0
    cap: float | None = None


class CappedLinearObjective(StochasticObjective):
    """Sum of capped linear targets; covers the unit-production objective."""

    def __init__(self, targets: Iterable[Target], sense: Sense | str = Sense.MAXIMIZE):
        self.targets = tuple(targets)
        self.sense = Sense(sense)

    def compile(self, decision_names, stochastic_names):
        di = {n: i for i, n in enumerate(decision_names)}
        si = {n: i for i, n in enumerate(stochastic_names)}
        t = len(self.targets)
        a = np.zeros((t, len(decision_names)))
        b = np.zeros((t, len(stochastic_names)))
        c = np.zeros(t)
        cap = np.full(t, np.inf)
        for row, tg in enumerate(self.targets):
            for name, coef in tg.decision.items():
                if name not in di:
                    raise UnknownVariable(name)
                a[row, di[name]] += coef
            for name, coef in tg.stochastic.items():
                if name not in si:
                    raise UnknownVariable(name)
                b[row, si[name]] += coef
            c[row] = tg.constant
            if tg.cap is not None:
                cap[row] = tg.cap
        bt = b.T.copy()

        def evaluate(points: np.ndarray, samples: np.ndarray) -> np.ndarray:
            # elementwise sum rather than matmul: the result for a row must not
            # depend on how many rows are scored together
            fixed = (points[:, None, :] * a[None, :, :]).sum(axis=2) + c
            return np.minimum((samples @ bt)[None, :, :] + fixed[:, None, :], cap).sum(axis=2)

        return evaluate

    def to_json(self) -> dict:
        return {
            "sense": self.sense.value,
            "targets": [
                {"decision": dict(t.decision), "stochastic": dict(t.stochastic),
                 "constant": t.constant, **({"cap": t.cap} if t.cap is not None else {})}
                for t in self.targets
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CappedLinearObjective":
        targets = [
            Target(t.get("decision", {}), t.get("stochastic", {}), t.get("constant", 0.0), t.get("cap"))
            for t in obj["targets"]
        ]
        return cls(targets, obj.get("sense", "maximize"))


class CallableObjective(StochasticObjective):
    """Wrap ``fn(decision_tuple, stochastic_tuple) -> float``; evaluated row by row."""

    def __init__(self, fn: Callable[[tuple, tuple], float], sense: Sense | str = Sense.MAXIMIZE):
        self.fn = fn
        self.sense = Sense(sense)

    def compile(self, decision_names, stochastic_names):
        fn = self.fn

        def evaluate(points, samples):
            rows = [tuple(int(s) for s in row) for row in samples]
            return np.array([[fn(tuple(int(v) for v in p), r) for r in rows] for p in points], dtype=float)

        return evaluate


@dataclass(frozen=True)
class Decision:
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))

    def as_dict(self, inst: "CopInstance") -> dict[str, int]:
        return dict(zip(inst.decision_names, self.values))


class CopInstance:
    """Decision variables, stochastic variables, linear constraints, objective, phi and k."""

    def __init__(
        self,
        decision_vars: Sequence[DecisionVar],
        stochastic_vars: Sequence[StochasticVar],
        constraints: Sequence[Constraint],
        objective: StochasticObjective,
        phi: DeformationFunction = IDENTITY,
        k: int = DEFAULT_K,
    ):
        self.decision_vars = tuple(decision_vars)
        self.stochastic_vars = tuple(stochastic_vars)
        self.constraints = tuple(constraints)
        self.objective = objective
        self.phi = phi
        self.k = int(k)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.decision_names = tuple(v.name for v in self.decision_vars)
        self.stochastic_names = tuple(v.name for v in self.stochastic_vars)
        names = self.decision_names + self.stochastic_names
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique across decision and stochastic variables")
        index = {n: i for i, n in enumerate(self.decision_names)}
        self._index = index
        # constraints compiled to index form for the solver's inner loop
        compiled = []
        for con in self.constraints:
            for _, v in con.terms:
                if v not in index:
                    raise UnknownVariable(f"constraint {con.name or con.terms!r} references {v!r}")
            compiled.append((con.kind == "eq", tuple((index[v], c) for c, v in con.terms),
                             con.constant, con.is_integral))
        self._compiled = tuple(compiled)
        self._evaluate = objective.compile(self.decision_names, self.stochastic_names)
        self.maximize = objective.sense is Sense.MAXIMIZE

    @property
    def n(self) -> int:
        return len(self.decision_vars)

    def space_size(self) -> int:
        return math.prod(v.size for v in self.decision_vars)

    def decision(self, values: Sequence[int] | Mapping[str, int] | Decision) -> Decision:
        if isinstance(values, Decision):
            values = values.values
        if isinstance(values, Mapping):
            unknown = set(values) - set(self.decision_names)
            if unknown:
                raise UnknownVariable(", ".join(sorted(unknown)))
            missing = [n for n in self.decision_names if n not in values]
            if missing:
                raise ValueError(f"decision misses variables {missing}")
            values = [values[n] for n in self.decision_names]
        values = tuple(values)
        if len(values) != self.n:
            raise ValueError(f"decision has {len(values)} values, instance has {self.n} variables")
        for v, var in zip(values, self.decision_vars):
            if int(v) != v or not var.lo <= v <= var.hi:
                raise ValueError(f"{var.name}={v} outside domain [{var.lo}, {var.hi}]")
        return Decision(values)

    def sample_batch(self, rng: RngStream, k: int | None = None) -> SampleBatch:
        return sample_batch(self.stochastic_vars, self.k if k is None else k, rng)

    def evaluate(self, values: Sequence[int], batch: SampleBatch) -> np.ndarray:
        """Objective value of ``values`` under every row of ``batch``."""
        return self._evaluate(np.asarray([values], dtype=float), batch.values)[0]

    def evaluate_many(self, points: np.ndarray, batch: SampleBatch) -> np.ndarray:
        return self._evaluate(np.asarray(points, dtype=float), batch.values)

    def violations(self, values: Sequence[int]) -> list[float]:
        out = []
        for is_eq, terms, rhs, integral in self._compiled:
            lhs = sum(c * values[i] for i, c in terms)
            diff = lhs - rhs
            out.append(diff if is_eq else max(diff, 0))
        return out

    def total_violation(self, values: Sequence[int]) -> float:
        total = 0
        for is_eq, terms, rhs, integral in self._compiled:
            diff = sum(c * values[i] for i, c in terms) - rhs
            if is_eq:
                total += abs(diff)
            elif diff > 0:
                total += diff
        return total

    def feasible(self, values: Sequence[int]) -> bool:
        for is_eq, terms, rhs, integral in self._compiled:
            diff = sum(c * values[i] for i, c in terms) - rhs
            tol = 0 if integral else FLOAT_TOL
            if (abs(diff) if is_eq else diff) > tol:
                return False
        return True

    def to_json(self) -> dict:
        out = {
            "decision_vars": [{"name": v.name, "lo": v.lo, "hi": v.hi} for v in self.decision_vars],
            "stochastic_vars": [{"name": v.name, **v.distribution.to_json()} for v in self.stochastic_vars],
            "constraints": [c.to_json() for c in self.constraints],
            "objective": self.objective.to_json(),
            "phi": self.phi.to_json(),
            "k": self.k,
        }
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "CopInstance":
        dvars = [DecisionVar(d["name"], int(d["lo"]), int(d["hi"])) for d in obj["decision_vars"]]
        svars = [StochasticVar(s["name"], DiscreteDistribution.from_json(s)) for s in obj.get("stochastic_vars", [])]
        cons = [Constraint.from_json(c) for c in obj.get("constraints", [])]
        objective = CappedLinearObjective.from_json(obj["objective"])
        phi = DeformationFunction.from_json(obj.get("phi"))
        return cls(dvars, svars, cons, objective, phi, obj.get("k", DEFAULT_K))

    @classmethod
    def load(cls, path) -> "CopInstance":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint violation: signed ``lhs - rhs`` for equalities, ``max(0, lhs - rhs)`` otherwise."""

    feasible: bool
    violations: tuple[float, ...]

    def __bool__(self) -> bool:
        return self.feasible

    @property
    def total(self) -> float:
        return sum(abs(v) for v in self.violations)


def is_feasible(inst: CopInstance, d: Decision | Sequence[int] | Mapping[str, int]) -> FeasibilityReport:
    values = inst.decision(d).values
    return FeasibilityReport(inst.feasible(values), tuple(inst.violations(values)))


@lru_cache(maxsize=256)
def tail_weights(phi: DeformationFunction, k: int) -> np.ndarray:
    """``phi((k - j) / k)`` for j = 1..k-1: deformed mass of the top ``k - j`` samples."""
    w = np.array([deform(phi, (k - j) / k) for j in range(1, k)], dtype=float)
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class PreferenceEstimate:
    """Estimated RDU of a decision, in objective units.

    ``sample_objectives`` holds the ``k`` objective values sorted ascending.
    For minimization the estimator runs on ``-f`` and ``rdu_value`` is negated
    back, so a smaller ``rdu_value`` is preferred.
    """

    rdu_value: float
    sample_objectives: tuple[float, ...]
    maximize: bool = True

    @property
    def key(self) -> tuple:
        """Ordering key: larger is preferred.  Ties on RDU fall back to the
        sorted utility vector, compared lexicographically."""
        if self.maximize:
            return (self.rdu_value, self.sample_objectives)
        return (-self.rdu_value, tuple(-x for x in reversed(self.sample_objectives)))


def rank_rows(inst: CopInstance, points: np.ndarray, batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    """RDU of each decision row on ``batch``, in utility units (``-f`` when minimizing).

    Returns ``(rdu, utils)`` with ``utils`` the sorted per-sample utilities.
    Every ranking path goes through here so that equal inputs give bit-equal values.
    """
    x = inst.evaluate_many(points, batch)
    utils = np.sort(x if inst.maximize else -x, axis=1)
    k = utils.shape[1]
    if k == 1:
        return utils[:, 0].copy(), utils
    value = utils[:, 0] + (np.diff(utils, axis=1) * tail_weights(inst.phi, k)).sum(axis=1)
    # rounding in the sum must not push the value outside [min, max]
    value = np.clip(value, utils[:, 0], utils[:, -1])
    return value, utils


def best_row(rdu: np.ndarray, utils: np.ndarray) -> int:
    """Index of the preferred row: highest RDU, then lexicographically largest
    sorted utilities, then the first such row."""
    top = np.flatnonzero(rdu == rdu.max())
    if len(top) == 1:
        return int(top[0])
    sub = utils[top]
    winner = sub[np.lexsort(sub.T[::-1])[-1]]
    return int(top[np.flatnonzero((sub == winner).all(axis=1))[0]])


def _make_estimate(inst: CopInstance, rdu: float, utils: np.ndarray) -> PreferenceEstimate:
    if inst.maximize:
        return PreferenceEstimate(float(rdu), tuple(utils.tolist()), True)
    return PreferenceEstimate(-float(rdu), tuple((-utils[::-1]).tolist()), False)


def _estimate(inst: CopInstance, values: Sequence[int], batch: SampleBatch) -> PreferenceEstimate:
    rdu, utils = rank_rows(inst, np.asarray([values]), batch)
    return _make_estimate(inst, rdu[0], utils[0])


def estimate_preference(inst: CopInstance, d, batch: SampleBatch) -> PreferenceEstimate:
    decision = inst.decision(d)
    if batch.names != inst.stochastic_names:
        raise ValueError(f"batch variables {batch.names} do not match instance {inst.stochastic_names}")
    if not inst.feasible(decision.values):
        raise InfeasibleDecision(f"decision {decision.as_dict(inst)} violates constraints")
    return _estimate(inst, decision.values, batch)


class Ordering(IntEnum):
    SECOND_PREFERRED = -1
    EQUAL = 0
    FIRST_PREFERRED = 1


def compare(inst: CopInstance, d1, d2, batch: SampleBatch) -> Ordering:
    """Order two decisions on the same batch (common random numbers)."""
    k1 = estimate_preference(inst, d1, batch).key
    k2 = estimate_preference(inst, d2, batch).key
    if k1 > k2:
        return Ordering.FIRST_PREFERRED
    if k1 < k2:
        return Ordering.SECOND_PREFERRED
    return Ordering.EQUAL
