"""Finite integer distributions, seeded sampling and observation conditioning.

Randomness comes from :class:`RngStream`, a thin wrapper over numpy's
counter-based Philox generator.  Streams are split deterministically with
``numpy.random.SeedSequence`` spawn keys, so ``RngStream(seed).child(i)`` is
the same stream on every platform and independent of ``child(j)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DiscreteDistribution",
    "StochasticVar",
    "RngStream",
    "SampleBatch",
    "sample",
    "sample_batch",
    "condition_at_least",
    "TickDistributionModel",
    "DEFAULT_K",
]

DEFAULT_K = 50
_MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiscreteDistribution:
    """Distribution over integers.  ``support`` holds ``(value, probability)``
    pairs with strictly increasing values and positive probabilities."""

    support: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.support:
            raise ValueError("empty support")
        values = [v for v, _ in self.support]
        probs = [p for _, p in self.support]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("support values must be strictly increasing")
        if any(p <= 0 for p in probs):
            raise ValueError("support probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > _MASS_TOLERANCE:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        object.__setattr__(self, "_values", np.asarray(values, dtype=np.int64))
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "DiscreteDistribution":
        """Merge duplicates, drop zero mass, sort and renormalize."""
        acc: dict[int, float] = {}
        for v, p in pairs:
            if int(v) != v:
                raise ValueError(f"non-integer support value {v!r}")
            if p < 0:
                raise ValueError(f"negative probability {p!r}")
            acc[int(v)] = acc.get(int(v), 0.0) + float(p)
        kept = sorted((v, p) for v, p in acc.items() if p > 0)
        mass = math.fsum(p for _, p in kept)
        if mass <= 0:
            raise ValueError("distribution has no mass")
        return cls(tuple((v, p / mass) for v, p in kept))

    @classmethod
    def point(cls, value: int) -> "DiscreteDistribution":
        return cls(((int(value), 1.0),))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "DiscreteDistribution":
        n = hi - lo + 1
        return cls.from_pairs((v, 1.0 / n) for v in range(lo, hi + 1))

    @property
    def values(self) -> list[int]:
        return [v for v, _ in self.support]

    def prob(self, value: int) -> float:
        return dict(self.support).get(value, 0.0)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.support)

    def draw(self, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms in [0, 1)."""
        idx = np.searchsorted(self._cdf, uniforms, side="right")
        return self._values[np.minimum(idx, len(self._values) - 1)]

    def to_json(self) -> dict:
        return {"support": [[v, p] for v, p in self.support]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "DiscreteDistribution":
        return cls.from_pairs((v, p) for v, p in obj["support"])


@dataclass(frozen=True)
class StochasticVar:
    name: str
    distribution: DiscreteDistribution


class RngStream:
    """Seeded Philox stream.  Single owner; split with :meth:`child` for concurrent use."""

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.spawn_key + tuple(keys))

    def uniforms(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in the closed interval [lo, hi]."""
        return self.generator.integers(lo, hi, size=size, endpoint=True)

    def random(self) -> float:
        return float(self.generator.random())

    def bits64(self) -> int:
        return int(self.generator.integers(0, 2**63 - 1, endpoint=True))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"


def sample(var: StochasticVar, rng: RngStream) -> int:
    return int(var.distribution.draw(rng.uniforms(1))[0])


@dataclass(frozen=True)
class SampleBatch:
    """``k`` joint samples; ``values[i, j]`` is the draw of ``names[j]`` in row ``i``."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64)
        if vals.ndim != 2 or vals.shape[1] != len(self.names):
            raise ValueError(f"batch shape {vals.shape} does not match {len(self.names)} variables")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def rows(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.values]


def sample_batch(vars: Sequence[StochasticVar], k: int = DEFAULT_K, rng: RngStream | None = None) -> SampleBatch:
    """Draw ``k`` independent joint samples; variables are mutually independent."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rng is None:
        rng = RngStream(0)
    u = rng.uniforms((k, len(vars)))
    cols = [v.distribution.draw(u[:, j]) for j, v in enumerate(vars)]
    values = np.stack(cols, axis=1) if cols else np.zeros((k, 0), dtype=np.int64)
    return SampleBatch(tuple(v.name for v in vars), values)


def condition_at_least(dist: DiscreteDistribution, observed: int) -> DiscreteDistribution:
    """Zero out values below ``observed`` and renormalize.

    Observations are ground truth: if no support value reaches ``observed``
    the result is the point mass at ``observed``.
    """
    if observed < 0:
        raise ValueError(f"observed count must be >= 0, got {observed}")
    kept = [(v, p) for v, p in dist.support if v >= observed]
    if len(kept) == len(dist.support):
        return dist
    if not kept:
        return DiscreteDistribution.point(observed)
    return DiscreteDistribution.from_pairs(kept)


_FAMILIES = ("poisson", "mixture", "uniform", "point", "table")


def _truncated_poisson(mean: float, lo: int, hi: int) -> DiscreteDistribution:
    if mean <= 0:
        return DiscreteDistribution.point(lo)
    logw = [v * math.log(mean) - mean - math.lgamma(v + 1) for v in range(lo, hi + 1)]
    top = max(logw)
    return DiscreteDistribution.from_pairs(
        (v, math.exp(w - top)) for v, w in zip(range(lo, hi + 1), logw)
    )


class TickDistributionModel:
    """Prior distributions of stochastic variables indexed by game tick.

    Stands in for statistics mined from replays.  Config layout::

        {"threshold": 20,
         "variables": {
            "L": [{"ticks": [0, 200], "family": "poisson", "mean": 0.5, "slope": 0.02},
                  {"ticks": [200, null], "family": "uniform", "lo": 2, "hi": 10}],
            "H": [{"family": "table", "support": [[0, 0.5], [1, 0.5]]}]}}

    Families: ``poisson`` (mean = mean + slope * (tick - start), truncated to
    [0, threshold]), ``mixture`` (``components``: list of poisson ranges with a
    ``weight`` each), ``uniform`` (lo..hi), ``point`` (value), ``table``
    (explicit support).
    A range with ``ticks`` omitted covers every tick; the first matching range wins.
    """

    def __init__(self, variables: Mapping[str, list[dict]], threshold: int = 20):
        self.threshold = int(threshold)
        self.variables = {name: list(ranges) for name, ranges in variables.items()}
        for name, ranges in self.variables.items():
            if not ranges:
                raise ValueError(f"no ranges for variable {name!r}")
            for r in ranges:
                if r.get("family", "poisson") not in _FAMILIES:
                    raise ValueError(f"{name}: unknown family {r.get('family')!r}")

    @classmethod
    def commit_mixture(cls, names: Iterable[str], commit_weight: float = 1 / 3,
                       low: tuple[float, float] = (0.3, 0.01), high: tuple[float, float] = (0.5, 0.15),
                       threshold: int = 20) -> "TickDistributionModel":
        """Per variable, a two-component Poisson mixture: with ``commit_weight``
        the count grows fast (``high`` = mean, slope), otherwise slowly (``low``)."""
        comps = [{"weight": 1 - commit_weight, "mean": low[0], "slope": low[1]},
                 {"weight": commit_weight, "mean": high[0], "slope": high[1]}]
        return cls({n: [{"family": "mixture", "components": [dict(c) for c in comps]}] for n in names},
                   threshold)

    @classmethod
    def linear_poisson(cls, names: Iterable[str], mean0: float = 0.5, slope: float = 0.02,
                       threshold: int = 20) -> "TickDistributionModel":
        ranges = [{"family": "poisson", "mean": mean0, "slope": slope}]
        return cls({n: [dict(r) for r in ranges] for n in names}, threshold)

    def distribution(self, name: str, tick: int) -> DiscreteDistribution:
        for r in self.variables[name]:
            start, stop = r.get("ticks", [0, None])
            start = start or 0
            if tick >= start and (stop is None or tick < stop):
                return self._build(r, tick - start)
        raise ValueError(f"no range of {name!r} covers tick {tick}")

    def _build(self, r: Mapping, dt: int) -> DiscreteDistribution:
        family = r.get("family", "poisson")
        if family == "poisson":
            mean = float(r.get("mean", 0.0)) + float(r.get("slope", 0.0)) * dt
            return _truncated_poisson(mean, 0, self.threshold)
        if family == "mixture":
            acc: dict[int, float] = {}
            total_w = math.fsum(float(c["weight"]) for c in r["components"])
            for comp in r["components"]:
                w = float(comp["weight"]) / total_w
                for v, p in self._build({**comp, "family": "poisson"}, dt).support:
                    acc[v] = acc.get(v, 0.0) + w * p
            return DiscreteDistribution.from_pairs(acc.items())
        if family == "uniform":
            return DiscreteDistribution.uniform(int(r["lo"]), int(r["hi"]))
        if family == "point":
            return DiscreteDistribution.point(int(r["value"]))
        return DiscreteDistribution.from_pairs((v, p) for v, p in r["support"])

    def to_json(self) -> dict:
        return {"threshold": self.threshold, "variables": self.variables}

    @classmethod
    def from_json(cls, obj: Mapping) -> "TickDistributionModel":
        return cls(obj["variables"], obj.get("threshold", 20))

    @classmethod
    def load(cls, path) -> "TickDistributionModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))
