"""Lotteries, probability deformation functions and Rank Dependent Utility.

A lottery is a finite list of ``(consequence, probability)`` pairs.  RDU ranks
consequences from worst to best and weights each utility gain by the deformed
probability of reaching at least that consequence::

    RDU(l) = u(x1) + sum_{i>=2} (u(xi) - u(x(i-1))) * phi(p_i + ... + p_n)

With ``phi`` the identity this collapses to Expected Utility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "NegativeProbability",
    "ProbabilityMassInvalid",
    "Lottery",
    "DeformationKind",
    "DeformationFunction",
    "UtilityFunction",
    "IDENTITY",
    "make_lottery",
    "deform",
    "rdu",
    "rdu_sorted",
    "expected_utility",
    "parse_phi",
    "load_lottery",
]

MASS_TOLERANCE = 1e-6


class DomainError(ValueError):
    """Probability argument outside [0, 1]."""


class NegativeProbability(ValueError):
    pass


class ProbabilityMassInvalid(ValueError):
    pass


@dataclass(frozen=True)
class Lottery:
    """Canonical lottery: consequences strictly increasing, probabilities > 0 summing to 1.

    Build through :func:`make_lottery`; the constructor does not canonicalize.
    """

    entries: tuple[tuple[float, float], ...]

    @property
    def consequences(self) -> list[float]:
        return [x for x, _ in self.entries]

    @property
    def probabilities(self) -> list[float]:
        return [p for _, p in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> list[dict]:
        return [{"x": x, "p": p} for x, p in self.entries]


def make_lottery(raw: Iterable[tuple[float, float]]) -> Lottery:
    """Canonicalize ``raw`` pairs: sort, merge equal consequences, drop zero mass, renormalize."""
    merged: dict[float, float] = {}
    total = 0.0
    for x, p in raw:
        x, p = float(x), float(p)
        if not math.isfinite(x) or not math.isfinite(p):
            raise ValueError(f"non-finite lottery entry ({x}, {p})")
        if p < 0:
            raise NegativeProbability(f"probability {p} for consequence {x}")
        merged[x] = merged.get(x, 0.0) + p
        total += p
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise ProbabilityMassInvalid(f"probabilities sum to {total!r}, expected 1")
    kept = sorted((x, p) for x, p in merged.items() if p > 0)
    mass = math.fsum(p for _, p in kept)
    return Lottery(tuple((x, p / mass) for x, p in kept))


class DeformationKind(str, Enum):
    IDENTITY = "identity"
    LOGISTIC_PESSIMISTIC = "logistic"
    LOGIT_OPTIMISTIC = "logit"
    CUSTOM = "custom"


@dataclass(frozen=True)
class DeformationFunction:
    """Monotone map [0, 1] -> [0, 1] applied to tail probabilities.

    ``logistic``: ``1 / (1 + exp(-lam * (2p - shift)))`` (a sigmoid, pessimistic for shift > 1).
    ``logit``: ``1 + log(p / (2 - p)) / lam`` (concave, optimistic); defined as 0 at p = 0.
    ``custom``: piecewise-linear interpolation of the table ``(xs, ys)``.

    Outputs are clamped into [0, 1].  Endpoints are not renormalized, so the
    logistic gives phi(0) ~ 2.3e-6 and phi(1) ~ 0.9991 with the default parameters.
    """

    kind: DeformationKind = DeformationKind.IDENTITY
    lam: float = 10.0
    shift: float = 1.3
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", DeformationKind(self.kind))
        if self.kind in (DeformationKind.LOGISTIC_PESSIMISTIC, DeformationKind.LOGIT_OPTIMISTIC):
            if not self.lam > 0:
                raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.kind is DeformationKind.CUSTOM:
            xs, ys = tuple(map(float, self.xs)), tuple(map(float, self.ys))
            if len(xs) < 2 or len(xs) != len(ys):
                raise ValueError("custom deformation needs >= 2 matching (x, y) points")
            if xs[0] != 0.0 or xs[-1] != 1.0 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("custom xs must increase strictly from 0 to 1")
            if any(b < a for a, b in zip(ys, ys[1:])) or ys[0] < 0 or ys[-1] > 1:
                raise ValueError("custom ys must be non-decreasing within [0, 1]")
            object.__setattr__(self, "xs", xs)
            object.__setattr__(self, "ys", ys)

    @classmethod
    def identity(cls) -> "DeformationFunction":
        return cls(DeformationKind.IDENTITY)

    @classmethod
    def logistic(cls, lam: float = 10.0, shift: float = 1.3) -> "DeformationFunction":
        return cls(DeformationKind.LOGISTIC_PESSIMISTIC, lam=lam, shift=shift)

    @classmethod
    def logit(cls, lam: float = 10.0) -> "DeformationFunction":
        return cls(DeformationKind.LOGIT_OPTIMISTIC, lam=lam)

    @classmethod
    def custom(cls, xs: Sequence[float], ys: Sequence[float]) -> "DeformationFunction":
        return cls(DeformationKind.CUSTOM, xs=tuple(xs), ys=tuple(ys))

    def __call__(self, p: float) -> float:
        return deform(self, p)

    def describe(self) -> str:
        if self.kind is DeformationKind.LOGISTIC_PESSIMISTIC:
            return f"logistic:{self.lam:g}:{self.shift:g}"
        if self.kind is DeformationKind.LOGIT_OPTIMISTIC:
            return f"logit:{self.lam:g}"
        if self.kind is DeformationKind.CUSTOM:
            pts = ",".join(f"{x:g}/{y:g}" for x, y in zip(self.xs, self.ys))
            return f"custom:{pts}"
        return "identity"

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.kind is DeformationKind.LOGISTIC_PESSIMISTIC:
            out.update(**{"lambda": self.lam, "shift": self.shift})
        elif self.kind is DeformationKind.LOGIT_OPTIMISTIC:
            out["lambda"] = self.lam
        elif self.kind is DeformationKind.CUSTOM:
            out.update(xs=list(self.xs), ys=list(self.ys))
        return out

    @classmethod
    def from_json(cls, obj: dict | str | None) -> "DeformationFunction":
        if obj is None:
            return cls.identity()
        if isinstance(obj, str):
            return parse_phi(obj)
        kind = DeformationKind(obj.get("kind", "identity"))
        return cls(
            kind,
            lam=float(obj.get("lambda", 10.0)),
            shift=float(obj.get("shift", 1.3)),
            xs=tuple(obj.get("xs", ())),
            ys=tuple(obj.get("ys", ())),
        )


IDENTITY = DeformationFunction.identity()


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def deform(phi: DeformationFunction, p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p!r} outside [0, 1]")
    kind = phi.kind
    if kind is DeformationKind.IDENTITY:
        return p
    if kind is DeformationKind.LOGISTIC_PESSIMISTIC:
        z = -phi.lam * (2.0 * p - phi.shift)
        # exp overflow only for absurd lambda; the limit is 0
        if z > 700:
            return 0.0
        return _clamp01(1.0 / (1.0 + math.exp(z)))
    if kind is DeformationKind.LOGIT_OPTIMISTIC:
        if p == 0.0:
            return 0.0
        return _clamp01(1.0 + math.log(p / (2.0 - p)) / phi.lam)
    return _clamp01(float(np.interp(p, phi.xs, phi.ys)))


@dataclass(frozen=True)
class UtilityFunction:
    """Utility over consequences.  Only the identity is shipped."""

    kind: str = "identity"
    fn: Callable[[float], float] | None = field(default=None, compare=False)

    def __call__(self, x: float) -> float:
        if self.fn is not None:
            return self.fn(x)
        return x


IDENTITY_UTILITY = UtilityFunction()


def rdu_sorted(values: Sequence[float], tails: Sequence[float], phi: DeformationFunction) -> float:
    """RDU of ascending utilities ``values`` where ``tails[i]`` is P(outcome >= values[i])."""
    total = values[0]
    for i in range(1, len(values)):
        gap = values[i] - values[i - 1]
        if gap:
            total += gap * deform(phi, tails[i])
    return total


def rdu(
    l: Lottery,
    u: UtilityFunction = IDENTITY_UTILITY,
    phi: DeformationFunction = IDENTITY,
) -> float:
    if not l.entries:
        raise ValueError("empty lottery")
    utils = [u(x) for x, _ in l.entries]
    if any(b < a for a, b in zip(utils, utils[1:])):
        raise ValueError("utility must be non-decreasing over the lottery's consequences")
    # backward accumulation of tail mass
    n = len(l.entries)
    tails = [0.0] * n
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += l.entries[i][1]
        tails[i] = min(acc, 1.0)
    return rdu_sorted(utils, tails, phi)


def expected_utility(l: Lottery, u: UtilityFunction = IDENTITY_UTILITY) -> float:
    return math.fsum(p * u(x) for x, p in l.entries)


def parse_phi(spec: str) -> DeformationFunction:
    """Parse ``identity``, ``logistic[:lam[:shift]]``, ``logit[:lam]`` or ``custom:x/y,x/y,...``."""
    name, _, rest = spec.strip().partition(":")
    name = name.lower()
    try:
        if name in ("identity", "id", "eu"):
            if rest:
                raise ValueError("identity takes no parameters")
            return DeformationFunction.identity()
        if name in ("logistic", "pessimistic"):
            parts = [float(v) for v in rest.split(":")] if rest else []
            if len(parts) > 2:
                raise ValueError("logistic takes at most lambda and shift")
            return DeformationFunction.logistic(*parts)
        if name in ("logit", "optimistic"):
            parts = [float(v) for v in rest.split(":")] if rest else []
            if len(parts) > 1:
                raise ValueError("logit takes at most lambda")
            return DeformationFunction.logit(*parts)
        if name == "custom":
            pts = [pt.split("/") for pt in rest.split(",") if pt]
            return DeformationFunction.custom([float(x) for x, _ in pts], [float(y) for _, y in pts])
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad deformation spec {spec!r}: {exc}") from None
    raise ValueError(f"unknown deformation kind {name!r}")


def load_lottery(path) -> Lottery:
    """Read a JSON array of ``{"x": ..., "p": ...}`` objects."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not data:
        raise ValueError("lottery file must hold a non-empty JSON array")
    raw = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "x" not in item or "p" not in item:
            raise ValueError(f"entry {i}: expected an object with keys 'x' and 'p'")
        raw.append((item["x"], item["p"]))
    return make_lottery(raw)
