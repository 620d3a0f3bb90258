"""Budgeted anytime local search over feasible decisions, and an exhaustive oracle.

Search alternates two phases from a random in-domain assignment:

1. Repair: steepest descent on total constraint violation using single-variable
   +/-1 moves, with a tabu list on recently moved variables and a restart
   after ``restart_interval`` iterations without improvement.
2. Climb: steepest ascent on the preference over the feasible neighbors
   reached by changing one or two variables by +/-1.  When the instance has
   equality constraints the neighborhood also holds the +/-1 moves on three
   or four variables that leave every equality unchanged, so feasibility can
   be kept while trading units between coupled variables.  A plateau step
   (best neighbor equal to the current point) is taken with probability 0.5;
   a strict local optimum, or ``restart_interval`` plateau steps in a row,
   triggers a restart into phase 1 from a random assignment.

One iteration is one neighborhood scan in either phase.

Preferences come from one shared sample batch, so every candidate is judged
on the same scenarios; a whole neighborhood is scored in one vectorized pass.
"""

from __future__ import annotations

import itertools
import logging
import random
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .cop import FLOAT_TOL, CopInstance, Decision, PreferenceEstimate, _make_estimate, best_row, rank_rows
from .stochastic import SampleBatch

__all__ = [
    "SolverConfig",
    "SolveResult",
    "InstanceTooLarge",
    "solve",
    "solve_exhaustive",
    "EXHAUSTIVE_LIMIT",
]

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10**7
DEFAULT_BUDGET_MS = 100.0
# compound moves are enumerated only for instances up to this many variables
COMPOUND_MAX_VARS = 24
# neighborhood scans are memoized per point when the space is this small
SCAN_CACHE_SPACE = 10**6
_CHUNK = 1 << 14


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Exactly one of ``budget_ms`` (wall clock) or ``budget_iters`` bounds the search."""

    budget_ms: float | None = DEFAULT_BUDGET_MS
    budget_iters: int | None = None
    restart_interval: int = 200
    tabu_tenure: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.budget_iters is not None:
            object.__setattr__(self, "budget_ms", None)
            if self.budget_iters <= 0:
                raise ValueError("iteration budget must be positive")
        elif self.budget_ms is None or self.budget_ms <= 0:
            raise ValueError("a positive budget is required")
        if self.restart_interval < 1 or self.tabu_tenure < 0:
            raise ValueError("restart_interval must be >= 1 and tabu_tenure >= 0")

    @classmethod
    def iterations(cls, n: int, **kw) -> "SolverConfig":
        return cls(budget_ms=None, budget_iters=n, **kw)


@dataclass
class SolveResult:
    best_decision: Decision | None
    best_preference: PreferenceEstimate | None
    feasible_found: bool
    iterations: int = 0
    evaluations: int = 0
    history: list[tuple[int, float]] = field(default_factory=list, repr=False)

    def to_json(self, inst: CopInstance) -> dict:
        out = {"feasible_found": self.feasible_found, "iterations": self.iterations,
               "evaluations": self.evaluations}
        if self.feasible_found:
            out["decision"] = self.best_decision.as_dict(inst)
            out["rdu"] = self.best_preference.rdu_value
        return out


def _better(r1: float, u1: np.ndarray, r2: float, u2: np.ndarray) -> bool:
    """Strict preference of (rdu, sorted utilities) pair 1 over pair 2."""
    if r1 != r2:
        return r1 > r2
    diff = np.flatnonzero(u1 != u2)
    return bool(len(diff)) and bool(u1[diff[0]] > u2[diff[0]])


def _constraint_arrays(inst: CopInstance):
    cons = inst._compiled
    a = np.zeros((len(cons), inst.n))
    b = np.zeros(len(cons))
    for row, (_, terms, rhs, _) in enumerate(cons):
        for i, c in terms:
            a[row, i] += c
        b[row] = rhs
    eq = np.array([c[0] for c in cons], dtype=bool)
    tol = np.array([0.0 if c[3] else FLOAT_TOL for c in cons])
    return a, b, eq, tol


def _feasible_rows(points: np.ndarray, a, b, eq, tol) -> np.ndarray:
    r = points @ a.T - b
    return (np.where(eq, np.abs(r), r) <= tol).all(axis=1)


@lru_cache(maxsize=64)
def _move_set(n: int, a_eq_bytes: bytes, n_eq: int) -> np.ndarray:
    """Single and paired +/-1 moves, plus the +/-1 moves on three or four
    variables that lie in the null space of the equality rows."""
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    eye = np.eye(n, dtype=np.int64)
    pairs = [eye[i] * di + eye[j] * dj for i, j in itertools.combinations(range(n), 2)
             for di in (-1, 1) for dj in (-1, 1)]
    moves = [np.concatenate([-eye, eye]), np.array(pairs, dtype=np.int64).reshape(-1, n)]
    if n_eq and n <= COMPOUND_MAX_VARS:
        a_eq = np.frombuffer(a_eq_bytes).reshape(n_eq, n)
        for size in (3, 4):
            signs = np.array(list(itertools.product((-1, 1), repeat=size)), dtype=np.int64)
            for idx in itertools.combinations(range(n), size):
                keep = ~np.abs(signs @ a_eq[:, idx].T).any(axis=1)
                if keep.any():
                    block = np.zeros((int(keep.sum()), n), dtype=np.int64)
                    block[:, list(idx)] = signs[keep]
                    moves.append(block)
    out = np.concatenate(moves)
    out.setflags(write=False)
    return out


class _Search:
    def __init__(self, inst: CopInstance, cfg: SolverConfig, batch: SampleBatch):
        self.inst = inst
        self.cfg = cfg
        self.batch = batch
        self.rng = random.Random(cfg.seed)
        n = inst.n
        self.lo = np.array([v.lo for v in inst.decision_vars], dtype=np.int64)
        self.hi = np.array([v.hi for v in inst.decision_vars], dtype=np.int64)
        self.a, self.b, self.eq, self.tol = _constraint_arrays(inst)
        self.best: np.ndarray | None = None
        self.best_rdu = 0.0
        self.best_utils: np.ndarray | None = None
        self.history: list[tuple[int, float]] = []
        self.iters = 0
        self.evaluations = 0
        if cfg.budget_iters is not None:
            self.deadline = None
            self.max_iters = cfg.budget_iters
        else:
            self.deadline = time.perf_counter() + cfg.budget_ms / 1000.0
            self.max_iters = None
        eye = np.eye(n, dtype=np.int64)
        self.single = np.concatenate([-eye, eye]) if n else np.zeros((0, 0), dtype=np.int64)
        a_eq = np.ascontiguousarray(self.a[self.eq])
        self.moves = _move_set(n, a_eq.tobytes(), len(a_eq))
        small = inst.space_size() <= SCAN_CACHE_SPACE
        self.scans: dict[bytes, tuple] | None = {} if small else None
        self.points: dict[bytes, tuple] | None = {} if small else None

    def exhausted(self) -> bool:
        if self.max_iters is not None:
            return self.iters >= self.max_iters
        return time.perf_counter() >= self.deadline

    def _violation(self, points: np.ndarray) -> np.ndarray:
        r = points @ self.a.T - self.b
        return np.where(self.eq, np.abs(r), np.maximum(r, 0.0)).sum(axis=1)

    def _feasible(self, points: np.ndarray) -> np.ndarray:
        return _feasible_rows(points, self.a, self.b, self.eq, self.tol)

    def _neighbors(self, x: np.ndarray, moves: np.ndarray) -> np.ndarray:
        pts = x + moves
        return pts[((pts >= self.lo) & (pts <= self.hi)).all(axis=1)]

    def score(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rdu, utils = rank_rows(self.inst, pts, self.batch)
        self.evaluations += len(pts)
        i = best_row(rdu, utils)
        if self.best is None or _better(rdu[i], utils[i], self.best_rdu, self.best_utils):
            self.best, self.best_rdu, self.best_utils = pts[i].copy(), float(rdu[i]), utils[i].copy()
            self.history.append((self.iters, float(rdu[i])))
        return rdu, utils

    def random_point(self) -> np.ndarray:
        return np.array([self.rng.randint(lo, hi) for lo, hi in zip(self.lo.tolist(), self.hi.tolist())],
                        dtype=np.int64)

    def repair(self, x: np.ndarray) -> np.ndarray | None:
        """Phase 1.  Returns a feasible point or None when the budget runs out."""
        cfg = self.cfg
        best_cost = float(self._violation(x[None, :])[0])
        stale = 0
        tabu = np.full(self.inst.n, -1)
        while not self._feasible(x[None, :])[0]:
            if self.exhausted():
                return None
            self.iters += 1
            pts = self._neighbors(x, self.single)
            if len(pts):
                costs = self._violation(pts)
                moved = np.argmax(pts != x, axis=1)
                # aspiration: a tabu move is allowed when it beats the best cost so far
                allowed = (tabu[moved] < self.iters) | (costs < best_cost)
                pts, costs, moved = pts[allowed], costs[allowed], moved[allowed]
            if len(pts):
                low = costs.min()
                choice = self.rng.choice(np.flatnonzero(costs == low).tolist())
                x = pts[choice]
                tabu[moved[choice]] = self.iters + cfg.tabu_tenure
                if low < best_cost:
                    best_cost, stale = float(low), 0
                    continue
            stale += 1
            if stale >= cfg.restart_interval or not len(pts):
                x = self.random_point()
                best_cost = float(self._violation(x[None, :])[0])
                stale = 0
                tabu[:] = -1
        return x

    def scan(self, x: np.ndarray):
        """Feasible neighbors of ``x`` with their RDU values, the index of the
        best one, its sorted utilities and the indices tied with it."""
        key = x.tobytes()
        if self.scans is not None and key in self.scans:
            return self.scans[key]
        pts = self._neighbors(x, self.moves)
        pts = pts[self._feasible(pts)] if len(pts) else pts
        if not len(pts):
            out = (pts, None, -1, None, None)
        else:
            rdu, utils = self.score(pts)
            i = best_row(rdu, utils)
            ties = np.flatnonzero((rdu == rdu[i]) & (utils == utils[i]).all(axis=1))
            out = (pts, rdu, i, utils[i].copy(), ties)
        if self.scans is not None:
            self.scans[key] = out
        return out

    def climb(self, x: np.ndarray) -> None:
        """Phase 2 from feasible ``x``.  Returns at a strict local optimum, after
        ``restart_interval`` plateau steps in a row, or when the budget runs out."""
        key = x.tobytes()
        if self.points is not None and key in self.points:
            cur_r, cur_u = self.points[key]
        else:
            rdu, utils = self.score(x[None, :])
            cur_r, cur_u = float(rdu[0]), utils[0]
            if self.points is not None:
                self.points[key] = (cur_r, cur_u)
        stale = 0
        while not self.exhausted():
            self.iters += 1
            pts, rdu, i, top_u, ties = self.scan(x)
            if not len(pts):
                return
            if _better(rdu[i], top_u, cur_r, cur_u):
                j = int(ties[self.rng.randrange(len(ties))])
                x, cur_r, cur_u, stale = pts[j], float(rdu[i]), top_u, 0
                continue
            if _better(cur_r, cur_u, rdu[i], top_u):
                return
            stale += 1
            if stale >= self.cfg.restart_interval:
                return
            if self.rng.random() < 0.5:
                x = pts[int(ties[self.rng.randrange(len(ties))])]

    def run(self, initial: Sequence[int] | None = None) -> None:
        x = self.random_point() if initial is None else np.array(initial, dtype=np.int64)
        while not self.exhausted():
            x = self.repair(x)
            if x is None:
                break
            self.climb(x)
            x = self.random_point()

    def result(self) -> "SolveResult":
        if self.best is None:
            return SolveResult(None, None, False, self.iters, self.evaluations)
        est = _make_estimate(self.inst, self.best_rdu, self.best_utils)
        return SolveResult(Decision(self.best.tolist()), est, True, self.iters, self.evaluations, self.history)


def solve(inst: CopInstance, cfg: SolverConfig, batch: SampleBatch,
          initial: Sequence[int] | Decision | None = None) -> SolveResult:
    """Best feasible decision found within the budget (anytime).

    ``initial`` optionally warm-starts the first descent; later restarts are random.
    """
    if batch.names != inst.stochastic_names:
        raise ValueError(f"batch variables {batch.names} do not match instance {inst.stochastic_names}")
    if isinstance(initial, Decision):
        initial = initial.values
    if initial is not None:
        initial = inst.decision(initial).values
    search = _Search(inst, cfg, batch)
    search.run(initial)
    return search.result()


def solve_exhaustive(inst: CopInstance, batch: SampleBatch, limit: int = EXHAUSTIVE_LIMIT) -> SolveResult:
    """Enumerate every assignment; argmax of the preference key, first in
    lexicographic enumeration order among exact ties."""
    size = inst.space_size()
    if size > limit:
        raise InstanceTooLarge(f"search space has {size} assignments, limit is {limit}")
    a, b, eq, tol = _constraint_arrays(inst)
    lo = np.array([v.lo for v in inst.decision_vars], dtype=np.int64)
    sizes = np.array([v.size for v in inst.decision_vars], dtype=np.int64)
    best = None
    best_r, best_u = 0.0, None
    evaluations = 0
    for start in range(0, size, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, size), dtype=np.int64)
        # row-major unravel gives itertools.product order
        pts = np.stack(np.unravel_index(idx, tuple(sizes.tolist())), axis=1).astype(np.int64) + lo \
            if inst.n else np.zeros((len(idx), 0), dtype=np.int64)
        pts = pts[_feasible_rows(pts, a, b, eq, tol)]
        if not len(pts):
            continue
        rdu, utils = rank_rows(inst, pts, batch)
        evaluations += len(pts)
        i = best_row(rdu, utils)
        if best is None or _better(rdu[i], utils[i], best_r, best_u):
            best, best_r, best_u = pts[i], float(rdu[i]), utils[i]
    if best is None:
        return SolveResult(None, None, False, size, 0)
    return SolveResult(Decision(best.tolist()), _make_estimate(inst, best_r, best_u), True, size, evaluations)
