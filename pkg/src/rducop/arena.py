"""Desk-scale RTS arena with fog of war.

Armies are abstract pools of heavy, light and ranged units.  Each tick both
sides shoot simultaneously: an attacker group spreads its damage over the
defender types in proportion to their counts, scaled by a rock-paper-scissors
multiplier; damage accumulates per defender type and every full ``hit_points``
of it removes one unit.  A side with no army left takes damage on its base.
A player loses once it has no units and cannot produce any more.

All randomness of a player (sighting enemy units, its bot's sampling and
search, the hits its army lands) comes from that player's own stream, so a
game is a pure function of the two bots, the scenario and the two side seeds.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .decision_core import DeformationFunction
from .production import (
    ARENA_COEFFS,
    UNIT_COST,
    UNIT_TYPES,
    CoefficientMode,
    CounterMatrix,
    ProductionDecision,
    ProductionState,
    UnitType,
    build_instance,
    default_enemy_model,
)
from .solver import SolverConfig, solve
from .stochastic import RngStream, TickDistributionModel

__all__ = [
    "UnitStats",
    "Army",
    "PlayerState",
    "GameState",
    "Scenario",
    "BotKind",
    "BotPolicy",
    "GameRecord",
    "MatchResult",
    "Outcome",
    "resolve_combat_step",
    "duel",
    "estimate_coefficients",
    "play_game",
    "run_match",
    "game_seed",
]

H, L, R = UNIT_TYPES
MIN_COST = min(UNIT_COST.values())


@dataclass(frozen=True)
class UnitStats:
    """Per-type hit points and damage, plus ``multiplier[attacker][defender]``."""

    hit_points: Mapping[UnitType, float] = field(default_factory=lambda: {H: 10.0, L: 8.0, R: 8.0})
    damage: Mapping[UnitType, float] = field(default_factory=lambda: {H: 1.0, L: 1.0, R: 1.0})
    multiplier: Mapping[UnitType, Mapping[UnitType, float]] = field(default_factory=lambda: {
        H: {H: 1.0, L: 1.6, R: 0.6},
        L: {H: 0.6, L: 1.0, R: 1.6},
        R: {H: 1.6, L: 0.6, R: 1.0},
    })
    hit_prob: float = 0.5
    base_damage: float = 1.0

    def __post_init__(self):
        conv = lambda m: {UnitType(k): v for k, v in m.items()}
        object.__setattr__(self, "hit_points", {t: float(v) for t, v in conv(self.hit_points).items()})
        object.__setattr__(self, "damage", {t: float(v) for t, v in conv(self.damage).items()})
        object.__setattr__(self, "multiplier", {a: {UnitType(b): float(v) for b, v in row.items()}
                                                for a, row in conv(self.multiplier).items()})
        for t in UNIT_TYPES:
            if not self.hit_points[t] > 0 or not self.damage[t] > 0:
                raise ValueError(f"{t.value}: hit points and damage must be positive")
        if not 0 < self.hit_prob <= 1:
            raise ValueError("hit_prob must be in (0, 1]")

    def rps_holds(self) -> bool:
        m = self.multiplier
        return m[H][L] > m[L][H] and m[L][R] > m[R][L] and m[R][H] > m[H][R]

    def to_json(self) -> dict:
        return {
            "hit_points": {t.value: v for t, v in self.hit_points.items()},
            "damage": {t.value: v for t, v in self.damage.items()},
            "multiplier": {a.value: {b.value: v for b, v in row.items()} for a, row in self.multiplier.items()},
            "hit_prob": self.hit_prob,
            "base_damage": self.base_damage,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "UnitStats":
        default = cls()
        return cls(
            obj.get("hit_points", default.hit_points),
            obj.get("damage", default.damage),
            obj.get("multiplier", default.multiplier),
            obj.get("hit_prob", default.hit_prob),
            obj.get("base_damage", default.base_damage),
        )


@dataclass
class Army:
    counts: dict[UnitType, int] = field(default_factory=lambda: {t: 0 for t in UNIT_TYPES})
    # damage taken but not yet enough to kill a unit, per type
    pool: dict[UnitType, float] = field(default_factory=lambda: {t: 0.0 for t in UNIT_TYPES})

    @classmethod
    def of(cls, h: int = 0, l: int = 0, r: int = 0) -> "Army":
        return cls({H: h, L: l, R: r})

    @property
    def size(self) -> int:
        return sum(self.counts.values())

    def copy(self) -> "Army":
        return Army(dict(self.counts), dict(self.pool))


def _damage_dealt(attacker: Army, defender: Army, stats: UnitStats, rng: RngStream | None) -> dict:
    total_def = defender.size
    out = {t: 0.0 for t in UNIT_TYPES}
    if total_def == 0:
        return out
    for x in UNIT_TYPES:
        n = attacker.counts[x]
        if n == 0:
            continue
        hits = n * stats.hit_prob if rng is None else int(rng.generator.binomial(n, stats.hit_prob))
        if hits == 0:
            continue
        for y in UNIT_TYPES:
            share = defender.counts[y] / total_def
            if share:
                out[y] += hits * stats.damage[x] * stats.multiplier[x][y] * share
    return out


def _apply(army: Army, dmg: Mapping[UnitType, float], stats: UnitStats) -> None:
    for y in UNIT_TYPES:
        if army.counts[y] == 0:
            army.pool[y] = 0.0
            continue
        pool = army.pool[y] + dmg[y]
        # tolerance keeps exact multiples of hit points from rounding down
        dead = int(math.floor(pool / stats.hit_points[y] + 1e-9))
        if dead >= army.counts[y]:
            army.counts[y] = 0
            army.pool[y] = 0.0
        else:
            army.counts[y] -= dead
            army.pool[y] = max(pool - dead * stats.hit_points[y], 0.0)


def resolve_combat_step(army_a: Army, army_b: Army, stats: UnitStats,
                        rng_a: RngStream | None = None, rng_b: RngStream | None = None) -> tuple[Army, Army]:
    """One simultaneous exchange of fire.  Returns updated copies.

    With no streams the step is deterministic: every attacker lands
    ``hit_prob`` of a hit.  Otherwise hits per attacker group are binomial,
    drawn from the attacking side's stream.
    """
    a, b = army_a.copy(), army_b.copy()
    if a.size == 0 or b.size == 0:
        return a, b
    to_b = _damage_dealt(army_a, army_b, stats, rng_a)
    to_a = _damage_dealt(army_b, army_a, stats, rng_b)
    _apply(a, to_a, stats)
    _apply(b, to_b, stats)
    return a, b


def duel(a_type: UnitType, b_type: UnitType, stats: UnitStats, army_size: int, rng: RngStream,
         max_steps: int = 8) -> tuple[int, int]:
    """Fight ``army_size`` units of each type until one side is gone or ``max_steps`` pass."""
    a = Army({t: army_size if t is a_type else 0 for t in UNIT_TYPES})
    b = Army({t: army_size if t is b_type else 0 for t in UNIT_TYPES})
    ra, rb = rng.child(0), rng.child(1)
    for _ in range(max_steps):
        if a.size == 0 or b.size == 0:
            break
        a, b = resolve_combat_step(a, b, stats, ra, rb)
    return a.size, b.size


def estimate_coefficients(stats: UnitStats | None = None, games: int = 200, army_size: int = 10,
                          rng: RngStream | int = 7, max_steps: int = 8) -> CounterMatrix:
    """Counter coefficients from repeated duels.

    For each unordered pair (A, B), ``games`` duels of ``army_size`` vs
    ``army_size`` are fought and survivors totalled; ``need[A][B]`` is
    surviving B over surviving A and ``need[B][A]`` its inverse.  A zero
    total is replaced by one unit so both ratios stay finite.
    """
    if games < 1:
        raise ValueError("games must be >= 1")
    stats = stats or UnitStats()
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    need = {a: {b: 1.0 for b in UNIT_TYPES} for a in UNIT_TYPES}
    for i, a in enumerate(UNIT_TYPES):
        for j, b in enumerate(UNIT_TYPES):
            if j <= i:
                continue
            pair = rng.child(i, j)
            surv_a = surv_b = 0
            for g in range(games):
                sa, sb = duel(a, b, stats, army_size, pair.child(g), max_steps)
                surv_a += sa
                surv_b += sb
            surv_a, surv_b = max(surv_a, 1), max(surv_b, 1)
            need[a][b] = surv_b / surv_a
            need[b][a] = surv_a / surv_b
    return CounterMatrix(need)


# ---------------------------------------------------------------------------
# games


class BotKind(str, Enum):
    RANDOM = "random"
    EU = "eu"
    RDU_PESSIMISTIC = "rdu-pess"
    RDU_OPTIMISTIC = "rdu-opt"
    LIGHT_RUSH = "rush-light"
    HEAVY_RUSH = "rush-heavy"
    RANGED_RUSH = "rush-ranged"


_RUSH_UNIT = {BotKind.LIGHT_RUSH: L, BotKind.HEAVY_RUSH: H, BotKind.RANGED_RUSH: R}


@dataclass(frozen=True)
class BotPolicy:
    """Production policy.  Adaptive kinds solve the production COP each epoch;
    ``phi`` defaults to identity (EU), logistic(10, 1.3) or logit(10) by kind."""

    kind: BotKind
    phi: DeformationFunction | None = None
    budget_iters: int = 100
    budget_ms: float | None = None
    k: int = 50
    threshold: int = 20
    coeffs: CounterMatrix = ARENA_COEFFS
    mode: CoefficientMode = CoefficientMode.COUNTER_POWER
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", BotKind(self.kind))
        if self.phi is None:
            default = {
                BotKind.EU: DeformationFunction.identity(),
                BotKind.RDU_PESSIMISTIC: DeformationFunction.logistic(10.0, 1.3),
                BotKind.RDU_OPTIMISTIC: DeformationFunction.logit(10.0),
            }.get(self.kind)
            object.__setattr__(self, "phi", default)

    @property
    def adaptive(self) -> bool:
        return self.kind in (BotKind.EU, BotKind.RDU_PESSIMISTIC, BotKind.RDU_OPTIMISTIC)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.adaptive:
            return f"{self.kind.value}[{self.phi.describe()}]"
        return self.kind.value

    def solver_config(self, seed: int) -> SolverConfig:
        if self.budget_ms is not None:
            return SolverConfig(budget_ms=self.budget_ms, seed=seed)
        return SolverConfig.iterations(self.budget_iters, seed=seed)


@dataclass
class PlayerState:
    stock: float = 5.0
    income_per_tick: float = 0.4
    units: Army = field(default_factory=Army)
    production_queue: list = field(default_factory=list)
    base_hp: float = 30.0

    @property
    def base_alive(self) -> bool:
        return self.base_hp > 0

    def can_produce(self) -> bool:
        if not self.base_alive:
            return False
        return bool(self.production_queue) or self.stock >= MIN_COST or self.income_per_tick > 0

    def pending(self) -> dict[UnitType, int]:
        out = dict(self.units.counts)
        for t, _ in self.production_queue:
            out[t] += 1
        return out


@dataclass(frozen=True)
class Scenario:
    """Game template shared by both players."""

    stock: float = 5.0
    income_per_tick: float = 0.4
    base_hp: float = 30.0
    start_units: Mapping[UnitType, int] = field(default_factory=lambda: {H: 0, L: 0, R: 0})
    build_time: Mapping[UnitType, int] = field(default_factory=lambda: {H: 6, L: 4, R: 5})
    max_ticks: int = 600
    observation_prob: float = 0.5
    epoch: int = 10
    stats: UnitStats = field(default_factory=UnitStats)
    enemy_model: TickDistributionModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "start_units", {UnitType(k): int(v) for k, v in self.start_units.items()})
        object.__setattr__(self, "build_time", {UnitType(k): int(v) for k, v in self.build_time.items()})
        if self.max_ticks < 0 or self.epoch < 1:
            raise ValueError("max_ticks must be >= 0 and epoch >= 1")
        if not 0 <= self.observation_prob <= 1:
            raise ValueError("observation_prob must be in [0, 1]")

    def new_player(self) -> PlayerState:
        return PlayerState(self.stock, self.income_per_tick, Army(dict(self.start_units)), [], self.base_hp)

    def model(self) -> TickDistributionModel:
        return self.enemy_model or default_enemy_model()

    def to_json(self) -> dict:
        out = {
            "stock": self.stock, "income_per_tick": self.income_per_tick, "base_hp": self.base_hp,
            "start_units": {t.value: n for t, n in self.start_units.items()},
            "build_time": {t.value: n for t, n in self.build_time.items()},
            "max_ticks": self.max_ticks, "observation_prob": self.observation_prob,
            "epoch": self.epoch, "stats": self.stats.to_json(),
        }
        if self.enemy_model is not None:
            out["enemy_model"] = self.enemy_model.to_json()
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Scenario":
        known = {"stock", "income_per_tick", "base_hp", "start_units", "build_time", "max_ticks",
                 "observation_prob", "epoch", "stats", "enemy_model"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {k: v for k, v in obj.items() if k not in ("stats", "enemy_model")}
        if "stats" in obj:
            kw["stats"] = UnitStats.from_json(obj["stats"])
        if "enemy_model" in obj:
            kw["enemy_model"] = TickDistributionModel.from_json(obj["enemy_model"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class GameState:
    players: list[PlayerState]
    tick: int = 0
    max_ticks: int = 600
    observation_prob: float = 0.5


class Outcome(str, Enum):
    WIN_A = "A"
    WIN_B = "B"
    TIE = "tie"

    def swapped(self) -> "Outcome":
        return {Outcome.WIN_A: Outcome.WIN_B, Outcome.WIN_B: Outcome.WIN_A}.get(self, self)


@dataclass(frozen=True)
class GameRecord:
    outcome: Outcome
    ticks: int
    final_units: tuple[int, int]
    produced: tuple[dict, dict]


class _Side:
    def __init__(self, bot: BotPolicy, player: PlayerState, stream: RngStream):
        self.bot = bot
        self.player = player
        self.sight = stream.child(0)
        self.decide = stream.child(1)
        self.fire = stream.child(2)
        self.produced = {t: 0 for t in UNIT_TYPES}


def _enqueue(side: _Side, unit: UnitType, scenario: Scenario) -> bool:
    p = side.player
    if p.stock + 1e-9 < UNIT_COST[unit]:
        return False
    p.stock -= UNIT_COST[unit]
    p.production_queue.append([unit, scenario.build_time[unit]])
    side.produced[unit] += 1
    return True


def _observe(side: _Side, enemy: PlayerState, prob: float) -> dict[UnitType, int]:
    gen = side.sight.generator
    return {t: int(gen.binomial(enemy.units.counts[t], prob)) for t in UNIT_TYPES}


def _decide(side: _Side, enemy: PlayerState, scenario: Scenario, tick: int) -> None:
    bot, p = side.bot, side.player
    seen = _observe(side, enemy, scenario.observation_prob)
    if bot.kind in _RUSH_UNIT:
        while _enqueue(side, _RUSH_UNIT[bot.kind], scenario):
            pass
        return
    if bot.kind is BotKind.RANDOM:
        gen = side.decide.generator
        while True:
            options = [t for t in UNIT_TYPES if p.stock + 1e-9 >= UNIT_COST[t]]
            if not options:
                return
            _enqueue(side, options[int(gen.integers(len(options)))], scenario)
    ours = p.pending()
    threshold = max(bot.threshold, max(ours.values()))
    stock = int(math.floor(p.stock + 1e-9))
    state = ProductionState(ours, stock, seen, tick)
    model = scenario.model()
    dists = {t: model.distribution(t.value, tick) for t in UNIT_TYPES}
    inst = build_instance(state, bot.coeffs, dists, bot.phi, bot.k, threshold, bot.mode)
    batch = inst.sample_batch(side.decide)
    cfg = bot.solver_config(side.decide.bits64())
    result = solve(inst, cfg, batch, initial=ProductionDecision.idle(state).values())
    if not result.feasible_found:
        return
    plan = ProductionDecision.from_values(result.best_decision).to_produce(state)
    for t in UNIT_TYPES:
        for _ in range(plan[t]):
            if not _enqueue(side, t, scenario):
                break


def _advance_production(p: PlayerState) -> None:
    if not p.base_alive:
        p.production_queue.clear()
        return
    if p.production_queue:
        head = p.production_queue[0]
        head[1] -= 1
        if head[1] <= 0:
            p.production_queue.pop(0)
            p.units.counts[head[0]] += 1


def _siege(attacker: _Side, target: PlayerState, stats: UnitStats) -> None:
    if not target.base_alive:
        return
    gen = attacker.fire.generator
    n = attacker.player.units.size
    hits = int(gen.binomial(n, stats.hit_prob))
    target.base_hp -= hits * stats.base_damage


def _side_streams(seed) -> tuple[RngStream, RngStream]:
    if isinstance(seed, (tuple, list)):
        s0, s1 = seed
        return RngStream(s0), RngStream(s1)
    root = RngStream(seed)
    return root.child(0), root.child(1)


def play_game(bot_a: BotPolicy, bot_b: BotPolicy, scenario: Scenario | None = None,
              seed: int | tuple[int, int] = 0, players: Sequence[PlayerState] | None = None) -> GameRecord:
    """Play one game; side A is slot 0.

    ``seed`` is either one integer (both side streams derived from it) or a
    pair of per-side seeds.  ``players`` overrides the scenario's starting states.
    """
    scenario = scenario or Scenario()
    stream_a, stream_b = _side_streams(seed)
    start = [replace(p, units=p.units.copy(), production_queue=[list(q) for q in p.production_queue])
             for p in players] if players else [scenario.new_player(), scenario.new_player()]
    sides = [_Side(bot_a, start[0], stream_a), _Side(bot_b, start[1], stream_b)]
    state = GameState([s.player for s in sides], 0, scenario.max_ticks, scenario.observation_prob)
    stats = scenario.stats

    def finished() -> Outcome | None:
        dead = [s.player.units.size == 0 and not s.player.can_produce() for s in sides]
        if dead[0] and dead[1]:
            return Outcome.TIE
        if dead[0]:
            return Outcome.WIN_B
        if dead[1]:
            return Outcome.WIN_A
        return None

    outcome = finished()
    while outcome is None and state.tick < state.max_ticks:
        tick = state.tick
        for s in sides:
            if s.player.base_alive:
                s.player.stock += s.player.income_per_tick
        if tick % scenario.epoch == 0:
            for s, other in ((sides[0], sides[1]), (sides[1], sides[0])):
                if s.player.base_alive:
                    _decide(s, other.player, scenario, tick)
        for s in sides:
            _advance_production(s.player)
        pa, pb = sides[0].player, sides[1].player
        if pa.units.size and pb.units.size:
            pa.units, pb.units = resolve_combat_step(pa.units, pb.units, stats, sides[0].fire, sides[1].fire)
        else:
            if pa.units.size:
                _siege(sides[0], pb, stats)
            if pb.units.size:
                _siege(sides[1], pa, stats)
        state.tick += 1
        outcome = finished()
    if outcome is None:
        outcome = Outcome.TIE
    return GameRecord(outcome, state.tick, (sides[0].player.units.size, sides[1].player.units.size),
                      (sides[0].produced, sides[1].produced))


# ---------------------------------------------------------------------------
# matches


@dataclass
class MatchResult:
    """Results from A's point of view; B's wins are A's losses."""

    wins: int = 0
    ties: int = 0
    losses: int = 0
    rows: list = field(default_factory=list, repr=False)
    label_a: str = "A"
    label_b: str = "B"

    @property
    def games(self) -> int:
        return self.wins + self.ties + self.losses

    @property
    def score_a(self) -> float:
        return self.wins + 0.5 * self.ties

    @property
    def score_b(self) -> float:
        return self.losses + 0.5 * self.ties

    @property
    def normalized_a(self) -> float:
        return self.score_a / self.games if self.games else 0.0

    def add(self, outcome: Outcome) -> None:
        if outcome is Outcome.WIN_A:
            self.wins += 1
        elif outcome is Outcome.WIN_B:
            self.losses += 1
        else:
            self.ties += 1

    def summary(self) -> dict:
        return {
            "bot_a": self.label_a, "bot_b": self.label_b, "games": self.games,
            "A": {"win": self.wins, "tie": self.ties, "loss": self.losses, "score": self.score_a,
                  "normalized": self.normalized_a},
            "B": {"win": self.losses, "tie": self.ties, "loss": self.wins, "score": self.score_b,
                  "normalized": self.score_b / self.games if self.games else 0.0},
        }

    def table(self) -> str:
        w = max(len(self.label_a), len(self.label_b), 6)
        lines = [f"{'':{w}}  {'Win':>5} {'Tie':>5} {'Loss':>5} {'Score':>7}"]
        lines.append(f"{self.label_a:{w}}  {self.wins:>5} {self.ties:>5} {self.losses:>5} {self.score_a:>7g}")
        lines.append(f"{self.label_b:{w}}  {self.losses:>5} {self.ties:>5} {self.wins:>5} {self.score_b:>7g}")
        return "\n".join(lines)

    CSV_COLUMNS = ("game_index", "seed", "side_assignment", "outcome", "ticks", "final_units_A", "final_units_B")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for row in sorted(self.rows, key=lambda r: r[0]):
            writer.writerow(row)
        return buf.getvalue()


def game_seed(base_seed: int, pair_index: int) -> int:
    """Seed of the ``pair_index``-th pair of games (both side assignments share it)."""
    ss = np.random.SeedSequence(int(base_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(pair_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _play_indexed(args) -> tuple:
    bot_a, bot_b, scenario, base_seed, index = args
    seed = game_seed(base_seed, index // 2)
    if index % 2 == 0:
        rec = play_game(bot_a, bot_b, scenario, seed)
        outcome, units_a, units_b, side = rec.outcome, rec.final_units[0], rec.final_units[1], "A0"
    else:
        rec = play_game(bot_b, bot_a, scenario, seed)
        outcome, units_a, units_b, side = rec.outcome.swapped(), rec.final_units[1], rec.final_units[0], "A1"
    return (index, seed, side, outcome.value, rec.ticks, units_a, units_b)


def run_match(bot_a: BotPolicy, bot_b: BotPolicy, n_games: int, base_seed: int = 0,
              parallelism: int = 1, scenario: Scenario | None = None) -> MatchResult:
    """Play ``n_games``; A takes slot 0 on even indices and slot 1 on odd ones,
    each consecutive pair sharing one game seed."""
    if n_games < 1:
        raise ValueError("n_games must be >= 1")
    scenario = scenario or Scenario()
    jobs = [(bot_a, bot_b, scenario, base_seed, i) for i in range(n_games)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_play_indexed, jobs, chunksize=max(1, n_games // (4 * parallelism))))
    else:
        rows = [_play_indexed(j) for j in jobs]
    result = MatchResult(label_a=bot_a.label, label_b=bot_b.label)
    for row in rows:
        result.add(Outcome(row[3]))
    result.rows = sorted(rows, key=lambda r: r[0])
    return result
