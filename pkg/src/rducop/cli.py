"""Command-line interface: ``rducop {eval,solve,coeffs,match,sweep}``.

Machine-readable results go to stdout as JSON (CSV files via ``--out``);
human-readable summaries go to stderr.  Exit codes: 0 success, 2 usage or
configuration error, 3 no feasible decision found.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from typing import Sequence

from . import __version__
from .arena import BotKind, BotPolicy, MatchResult, Scenario, UnitStats, estimate_coefficients, run_match
from .cop import CopInstance
from .decision_core import DeformationFunction, DeformationKind, expected_utility, load_lottery, parse_phi, rdu
from .production import (
    UNIT_TYPES,
    CoefficientMode,
    CounterMatrix,
    ProductionDecision,
    ProductionState,
    build_instance,
)
from .solver import DEFAULT_BUDGET_MS, InstanceTooLarge, SolverConfig, solve, solve_exhaustive
from .stochastic import RngStream, TickDistributionModel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


class UsageError(Exception):
    pass


LOTTERY_HELP = """\
lottery file: JSON array of outcomes, e.g.
  [{"x": 0, "p": 0.5}, {"x": 10, "p": 0.5}]
entries are sorted, equal outcomes merged and probabilities renormalized.
"""

INSTANCE_HELP = """\
instance file, either a generic COP:
  {"decision_vars": [{"name": "x", "lo": 0, "hi": 5}, {"name": "y", "lo": 0, "hi": 5}],
   "stochastic_vars": [{"name": "s", "support": [[0, 0.5], [2, 0.5]]}],
   "constraints": [{"kind": "le", "terms": [[1, "x"], [1, "y"]], "rhs": 6}],
   "objective": {"sense": "maximize",
                 "targets": [{"decision": {"x": 1.0}, "stochastic": {"s": -1.0}, "cap": 3}]},
   "phi": "logistic:10:1.3", "k": 50,
   "solver": {"budget_iters": 5000, "tabu_tenure": 4, "restart_interval": 200}}
constraint kinds are eq, le and ge; a target adds min(cap, a.x + b.s + constant).

or a production state:
  {"state": {"our_units": {"H": 1, "L": 0, "R": 2}, "stock": 7,
             "observed_enemy": {"L": 3}, "tick": 120},
   "threshold": 20, "k": 50, "phi": "identity", "mode": "counter_power",
   "coeffs": {"H": {"H": 1, "L": 0.3738, "R": 1.7}, ...},
   "enemy_model": {"threshold": 20, "variables": {"H": [...], "L": [...], "R": [...]}}}
every key but "state" is optional.  Command-line flags override the "solver" block.
"""

STATS_HELP = """\
stats file (all keys optional):
  {"hit_points": {"H": 10, "L": 8, "R": 8}, "damage": {"H": 1, "L": 1, "R": 1},
   "multiplier": {"H": {"H": 1, "L": 1.6, "R": 0.6}, "L": {...}, "R": {...}},
   "hit_prob": 0.5, "base_damage": 1}
multiplier[attacker][defender] scales damage.
"""

SCENARIO_HELP = """\
scenario file (all keys optional):
  {"stock": 5, "income_per_tick": 0.4, "base_hp": 30,
   "start_units": {"H": 0, "L": 0, "R": 0}, "build_time": {"H": 6, "L": 4, "R": 5},
   "max_ticks": 600, "observation_prob": 0.5, "epoch": 10,
   "stats": {...stats file layout...},
   "enemy_model": {"threshold": 20,
                   "variables": {"H": [{"ticks": [0, null], "family": "poisson",
                                        "mean": 0.5, "slope": 0.02}], "L": [...], "R": [...]}}}
"""

BOT_KINDS = [k.value for k in BotKind]


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _note(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _phi_from_args(args) -> DeformationFunction:
    phi = parse_phi(args.phi)
    if args.lam is None and args.shift is None:
        return phi
    if phi.kind is DeformationKind.LOGISTIC_PESSIMISTIC:
        return DeformationFunction.logistic(args.lam if args.lam is not None else phi.lam,
                                            args.shift if args.shift is not None else phi.shift)
    if phi.kind is DeformationKind.LOGIT_OPTIMISTIC and args.shift is None:
        return DeformationFunction.logit(args.lam)
    raise UsageError(f"--lambda/--shift do not apply to phi {args.phi!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_eval(args) -> int:
    try:
        lottery = load_lottery(args.lottery)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.lottery}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise UsageError(f"{args.lottery}: {exc.strerror}") from None
    phi = _phi_from_args(args)
    value = rdu(lottery, phi=phi)
    eu = expected_utility(lottery)
    _emit({"phi": phi.describe(), "rdu": value, "eu": eu, "lottery": lottery.to_json()})
    _note(f"RDU[{phi.describe()}] = {value:.15g}\nEU = {eu:.15g}")
    return EXIT_OK


def _solver_config(args, block: dict) -> SolverConfig:
    known = {"budget_ms", "budget_iters", "tabu_tenure", "restart_interval", "seed"}
    unknown = set(block) - known
    if unknown:
        raise UsageError(f"unknown solver keys: {sorted(unknown)}")
    iters = args.budget_iters if args.budget_iters is not None else block.get("budget_iters")
    ms = args.budget_ms if args.budget_ms is not None else block.get("budget_ms")
    if args.budget_ms is not None:
        iters = None
    kw = {
        "restart_interval": args.restart if args.restart is not None else block.get("restart_interval", 200),
        "tabu_tenure": args.tabu if args.tabu is not None else block.get("tabu_tenure", 4),
        "seed": args.seed if args.seed is not None else block.get("seed", 0),
    }
    if iters is not None:
        return SolverConfig.iterations(int(iters), **kw)
    return SolverConfig(budget_ms=float(ms if ms is not None else DEFAULT_BUDGET_MS), **kw)


def _load_instance(obj) -> tuple[CopInstance, ProductionState | None]:
    if not isinstance(obj, dict):
        raise UsageError("instance file must hold a JSON object")
    if "decision_vars" in obj:
        return CopInstance.from_json(obj), None
    state = ProductionState.from_json(obj.get("state", obj))
    coeffs = CounterMatrix.from_json(obj["coeffs"]) if "coeffs" in obj else None
    threshold = int(obj.get("threshold", 20))
    dists = None
    if "enemy_model" in obj:
        model = TickDistributionModel.from_json(obj["enemy_model"])
        dists = {t: model.distribution(t.value, state.tick) for t in UNIT_TYPES}
    inst = build_instance(state, coeffs, dists, DeformationFunction.from_json(obj.get("phi")),
                          int(obj.get("k", 50)), threshold, CoefficientMode(obj.get("mode", "counter_power")))
    return inst, state


def cmd_solve(args) -> int:
    obj = _read_json(args.instance)
    inst, state = _load_instance(obj)
    seed = args.seed if args.seed is not None else 0
    batch = inst.sample_batch(RngStream(seed).child(0))
    started = time.perf_counter()
    if args.exhaustive:
        result = solve_exhaustive(inst, batch)
        method = "exhaustive"
    else:
        cfg = _solver_config(args, obj.get("solver", {}) if isinstance(obj, dict) else {})
        result = solve(inst, cfg, batch)
        method = "local-search"
    elapsed = time.perf_counter() - started
    out = {"method": method, "seed": seed, **result.to_json(inst)}
    if result.feasible_found:
        out["sample_objectives"] = list(result.best_preference.sample_objectives)
        if state is not None:
            pd = ProductionDecision.from_values(result.best_decision)
            out["production"] = {**pd.to_json(),
                                 "to_produce": {t.value: n for t, n in pd.to_produce(state).items()}}
    _emit(out)
    if not result.feasible_found:
        _note(f"no feasible decision found after {result.iterations} iterations")
        return EXIT_INFEASIBLE
    _note(f"{method}: RDU {result.best_preference.rdu_value:.12g} after {result.iterations} iterations, "
          f"{result.evaluations} evaluations ({elapsed * 1000:.1f} ms)")
    for name, v in result.best_decision.as_dict(inst).items():
        _note(f"  {name} = {v}")
    return EXIT_OK


def cmd_coeffs(args) -> int:
    stats = UnitStats.from_json(_read_json(args.stats)) if args.stats else UnitStats()
    if args.games < 1 or args.army_size < 1:
        raise UsageError("--games and --army-size must be >= 1")
    matrix = estimate_coefficients(stats, args.games, args.army_size, args.seed)
    err = matrix.reciprocity_error()
    _emit({"need": matrix.to_json(), "games": args.games, "army_size": args.army_size, "seed": args.seed,
           "reciprocity_error": err, "rps_multipliers": stats.rps_holds()})
    lines = ["need[A][B]   " + "  ".join(f"{b.value:>8}" for b in UNIT_TYPES)]
    for a in UNIT_TYPES:
        lines.append(f"  {a.value}          " + "  ".join(f"{matrix[a, b]:8.4f}" for b in UNIT_TYPES))
    lines.append(f"max |need[A][B] * need[B][A] - 1| = {err:.3g}")
    _note("\n".join(lines))
    return EXIT_OK


def _bot(kind: str, args, phi: DeformationFunction | None = None) -> BotPolicy:
    if kind not in BOT_KINDS:
        raise UsageError(f"unknown bot kind {kind!r}; choose from {', '.join(BOT_KINDS)}")
    return BotPolicy(kind, phi=phi, budget_iters=args.budget_iters, budget_ms=args.budget_ms)


def _scenario(args) -> Scenario:
    return Scenario.from_json(_read_json(args.scenario)) if args.scenario else Scenario()


def _write_out(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_match(args) -> int:
    if args.games < 1:
        raise UsageError("--games must be >= 1")
    bot_a, bot_b = _bot(args.bot_a, args), _bot(args.bot_b, args)
    result = run_match(bot_a, bot_b, args.games, args.seed, args.jobs, _scenario(args))
    _write_out(args.out, result.to_csv())
    _emit(result.summary())
    _note(result.table())
    return EXIT_OK


_PHI_KIND = {DeformationKind.IDENTITY: "eu", DeformationKind.LOGISTIC_PESSIMISTIC: "rdu-pess",
             DeformationKind.LOGIT_OPTIMISTIC: "rdu-opt"}


def cmd_sweep(args) -> int:
    specs = [s for item in args.phis for s in item.split(";") if s.strip()]
    if not specs:
        raise UsageError("--phis needs at least one deformation spec")
    if args.games < 1:
        raise UsageError("--games must be >= 1")
    bots = []
    for spec in specs:
        if spec.strip() == "random":
            bots.append(_bot("random", args))
            continue
        phi = parse_phi(spec)
        bots.append(_bot(_PHI_KIND.get(phi.kind, "eu"), args, phi))
    opponent = _bot(args.opponent, args)
    scenario = _scenario(args)
    rows, buf = [], io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("bot",) + MatchResult.CSV_COLUMNS)
    for spec, bot in zip(specs, bots):
        res = run_match(bot, opponent, args.games, args.seed, args.jobs, scenario)
        rows.append({"phi": spec.strip(), "bot": bot.label, "games": res.games, "win": res.wins,
                     "tie": res.ties, "loss": res.losses, "score": res.score_a, "normalized": res.normalized_a})
        for row in res.rows:
            writer.writerow((bot.label,) + tuple(row))
    _write_out(args.out, buf.getvalue())
    _emit({"opponent": opponent.label, "games": args.games, "seed": args.seed, "results": rows})
    w = max(len(r["bot"]) for r in rows)
    lines = [f"{'':{w}}  {'Win':>5} {'Tie':>5} {'Loss':>5} {'Score':>7} {'Norm':>6}"]
    lines += [f"{r['bot']:{w}}  {r['win']:>5} {r['tie']:>5} {r['loss']:>5} {r['score']:>7g} {r['normalized']:>6.3f}"
              for r in rows]
    _note(f"against {opponent.label}, {args.games} games each\n" + "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_budget(p, default_iters: int | None = None) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--budget-ms", type=float, help="wall-clock budget per solve in milliseconds")
    g.add_argument("--budget-iters", type=int, default=default_iters,
                   help="iteration budget per solve (deterministic)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="rducop", description=__doc__, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="RDU and EU of a lottery", epilog=LOTTERY_HELP, formatter_class=fmt)
    p.add_argument("--lottery", required=True, metavar="FILE")
    p.add_argument("--phi", default="identity",
                   help="identity, logistic[:lam[:shift]], logit[:lam] or custom:x/y,x/y,...")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--shift", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="solve a COP or production instance", epilog=INSTANCE_HELP,
                       formatter_class=fmt)
    p.add_argument("--instance", required=True, metavar="FILE")
    p.add_argument("--seed", type=int, help="seeds the sample batch and the search (default 0)")
    _add_budget(p)
    p.add_argument("--tabu", type=int, help="tabu tenure in iterations (default 4)")
    p.add_argument("--restart", type=int, help="non-improving iterations before a restart (default 200)")
    p.add_argument("--exhaustive", action="store_true", help="enumerate every assignment (small instances)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("coeffs", help="estimate counter coefficients from arena duels", epilog=STATS_HELP,
                       formatter_class=fmt)
    p.add_argument("--stats", metavar="FILE")
    p.add_argument("--games", type=int, default=200)
    p.add_argument("--army-size", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_coeffs)

    kinds = ", ".join(BOT_KINDS)
    p = sub.add_parser("match", help="play a seeded match between two bots", epilog=SCENARIO_HELP,
                       formatter_class=fmt)
    p.add_argument("--bot-a", required=True, help=kinds)
    p.add_argument("--bot-b", required=True, help=kinds)
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", metavar="FILE")
    p.add_argument("--out", metavar="CSV", help="per-game rows")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_budget(p, default_iters=100)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", help="one match per deformation function against a fixed opponent",
                       epilog=SCENARIO_HELP, formatter_class=fmt)
    p.add_argument("--phis", required=True, nargs="+",
                   help="deformation specs (also ';'-separated); 'random' adds the random baseline")
    p.add_argument("--opponent", default="rush-light", help=kinds)
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", metavar="FILE")
    p.add_argument("--out", metavar="CSV", help="per-game rows, one block per bot")
    p.add_argument("--jobs", type=int, default=1)
    _add_budget(p, default_iters=100)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, InstanceTooLarge, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, InstanceTooLarge):
            msg = f"InstanceTooLarge: {exc}"
        _note(f"rducop {args.command}: error: {msg}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
