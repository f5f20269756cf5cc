"""Command-line front end.

Subcommands::

    bound       pattern timing, ball spacing and the largest feasible ball count
    plan        one nominal cycle (task or joint space) as CSV
    simulate    trials of one configuration
    experiment  limit | robustness | constraints | controllers tables

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible pattern
or cycle, 3 solver failure.  Settings come from defaults, then an optional
``--config`` file (flat ``key = value``, see ``tossjuggle.config``), then flags.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgfile
from .arm.kinematics import IKError
from .arm.model import load_model, shipped_model
from .ballistics import UnreachableError
from .pattern import PatternError, PatternSpec, derive_timing, max_balls, shannon_residual
from .sim import DEFAULT_GRIDS, SimConfig, SimConfigError, run_experiment, run_trial
from .sim.experiments import ExperimentError
from .trajopt_joint import (SQPError, joint_csv, nominal_joint_problem, solve_cycle_joint,
                            verify_task_constraints)
from .trajopt_task import (PlannerConfig, PlanningError, nominal_problem, solution_csv,
                           solve_cycle)

OK, USAGE, INFEASIBLE, SOLVER = 0, 1, 2, 3

PATTERN_KEYS = {f.name for f in fields(PatternSpec)}
PLANNER_KEYS = {f.name for f in fields(PlannerConfig)}
SIM_KEYS = {f.name for f in fields(SimConfig)} - {"pattern", "planner"}
GRID_PREFIX = "grid."


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    version: str = __version__
    timestamp: str = ""
    outputs: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True, default=_plain) + "\n"


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return asdict(o)
    return repr(o)


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, default=_plain)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# settings -----------------------------------------------------------------


def _load_settings(path):
    if path is None:
        return {}
    try:
        values, lines = cfgfile.load(path)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from e
    known = PATTERN_KEYS | PLANNER_KEYS | SIM_KEYS
    for k in values:
        if k not in known and not k.startswith(GRID_PREFIX):
            raise cfgfile.ConfigError(f"unknown key {k!r}", lines.get(k), str(path))
    return values


def _flag_settings(args):
    out = {}
    for dest, key in (("balls", "n_balls"), ("dwell_ratio", "dwell_ratio"),
                      ("throw_height", "throw_height"), ("ball_radius", "ball_radius"),
                      ("carry_distance", "carry_distance"),
                      ("crossing_distance", "crossing_distance"), ("kind", "kind"),
                      ("mode", "mode"), ("controller", "controller"),
                      ("sigma", "disturbance_sigma"), ("cap", "max_catches"),
                      ("model_std", "model_perturbation_std"), ("arm_model", "arm_model"),
                      ("support_count", "support_count"), ("n_to", "n_to"), ("n_td", "n_td"),
                      ("jerk_limit", "jerk_limit")):
        v = getattr(args, dest, None)
        if v is not None and not isinstance(v, list):
            out[key] = v
    if getattr(args, "no_collisions", False):
        out["collisions_enabled"] = False
    return out


def _build(settings, d_f=None):
    """PatternSpec, PlannerConfig and SimConfig from a flat mapping."""
    pat = {k: v for k, v in settings.items() if k in PATTERN_KEYS}
    pat.setdefault("n_balls", 5)
    if "gravity" in pat:
        pat["gravity"] = tuple(pat["gravity"])
    for k in ("n_balls", "n_hands"):
        if k in pat:
            pat[k] = _int(pat[k], k)
    if d_f is not None:
        pat["crossing_distance"] = d_f - pat.get("carry_distance", 0.10)
    spec = PatternSpec(**pat)
    plan = {k: v for k, v in settings.items() if k in PLANNER_KEYS}
    for k in ("support_count", "n_to", "n_td"):
        if k in plan:
            plan[k] = _int(plan[k], k)
    planner = PlannerConfig(**plan)
    sim = {k: v for k, v in settings.items() if k in SIM_KEYS}
    for k in ("max_catches", "n_trials", "seed"):
        if k in sim:
            sim[k] = _int(sim[k], k)
    if "collisions_enabled" in sim:
        sim["collisions_enabled"] = bool(sim["collisions_enabled"])
    return spec, planner, SimConfig(pattern=spec, planner=planner, **sim)


def _int(v, name):
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if not isinstance(v, int) or isinstance(v, bool):
        raise UsageError(f"{name} must be an integer, got {v!r}")
    return v


def _settings(args):
    s = _load_settings(getattr(args, "config", None))
    s.update(_flag_settings(args))
    return s


# output -------------------------------------------------------------------


def _write(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
        return None
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return str(p)


def _manifest_path(out):
    return None if out in (None, "-") else str(Path(out).with_suffix(".manifest.json"))


def _write_manifest(man: RunManifest, out):
    path = _manifest_path(out)
    man.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    if path is None:
        sys.stderr.write(man.to_json())
        return
    man.outputs.append(path)
    Path(path).write_text(man.to_json())


def _table(rows, columns, fmt):
    if fmt == "json":
        return json.dumps([{c: r[c] for c in columns} for r in rows], indent=1,
                          default=_plain, allow_nan=False) + "\n"
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_cell(r[c]) for c in columns) + "\n")
    return buf.getvalue()


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    text = "" if v is None else str(v)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def _finite(v):
    return v if not (isinstance(v, float) and not math.isfinite(v)) else None


# commands -----------------------------------------------------------------


def cmd_bound(args):
    spec, _, _ = _build(_settings(args), d_f=args.d_f)
    kind = args.kind or spec.default_kind()
    timing = derive_timing(spec, kind)
    values = dict(asdict(timing))
    values["max_balls"] = max_balls(timing.travel_distance, spec.ball_radius, spec.dwell_ratio,
                                    spec.n_hands)
    values["shannon_residual"] = shannon_residual(timing, spec.n_balls, spec.n_hands)
    values["feasible"] = bool(timing.ball_spacing > 0)
    if args.format == "json":
        sys.stdout.write(json.dumps(values, indent=1) + "\n")
    else:
        sys.stdout.write(_table([{"quantity": k, "value": v} for k, v in values.items()],
                                ("quantity", "value"), "csv"))
    if not values["feasible"]:
        print(f"infeasible: ball spacing d_b = {timing.ball_spacing:.6g} m <= 0; at most "
              f"{values['max_balls']} balls for d_f = {timing.travel_distance:.6g} m",
              file=sys.stderr)
        return INFEASIBLE
    return OK


def _arm_for_hand(name, hand):
    base = load_model(name) if name.endswith(".arm") else shipped_model(name)
    return base if hand == 1 else base.mirrored()


def cmd_plan(args):
    settings = _settings(args)
    spec, planner, sim = _build(settings)
    problem = nominal_problem(spec, sim.kind, args.hand, args.cycle, planner)
    if args.space == "task":
        sol = solve_cycle(problem)
        if sol.status != "optimal":
            print(f"solver failure: {sol.status} {getattr(sol, 'message', '')}", file=sys.stderr)
            return SOLVER
        residuals = {k: float(v) for k, v in sol.residuals.items()}
        residuals["kkt"] = float(sol.kkt_residual)
        table = solution_csv(sol)
    else:
        model = _arm_for_hand(sim.arm_model, args.hand)
        jp = nominal_joint_problem(problem, model)
        sol = solve_cycle_joint(jp, model)
        residuals = verify_task_constraints(jp, model, sol)
        table = joint_csv(sol)
    worst = max(residuals.values()) if residuals else 0.0
    path = _write(table, args.out) if args.format == "csv" else None
    summary = {"space": args.space, "hand": args.hand, "cycle": args.cycle,
               "support_count": problem.support_count, "k_td": problem.k_td,
               "cost": float(sol.cost), "iterations": int(sol.iterations),
               "residuals": residuals, "max_residual": worst, "tolerance": args.tol}
    if args.format == "json":
        summary["rows"] = [dict(zip(table.splitlines()[0].split(","), map(float, line.split(","))))
                           for line in table.splitlines()[1:]]
        path = _write(json.dumps(summary, indent=1) + "\n", args.out)
    else:
        print(json.dumps(summary, indent=1), file=sys.stderr)
    if path:
        man = RunManifest("plan " + args.space, _digest([asdict(spec), asdict(planner),
                                                         args.space, args.hand, args.cycle]),
                          None, outputs=[path], settings=settings)
        _write_manifest(man, args.out)
    if worst > args.tol:
        print(f"residual {worst:.3g} exceeds tolerance {args.tol:g}", file=sys.stderr)
        return SOLVER
    return OK


SIM_COLUMNS = ("trial", "catches", "drop_cause", "mean_touch_down_error",
               "max_touch_down_error", "min_interball_distance", "end_time", "detail")


def simulation_seeds(seed, trials):
    """Per-trial seeds of ``simulate``."""
    return np.random.SeedSequence(int(seed)).spawn(int(trials))


def cmd_simulate(args):
    settings = _settings(args)
    _, _, sim = _build(settings)
    seed = args.seed if args.seed is not None else sim.seed
    trials = args.trials if args.trials is not None else sim.n_trials
    sim = replace(sim, seed=int(seed), n_trials=int(trials))
    sim.validate()
    log = open(args.log, "w") if args.log else None
    rows = []
    try:
        for t, s in enumerate(simulation_seeds(seed, trials)):
            events = [] if log else None
            rep = run_trial(sim, seed=s, log=events.append if log else None)
            e = rep.touch_down_errors
            rows.append({"trial": t, "catches": rep.catches, "drop_cause": rep.drop_cause,
                         "mean_touch_down_error": rep.mean_error(),
                         "max_touch_down_error": float(max(e)) if e else math.nan,
                         "min_interball_distance": rep.min_interball_distance,
                         "end_time": rep.end_time, "detail": rep.detail})
            if log:
                log.write(json.dumps({"trial": t, "events": events}, default=_plain) + "\n")
    finally:
        if log:
            log.close()
    if args.format == "json":
        rows = [{k: _finite(v) for k, v in r.items()} for r in rows]
    path = _write(_table(rows, SIM_COLUMNS, args.format), args.out)
    man = RunManifest("simulate", sim.digest(), int(seed),
                      outputs=[p for p in (path, args.log) if p], settings=settings)
    _write_manifest(man, args.out)
    return OK


SIGMA_DEFAULT = DEFAULT_GRIDS["robustness"]["sigma"]


def _floats(text, name, defaults=()):
    """Comma list of numbers; ``lo..hi`` keeps the default grid points in range
    plus both ends."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = (float(x) for x in part.split(".."))
                pts = {lo, hi} | {d for d in defaults if lo <= d <= hi}
                out += sorted(pts)
            else:
                out.append(float(part))
        except ValueError as e:
            raise UsageError(f"--{name}: cannot parse {part!r}") from e
    if not out:
        raise UsageError(f"--{name}: empty list")
    return tuple(out)


def _ints(text, name):
    vals = _floats(text, name)
    if any(not v.is_integer() for v in vals):
        raise UsageError(f"--{name}: integers expected")
    return tuple(int(v) for v in vals)


def _pairs(text):
    out = []
    for part in str(text).split(","):
        try:
            a, b = part.split(":")
            out.append((int(a), int(b)))
        except ValueError as e:
            raise UsageError(f"--pairs: expected N_TO:N_TD items, got {part!r}") from e
    return tuple(out)


GRID_FLAGS = {
    "limit": {"d_f": ("d_f", "floats"), "balls": ("n_balls", "ints"), "cap": ("max_catches", "int")},
    "robustness": {"balls": ("n_balls", "ints"), "sigma": ("sigma", "sigma"),
                   "height": ("throw_height", "float"), "cap": ("max_catches", "int")},
    "constraints": {"dd": ("carry_distance", "floats"), "pairs": ("pairs", "pairs"),
                    "sigma": ("sigma", "float"), "cap": ("max_catches", "int")},
    "controllers": {"controllers": ("controllers", "names"), "balls": ("n_balls", "ints"),
                    "std": ("perturbation_std", "floats"), "dd": ("carry_distance", "float"),
                    "first": ("first_catches", "int")},
}


def _grid_value(kind, value, name):
    if kind == "floats":
        return _floats(value, name)
    if kind == "sigma":
        return _floats(value, name, SIGMA_DEFAULT)
    if kind == "ints":
        return _ints(value, name)
    if kind == "int":
        return _ints(value, name)[0]
    if kind == "float":
        return _floats(value, name)[0]
    if kind == "pairs":
        return _pairs(value)
    return tuple(s.strip() for s in str(value).split(",") if s.strip())


def _grid_from(settings, args):
    grid = {}
    for k, v in settings.items():
        if k.startswith(GRID_PREFIX):
            key = k[len(GRID_PREFIX):]
            if key == "pairs":
                flat = list(v) if isinstance(v, tuple) else [v]
                if len(flat) % 2:
                    raise UsageError("grid.pairs needs an even number of entries")
                v = tuple((int(flat[i]), int(flat[i + 1])) for i in range(0, len(flat), 2))
            elif isinstance(v, str):
                v = tuple(s.strip() for s in v.split(","))
            grid[key] = v
    for flag, (key, kind) in GRID_FLAGS[args.experiment].items():
        v = getattr(args, f"grid_{flag}", None)
        if v is not None:
            grid[key] = _grid_value(kind, v, flag)
    return grid


def cmd_experiment(args):
    settings = _settings(args)
    grid = _grid_from(settings, args)
    base = {k: v for k, v in settings.items() if not k.startswith(GRID_PREFIX)}
    _, _, sim = _build(base)
    seed = args.seed if args.seed is not None else sim.seed
    out = args.out
    if out not in (None, "-") and Path(out).is_dir():
        out = str(Path(out) / f"{args.experiment}.{args.format}")
    log = open(args.log, "w") if args.log else None
    try:
        res = run_experiment(args.experiment, grid, sim, trials=args.trials, seed=seed,
                             workers=args.workers, log=log)
    finally:
        if log:
            log.close()
    for r in res.rows:
        if r["failures"]:
            coords = {k: r[k] for k in res.columns[1:-5]}
            print(f"cell {coords} {r['metric']}: {r['failures']} failed trial(s)", file=sys.stderr)
    for rec in res.trials:
        if "error" in rec:
            print(f"cell {rec['cell']} trial {rec['trial']}: {rec['error']}", file=sys.stderr)
    digest = _digest([args.experiment, grid, sim.to_dict(), args.trials, int(seed)])
    mpath = _manifest_path(out)
    if args.format == "json":
        text = res.to_json()
    else:
        text = res.to_csv(comment=f"manifest: {Path(mpath).name if mpath else 'stderr'} "
                                  f"config {digest} seed {int(seed)}")
    path = _write(text, out)
    man = RunManifest("experiment " + args.experiment, digest, int(seed),
                      outputs=[p for p in (path, args.log) if p],
                      settings={"grid": grid, "config": sim.to_dict(), "trials": args.trials})
    _write_manifest(man, out)
    return OK


# parser -------------------------------------------------------------------


def _pattern_flags(p, balls=True):
    g = p.add_argument_group("pattern")
    if balls:
        g.add_argument("--balls", type=int, help="number of balls")
    g.add_argument("--dwell-ratio", type=float)
    g.add_argument("--throw-height", type=float, help="apex above the throw point (m)")
    g.add_argument("--ball-radius", type=float)
    g.add_argument("--carry-distance", type=float, help="d_d (m)")
    g.add_argument("--crossing-distance", type=float, help="distance between throw stations (m)")
    g.add_argument("--kind", choices=("cascade", "fountain"))


def _planner_flags(p):
    g = p.add_argument_group("planner")
    g.add_argument("--support-count", type=int)
    g.add_argument("--n-to", type=int)
    g.add_argument("--n-td", type=int)
    g.add_argument("--jerk-limit", type=float)


def _sim_flags(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--mode", choices=("floating_hands", "arm"))
    g.add_argument("--controller", choices=("PD", "PD+G", "PD+FF", "ID", "ID-literal"))
    g.add_argument("--sigma", type=float, help="take-off disturbance per axis (m/s)")
    g.add_argument("--no-collisions", action="store_true")
    g.add_argument("--cap", type=int, help="catch cap")
    g.add_argument("--model-std", type=float, help="controller model mass perturbation std")
    g.add_argument("--arm-model", help="shipped model name or path to a .arm file")


def build_parser():
    p = _Parser(prog="tossjuggle", description="Juggling pattern planning and simulation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bound", help="pattern timing and the ball-count bound")
    b.add_argument("--config")
    _pattern_flags(b)
    b.add_argument("--d-f", type=float, help="throw travel distance; sets the crossing distance")
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.set_defaults(func=cmd_bound)

    pl = sub.add_parser("plan", help="plan one nominal cycle")
    pl.add_argument("space", nargs="?", choices=("task", "joint"), default="task")
    pl.add_argument("--config")
    _pattern_flags(pl)
    _planner_flags(pl)
    pl.add_argument("--arm-model", help="shipped model name or .arm path (joint space)")
    pl.add_argument("--hand", type=int, choices=(0, 1), default=0)
    pl.add_argument("--cycle", type=int, default=1)
    pl.add_argument("--tol", type=float, default=1e-6, help="residual tolerance")
    pl.add_argument("--out")
    pl.add_argument("--format", choices=("csv", "json"), default="csv")
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="run trials of one configuration")
    s.add_argument("--config")
    _pattern_flags(s)
    _planner_flags(s)
    _sim_flags(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--out")
    s.add_argument("--log", help="JSON-lines event log")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", help="run an experiment matrix")
    e.add_argument("experiment", choices=tuple(GRID_FLAGS))
    e.add_argument("--config")
    _pattern_flags(e, balls=False)
    _planner_flags(e)
    g = e.add_argument_group("grid")
    g.add_argument("--balls", dest="grid_balls", help="ball counts, e.g. 3,5,7")
    g.add_argument("--sigma", dest="grid_sigma", help="disturbances, e.g. 0.001..0.02")
    g.add_argument("--dd", dest="grid_dd", help="carry distances (m)")
    g.add_argument("--d-f", dest="grid_d_f", help="throw travel distances (limit)")
    g.add_argument("--pairs", dest="grid_pairs", help="N_TO:N_TD pairs, e.g. 2:2,2:0,0:2")
    g.add_argument("--controllers", dest="grid_controllers", help="e.g. PD,PD+FF,ID")
    g.add_argument("--std", dest="grid_std", help="model perturbation stds")
    g.add_argument("--height", dest="grid_height", help="throw height (robustness)")
    g.add_argument("--first", dest="grid_first", help="catches averaged (controllers)")
    g.add_argument("--cap", dest="grid_cap", help="catch cap")
    e.add_argument("--seed", type=int)
    e.add_argument("--trials", type=int)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", help="output file or directory")
    e.add_argument("--log", help="JSON-lines per-trial log")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "experiment":
        used = {f for f in GRID_FLAGS[args.experiment]}
        for flag in ("balls", "sigma", "dd", "d_f", "pairs", "controllers", "std", "height",
                     "first", "cap"):
            if getattr(args, f"grid_{flag}") is not None and flag not in used:
                parser.exit(USAGE, f"tossjuggle: error: --{flag.replace('_', '-')} does not "
                                   f"apply to the {args.experiment} experiment\n")
    try:
        return args.func(args)
    except (UsageError, cfgfile.ConfigError, ExperimentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    except (PatternError, PlanningError, IKError, UnreachableError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return INFEASIBLE
    except SimConfigError as e:
        infeasible = "infeasible" in str(e)
        print(f"{'infeasible' if infeasible else 'error'}: {e}", file=sys.stderr)
        return INFEASIBLE if infeasible else USAGE
    except SQPError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return SOLVER
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
