"""Experiment matrices over many trials.

Every trial gets its own seed derived from the base seed, the experiment kind,
the cell coordinates and the trial index, so a table does not depend on the
order (or process) in which its trials run.  Coordinates listed in
``PAIRED`` are left out of the key: runs that differ only in those share their
random streams (collisions on/off in the robustness study, the controller in
the controller studies, which then see the same perturbed models).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..pattern import PatternSpec, ball_spacing, balls_in_air, max_balls
from .trial import SimConfig, SimConfigError, run_trial

KINDS = ("limit", "robustness", "constraints", "controllers")
REFERENCE_CYCLE = 0.404
MIN_HEIGHT = 0.8
TOTAL_DEXTERITY = 1e5

COORDS = {
    "limit": ("d_f", "n_balls"),
    "robustness": ("n_balls", "sigma", "collisions"),
    "constraints": ("carry_distance", "n_to", "n_td"),
    "controllers": ("study", "controller", "n_balls", "perturbation_std"),
}
PAIRED = {"limit": (), "robustness": ("collisions",), "constraints": (),
          "controllers": ("controller",)}
HEADER = ("kind",)  # + coordinates + the columns below
STAT_COLUMNS = ("metric", "mean", "std", "n", "failures")

DEFAULT_GRIDS = {
    "limit": {"d_f": (0.62,), "n_balls": None, "max_catches": 500, "trials": 1},
    "robustness": {"n_balls": (3, 5, 7), "sigma": (0.001, 0.005, 0.01, 0.02),
                   "collisions": (True, False), "throw_height": 1.8, "max_catches": 100,
                   "trials": 50},
    "constraints": {"carry_distance": (0.12, 0.16, 0.20),
                    "pairs": ((2, 2), (1, 2), (0, 2), (2, 1), (2, 0)),
                    "n_balls": 5, "sigma": 0.01, "max_catches": 100, "trials": 50},
    "controllers": {"controllers": ("PD", "PD+G", "PD+FF", "ID"), "n_balls": (5, 7),
                    "heights": {5: 0.8, 7: 1.8}, "tracking_catches": 100,
                    "perturbation_controllers": ("PD+FF", "ID"),
                    "perturbation_std": (0.0, 0.05, 0.1, 0.2), "perturbation_balls": 5,
                    "first_catches": 20, "carry_distance": 0.15, "trials": 50,
                    "tracking_trials": 1},
}


class ExperimentError(ValueError):
    """Invalid experiment kind or grid."""


def reference_height(n_balls, dwell_ratio=0.5, n_hands=2, g=9.81):
    """Throw height giving the reference cycle time, floored at ``MIN_HEIGHT``.

    Below the floor the low, fast arcs of small patterns pass through the
    neighbouring hand's catch point.
    """
    w = balls_in_air(n_balls, n_hands, dwell_ratio)
    return max(MIN_HEIGHT, g * (w * REFERENCE_CYCLE) ** 2 / 8.0)


@dataclass
class Cell:
    coords: dict
    config: SimConfig | None
    trials: int
    metrics: tuple = ("catches",)
    first: int | None = None
    failure: str = ""


@dataclass
class ExperimentResult:
    kind: str
    columns: tuple
    rows: list
    trials: list = field(default_factory=list)

    def to_csv(self, comment=None):
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"kind": self.kind, "columns": list(self.columns),
                           "rows": [{c: _jsonable(r[c]) for c in self.columns} for r in self.rows]},
                          indent=1, sort_keys=True) + "\n"

    def select(self, metric=None, **coords):
        out = []
        for r in self.rows:
            if metric is not None and r["metric"] != metric:
                continue
            if all(_same(r.get(k), v) for k, v in coords.items()):
                out.append(r)
        return out

    def value(self, metric, **coords):
        rows = self.select(metric, **coords)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {metric} {coords}")
        return rows[0]


def _same(a, b):
    if isinstance(a, float) or isinstance(b, float):
        try:
            return math.isclose(float(a), float(b), rel_tol=0, abs_tol=1e-12)
        except (TypeError, ValueError):
            return False
    return a == b


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def trial_seed(base_seed, kind, coords, trial, paired=()):
    key = {k: v for k, v in coords.items() if k not in paired}
    text = json.dumps([kind, sorted(key.items())], default=repr)
    digest = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(digest, int(trial)))


def _grid(kind, grid):
    if kind not in KINDS:
        raise ExperimentError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    base = dict(DEFAULT_GRIDS[kind])
    for k, v in (grid or {}).items():
        if k not in base:
            raise ExperimentError(f"unknown grid key {k!r} for {kind}; known: {sorted(base)}")
        base[k] = v
    return base


def _seq(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def _pattern(config: SimConfig, **kw):
    return replace(config.pattern, **kw)


def _limit_cells(g, config):
    cells = []
    p = config.pattern
    planner = replace(config.planner, jerk_limit=max(config.planner.jerk_limit, TOTAL_DEXTERITY))
    for d_f in _seq(g["d_f"]):
        c = d_f - p.carry_distance
        if c < 0:
            raise ExperimentError(f"d_f={d_f} is shorter than the carry distance")
        bound = max_balls(d_f, p.ball_radius, p.dwell_ratio, p.n_hands)
        counts = _seq(g["n_balls"]) if g["n_balls"] is not None else \
            tuple(range(3, bound + 3, 2))
        metrics = ("catches", "stable", "min_interball_distance")
        for nb in counts:
            coords = {"d_f": float(d_f), "n_balls": int(nb)}
            w = balls_in_air(nb, p.n_hands, p.dwell_ratio)
            if ball_spacing(d_f, w, p.ball_radius) <= 0:
                cells.append(Cell(coords, None, 0, metrics, failure="infeasible: d_b <= 0"))
                continue
            pat = _pattern(config, n_balls=int(nb), crossing_distance=float(c),
                           throw_height=reference_height(nb, p.dwell_ratio, p.n_hands))
            cfg = replace(config, pattern=pat, kind="cascade", disturbance_sigma=0.0,
                          max_catches=int(g["max_catches"]), planner=planner)
            cells.append(Cell(coords, cfg, int(g["trials"]), metrics))
    return cells


def _robustness_cells(g, config):
    cells = []
    planner = replace(config.planner, jerk_limit=max(config.planner.jerk_limit, TOTAL_DEXTERITY))
    for nb in _seq(g["n_balls"]):
        pat = _pattern(config, n_balls=int(nb), throw_height=float(g["throw_height"]))
        for s in _seq(g["sigma"]):
            for col in _seq(g["collisions"]):
                cfg = replace(config, pattern=pat, kind=None, disturbance_sigma=float(s),
                              collisions_enabled=bool(col), max_catches=int(g["max_catches"]),
                              planner=planner)
                cells.append(Cell({"n_balls": int(nb), "sigma": float(s), "collisions": bool(col)},
                                  cfg, int(g["trials"])))
    return cells


def _constraint_cells(g, config):
    cells = []
    for dd in _seq(g["carry_distance"]):
        pat = _pattern(config, n_balls=int(g["n_balls"]), carry_distance=float(dd))
        for n_to, n_td in g["pairs"]:
            planner = replace(config.planner, n_to=int(n_to), n_td=int(n_td))
            cfg = replace(config, pattern=pat, kind=None, disturbance_sigma=float(g["sigma"]),
                          max_catches=int(g["max_catches"]), planner=planner)
            cells.append(Cell({"carry_distance": float(dd), "n_to": int(n_to), "n_td": int(n_td)},
                              cfg, int(g["trials"])))
    return cells


def _controller_cells(g, config):
    cells = []
    heights = {int(k): float(v) for k, v in dict(g["heights"]).items()}

    def pattern(nb):
        h = heights.get(int(nb), reference_height(nb))
        return _pattern(config, n_balls=int(nb), throw_height=h,
                        carry_distance=float(g["carry_distance"]))

    for nb in _seq(g["n_balls"]):
        for ctrl in _seq(g["controllers"]):
            cfg = replace(config, pattern=pattern(nb), kind=None, mode="arm", controller=ctrl,
                          model_perturbation_std=0.0, max_catches=int(g["tracking_catches"]))
            cells.append(Cell({"study": "tracking", "controller": ctrl, "n_balls": int(nb),
                               "perturbation_std": 0.0}, cfg, int(g["tracking_trials"]),
                              metrics=("catches", "touch_down_error"),
                              first=int(g["first_catches"])))
    nb = int(g["perturbation_balls"])
    for ctrl in _seq(g["perturbation_controllers"]):
        for std in _seq(g["perturbation_std"]):
            cfg = replace(config, pattern=pattern(nb), kind=None, mode="arm", controller=ctrl,
                          model_perturbation_std=float(std), max_catches=int(g["first_catches"]))
            cells.append(Cell({"study": "perturbation", "controller": ctrl, "n_balls": nb,
                               "perturbation_std": float(std)}, cfg, int(g["trials"]),
                              metrics=("catches", "touch_down_error"),
                              first=int(g["first_catches"])))
    return cells


_BUILDERS = {"limit": _limit_cells, "robustness": _robustness_cells,
             "constraints": _constraint_cells, "controllers": _controller_cells}


def _run_one(args):
    cfg, seed, want_events = args
    events = [] if want_events else None
    try:
        rep = run_trial(cfg, seed=seed, log=events.append if want_events else None)
    except SimConfigError as e:
        return None, f"config: {e}", events
    except Exception as e:  # recorded per cell, the matrix goes on
        return None, f"{type(e).__name__}: {e}", events
    return rep, "", events


def _metric(rep, metric, cfg, first):
    if metric == "catches":
        return float(rep.catches)
    if metric == "stable":
        return float(rep.catches >= cfg.max_catches)
    if metric == "min_interball_distance":
        return float(rep.min_interball_distance)
    if metric == "touch_down_error":
        return rep.mean_error(first)
    raise KeyError(metric)


def _stats(values):
    v = np.array([x for x in values if math.isfinite(x)], float)
    if v.size == 0:
        return math.nan, math.nan, 0
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, int(v.size)


def run_experiment(kind, grid=None, config: SimConfig | None = None, *, trials=None, seed=None,
                   workers=1, log=None):
    """Run one experiment matrix and aggregate it into a long-format table.

    Parameters
    ----------
    kind : {"limit", "robustness", "constraints", "controllers"}
    grid : dict, optional
        Overrides of the entries in ``DEFAULT_GRIDS[kind]``.
    config : SimConfig, optional
        Base trial settings; the grid overrides the pattern and the swept fields.
        The default uses the paper layout (``c = 0.52``, ``d_d = 0.10``).
    trials, seed : int, optional
        Override the grid's trial count and ``config.seed``.
    workers : int
        Process pool size; the table is identical for any value.
    log : file-like, optional
        Receives JSON lines: one record per trial and, nested, its events.

    Returns
    -------
    ExperimentResult
        One row per cell and metric with ``mean``, ``std`` (sample), ``n``
        (finite values) and ``failures`` (trials that raised).  Infeasible
        cells have ``n = 0`` and a failure count equal to the trial count.
        The limit study also yields ``max_stable_balls`` and ``bound`` rows
        per ``d_f`` (``n_balls`` empty).
    """
    g = _grid(kind, grid)
    if trials is not None:
        g["trials"] = int(trials)
    config = config or SimConfig(PatternSpec(5))
    base_seed = config.seed if seed is None else int(seed)
    cells = _BUILDERS[kind](g, config)
    jobs = []
    for ci, cell in enumerate(cells):
        for t in range(cell.trials if cell.config is not None else 0):
            s = trial_seed(base_seed, kind, cell.coords, t, PAIRED[kind])
            jobs.append((ci, t, (cell.config, s, log is not None)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            outs = list(pool.map(_run_one, [j[2] for j in jobs], chunksize=4))
    else:
        outs = [_run_one(j[2]) for j in jobs]

    per_cell = [[] for _ in cells]
    records = []
    for (ci, t, _), (rep, err, events) in zip(jobs, outs):
        per_cell[ci].append((rep, err))
        rec = {"cell": cells[ci].coords, "trial": t}
        rec.update(rep.to_dict() if rep is not None else {"error": err})
        rec.pop("per_cycle_solve_stats", None)
        records.append(rec)
        if log is not None:
            if events:
                rec = dict(rec, events=events)
            log.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")

    columns = HEADER + COORDS[kind] + STAT_COLUMNS
    rows = []
    for cell, results in zip(cells, per_cell):
        for m in cell.metrics:
            if cell.config is None:
                mean, std, n = math.nan, math.nan, 0
                fails = max(int(g["trials"]), 1)
            else:
                vals = [_metric(r, m, cell.config, cell.first) for r, e in results if r is not None]
                mean, std, n = _stats(vals)
                fails = sum(1 for r, _ in results if r is None)
            rows.append(dict({"kind": kind}, **cell.coords, metric=m, mean=mean, std=std, n=n,
                             failures=fails))
    if kind == "limit":
        rows += _limit_summary(rows, config)
    return ExperimentResult(kind, columns, rows, records)


def _limit_summary(rows, config):
    p = config.pattern
    out = []
    for d_f in sorted({r["d_f"] for r in rows}):
        stable = [r["n_balls"] for r in rows if r["d_f"] == d_f and r["metric"] == "stable"
                  and r["n"] > 0 and r["mean"] == 1.0]
        for metric, value in (("max_stable_balls", float(max(stable)) if stable else math.nan),
                              ("bound", float(max_balls(d_f, p.ball_radius, p.dwell_ratio,
                                                        p.n_hands)))):
            out.append({"kind": "limit", "d_f": d_f, "n_balls": None, "metric": metric,
                        "mean": value, "std": 0.0, "n": 1, "failures": 0})
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return repr(o)


__all__ = ["KINDS", "DEFAULT_GRIDS", "ExperimentError", "ExperimentResult", "reference_height",
           "run_experiment", "trial_seed"]
