import io
import json
import math

import numpy as np
import pytest

from tossjuggle.pattern import PatternSpec
from tossjuggle.sim import (ExperimentError, SimConfig, reference_height, run_experiment,
                            trial_seed)


def _state(ss):
    return np.random.default_rng(ss).integers(0, 2 ** 63, 4).tolist()


def test_paired_seeds():
    a = trial_seed(1, "robustness", {"n_balls": 5, "sigma": 0.01, "collisions": True}, 3,
                   ("collisions",))
    b = trial_seed(1, "robustness", {"n_balls": 5, "sigma": 0.01, "collisions": False}, 3,
                   ("collisions",))
    c = trial_seed(1, "robustness", {"n_balls": 5, "sigma": 0.02, "collisions": True}, 3,
                   ("collisions",))
    d = trial_seed(1, "robustness", {"n_balls": 5, "sigma": 0.01, "collisions": True}, 4,
                   ("collisions",))
    assert _state(a) == _state(b)
    assert len({str(_state(x)) for x in (a, c, d)}) == 3


def test_reference_height():
    assert reference_height(5) == pytest.approx(0.8, abs=1e-3)
    assert reference_height(3) == 0.8
    w = 17 / 2 - 0.5
    assert reference_height(17) == pytest.approx(9.81 * (w * 0.404) ** 2 / 8, rel=1e-15)


def test_limit_table():
    res = run_experiment("limit", {"n_balls": (3, 17, 19), "max_catches": 40})
    assert res.value("stable", d_f=0.62, n_balls=3)["mean"] == 1.0
    gap = res.value("min_interball_distance", d_f=0.62, n_balls=17)["mean"]
    assert gap == pytest.approx(0.0025, abs=5e-4)
    infeasible = res.value("catches", d_f=0.62, n_balls=19)
    assert infeasible["n"] == 0 and infeasible["failures"] >= 1
    assert res.value("bound", d_f=0.62, n_balls=None)["mean"] == 17.0
    assert res.value("max_stable_balls", d_f=0.62, n_balls=None)["mean"] == 17.0


def test_constraints_layout():
    res = run_experiment("constraints", {"carry_distance": (0.05, 0.10, 0.15), "max_catches": 3},
                         trials=1)
    rows = res.select("catches")
    assert len(rows) == 3 * 5
    assert [(r["carry_distance"], r["n_to"], r["n_td"]) for r in rows][:5] == \
        [(0.05, 2, 2), (0.05, 1, 2), (0.05, 0, 2), (0.05, 2, 1), (0.05, 2, 0)]


def test_rerun_is_byte_identical_and_worker_independent():
    grid = {"n_balls": (3, 7), "sigma": (0.005, 0.02), "max_catches": 15}
    a = run_experiment("robustness", grid, trials=3, seed=9).to_csv()
    b = run_experiment("robustness", grid, trials=3, seed=9).to_csv()
    c = run_experiment("robustness", grid, trials=3, seed=9, workers=2).to_csv()
    assert a == b == c
    assert a != run_experiment("robustness", grid, trials=3, seed=10).to_csv()


def test_log_lines_and_stats():
    log = io.StringIO()
    res = run_experiment("robustness", {"n_balls": (5,), "sigma": (0.01,), "max_catches": 10,
                                        "collisions": (True,)}, trials=4, seed=2, log=log)
    recs = [json.loads(line) for line in log.getvalue().splitlines()]
    assert len(recs) == 4
    catches = [r["catches"] for r in recs]
    row = res.value("catches", n_balls=5, sigma=0.01, collisions=True)
    assert row["mean"] == pytest.approx(np.mean(catches), abs=1e-12)
    assert row["std"] == pytest.approx(np.std(catches, ddof=1), abs=1e-12)
    assert row["n"] == 4
    assert all("events" in r for r in recs)


def test_json_has_no_nans():
    res = run_experiment("limit", {"n_balls": (19,)})
    text = res.to_json()
    assert "NaN" not in text
    assert json.loads(text)["rows"][0]["mean"] is None
    assert math.isnan(res.rows[0]["mean"])


def test_controllers_small():
    cfg = SimConfig(PatternSpec(5))
    res = run_experiment("controllers", {"controllers": ("ID",), "n_balls": (5,),
                                         "tracking_catches": 5, "first_catches": 5,
                                         "perturbation_controllers": ("ID",),
                                         "perturbation_std": (0.0, 0.1)}, cfg, trials=1, seed=0)
    tr = res.value("touch_down_error", study="tracking", controller="ID", n_balls=5)
    assert tr["n"] == 1 and tr["mean"] < 0.05
    pert = res.select("touch_down_error", study="perturbation")
    assert [r["perturbation_std"] for r in pert] == [0.0, 0.1]


def test_bad_grids():
    with pytest.raises(ExperimentError):
        run_experiment("juggling")
    with pytest.raises(ExperimentError):
        run_experiment("limit", {"sigma": (0.1,)})
