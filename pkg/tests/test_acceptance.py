"""Acceptance suite: the ten pinned criteria, one PASS/FAIL line each.

Runs in roughly twenty minutes on one core.  ``python3 tests/test_acceptance.py``
prints the summary lines without pytest.
"""
import math
import os
import sys
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import spearmanr

sys.path.insert(0, os.path.dirname(__file__))
from oracles import refined_cost_gap  # noqa: E402

from tossjuggle.arm import dynamics, kinematics  # noqa: E402
from tossjuggle.arm.kinematics import JointState  # noqa: E402
from tossjuggle.arm.model import shipped_model  # noqa: E402
from tossjuggle.pattern import (PatternSpec, derive_timing, max_balls,  # noqa: E402
                                shannon_residual)
from tossjuggle.sim import SimConfig, run_experiment, run_trial  # noqa: E402
from tossjuggle.trajopt_joint import verify_task_constraints  # noqa: E402
from tossjuggle.trajopt_task import PlannerConfig, kkt_multiplier_check  # noqa: E402

pytestmark = pytest.mark.acceptance
SEED = 2024
WORKERS = os.cpu_count() or 1


def report(n, title, ok, detail):
    line = f"criterion {n:2d} {title}: {'PASS' if ok else 'FAIL'}  {detail}"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


@lru_cache(None)
def limit_result():
    return run_experiment("limit", {"d_f": (0.62,)}, seed=SEED, workers=WORKERS)


@lru_cache(None)
def robustness_result():
    return run_experiment("robustness", seed=SEED, workers=WORKERS)


@lru_cache(None)
def constraints_result():
    return run_experiment("constraints", seed=SEED, workers=WORKERS)


@lru_cache(None)
def controllers_result():
    return run_experiment("controllers", seed=SEED, workers=WORKERS)


def _se(row):
    return row["std"] / math.sqrt(row["n"]) if row["n"] > 1 else 0.0


# 1 ---------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_shannon = worst_spacing = worst_cycle = 0.0
    count = 0
    while count < 2000:
        nb, nh = int(rng.integers(1, 41)), int(rng.integers(1, 7))
        R, h = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 20.0))
        if nb / nh <= R:
            continue
        spec = PatternSpec(nb, nh, R, h, carry_distance=float(rng.uniform(0, 0.5)))
        t = derive_timing(spec, "cascade")
        worst_shannon = max(worst_shannon, shannon_residual(t, nb, nh) / t.cycle_time)
        worst_cycle = max(worst_cycle, abs(t.cycle_time - t.vacant_time - t.dwell_time) / t.cycle_time)
        d = t.travel_distance / t.balls_in_air - 2 * spec.ball_radius
        worst_spacing = max(worst_spacing, abs(t.ball_spacing - d))
        count += 1
    dt = time.perf_counter() - t0
    worst = max(worst_shannon, worst_spacing, worst_cycle)
    ok = worst < 1e-12 and dt < 1.0
    return report(1, "Shannon/spacing identities", ok,
                  f"{count} random specs, max residual {worst:.2e} (< 1e-12), {dt:.2f} s (< 1 s)")


# 2, 3 ------------------------------------------------------------------------

def criterion_2():
    res = limit_result()
    stable = {}
    for nb in range(3, 18, 2):
        r = res.value("catches", d_f=0.62, n_balls=nb)
        stable[nb] = r["n"] > 0 and r["mean"] >= 500
    inf = res.value("catches", d_f=0.62, n_balls=19)
    infeasible_19 = inf["n"] == 0 and inf["failures"] > 0
    bound = max_balls(0.62, 0.0375, 0.5)
    ok = all(stable.values()) and infeasible_19 and bound == 17
    bad = [nb for nb, s in stable.items() if not s]
    return report(2, "kinematic bound", ok,
                  f"stable at cap 500 for N_b 3..17: {'all' if not bad else 'not ' + str(bad)}; "
                  f"N_b=19 schedule-infeasible: {infeasible_19}; bound {bound}")


def criterion_3():
    gap = limit_result().value("min_interball_distance", d_f=0.62, n_balls=17)["mean"]
    ok = abs(gap - 0.0025) <= 0.0005
    return report(3, "17-ball minimum distance", ok, f"{gap * 1000:.4f} mm (2.5 +- 0.5 mm)")


# 4 ---------------------------------------------------------------------------

def criterion_4():
    res = robustness_result()
    sig = (0.001, 0.005, 0.01, 0.02)
    problems = []
    for nb in (3, 5, 7):
        rows = [res.value("catches", n_balls=nb, sigma=s, collisions=True) for s in sig]
        for a, b in zip(rows, rows[1:]):
            if b["mean"] > a["mean"] + max(_se(a), _se(b)):
                problems.append(f"{nb} balls rises {a['mean']:.1f}->{b['mean']:.1f} "
                                f"at sigma {a['sigma']}->{b['sigma']}")
    for s in sig:
        m = {nb: res.value("catches", n_balls=nb, sigma=s, collisions=True) for nb in (3, 5, 7)}
        for lo, hi in ((7, 5), (5, 3)):
            if m[lo]["mean"] > m[hi]["mean"] + max(_se(m[lo]), _se(m[hi])):
                problems.append(f"sigma {s}: {lo}-ball {m[lo]['mean']:.1f} > {hi}-ball "
                                f"{m[hi]['mean']:.1f}")
    paired = {}
    for rec in res.trials:
        c = rec["cell"]
        key = (c["n_balls"], c["sigma"], rec["trial"])
        paired.setdefault(key, {})[c["collisions"]] = rec.get("catches")
    worse = [k for k, v in paired.items() if v.get(False) is not None and v.get(True) is not None
             and v[False] < v[True]]
    if worse:
        problems.append(f"{len(worse)} paired runs lose catches without collisions")
    means = {nb: [round(res.value('catches', n_balls=nb, sigma=s, collisions=True)['mean'], 1)
                  for s in sig] for nb in (3, 5, 7)}
    return report(4, "robustness trend", not problems,
                  f"means by sigma {means}; {len(paired)} pairs checked"
                  + ("" if not problems else "; " + "; ".join(problems)))


# 5 ---------------------------------------------------------------------------

def criterion_5():
    res = constraints_result()
    dds = sorted({r["carry_distance"] for r in res.rows})
    m = {(dd, a, b): res.value("catches", carry_distance=dd, n_to=a, n_td=b)["mean"]
         for dd in dds for a, b in ((2, 2), (2, 0), (0, 2))}
    big = dds[-1]
    full = m[(big, 2, 2)]
    no_td, no_to = m[(big, 2, 0)], m[(big, 0, 2)]
    deficit = [m[(dd, 2, 2)] - 0.5 * (m[(dd, 2, 0)] + m[(dd, 0, 2)]) for dd in dds]
    rho = spearmanr(dds, deficit).statistic
    ok = no_td < 0.5 * full and no_to < 0.5 * full and full >= 90 and rho > 0
    return report(5, "constraint ablation", ok,
                  f"d_d={big}: (2,2) {full:.1f}, (2,0) {no_td:.1f}, (0,2) {no_to:.1f}; "
                  f"deficit by d_d {[round(x, 1) for x in deficit]}, rank corr {rho:.2f}")


# 6, 7 ------------------------------------------------------------------------

def criterion_6():
    res = controllers_result()

    def row(metric, ctrl, nb):
        return res.value(metric, study="tracking", controller=ctrl, n_balls=nb)

    err = {c: row("touch_down_error", c, 5)["mean"] for c in ("PD", "PD+G", "PD+FF", "ID")}
    caught5 = {c: row("catches", c, 5)["mean"] for c in err}
    caught7 = {c: row("catches", c, 7)["mean"] for c in err}
    enough = all(caught5[c] >= 20 for c in ("PD", "PD+FF", "ID"))
    ok = (enough and err["ID"] < err["PD+FF"] < err["PD"] and caught7["PD"] < 20
          and caught7["PD+G"] < 20 and caught7["ID"] >= 90)
    return report(6, "controller ordering", ok,
                  "5-ball error (m) " + ", ".join(f"{c} {v:.4f}" for c, v in err.items())
                  + "; 7-ball catches " + ", ".join(f"{c} {v:.0f}" for c, v in caught7.items()))


def criterion_7():
    res = controllers_result()
    fits = {}
    for ctrl in ("PD+FF", "ID"):
        rows = sorted(res.select("touch_down_error", study="perturbation", controller=ctrl),
                      key=lambda r: r["perturbation_std"])
        x = [r["perturbation_std"] for r in rows]
        y = [r["mean"] for r in rows]
        slope, icpt = np.polyfit(x, y, 1)
        fits[ctrl] = (slope, icpt, min(r["n"] for r in rows))
    ok = fits["ID"][0] > fits["PD+FF"][0] and fits["ID"][1] < fits["PD+FF"][1]
    return report(7, "model-perturbation sensitivity", ok,
                  ", ".join(f"{c} slope {s:.4f} intercept {i:.4f} (n>={n})"
                            for c, (s, i, n) in fits.items()))


# 8 ---------------------------------------------------------------------------

def criterion_8():
    task, joint = [], []

    def keep(hand, problem, sol, jp):
        if jp is None:
            task.append((problem, sol))
        else:
            joint.append((jp, hand, sol))

    planner = PlannerConfig(jerk_limit=1e5)
    for nb, h in ((3, 0.8), (5, 0.8), (7, 1.8)):
        cfg = SimConfig(PatternSpec(nb, throw_height=h), disturbance_sigma=0.005, max_catches=20,
                        planner=planner)
        run_trial(cfg, seed=SEED, on_solve=keep)
    arm_cfg = SimConfig(PatternSpec(5, carry_distance=0.15), mode="arm", controller="ID",
                        max_catches=20)
    run_trial(arm_cfg, seed=SEED, on_solve=keep)
    base = shipped_model(arm_cfg.arm_model)
    models = {0: base.mirrored(), 1: base}
    kkt = [kkt_multiplier_check(p, s) for p, s in task if s.ok]
    gaps = [refined_cost_gap(p, s) for p, s in task if s.ok]
    fk = [max(verify_task_constraints(jp, models[h], s).values()) for jp, h, s in joint]
    ok_kkt = max(kkt) < 1e-6
    ok_gap = max(gaps) < 0.02
    ok_fk = max(fk) < 1e-6
    ok = ok_kkt and ok_gap and ok_fk and len(kkt) == len(task)
    return report(8, "solver correctness", ok,
                  f"{len(kkt)} task solves: KKT max {max(kkt):.1e} ({'ok' if ok_kkt else 'FAIL'}), "
                  f"refined-grid cost gap max {100 * max(gaps):.1f} % min {100 * min(gaps):.1f} % "
                  f"(< 2 %: {'ok' if ok_gap else 'FAIL'}); {len(fk)} joint solves: "
                  f"FK max {max(fk):.1e} ({'ok' if ok_fk else 'FAIL'})")


# 9 ---------------------------------------------------------------------------

def criterion_9():
    wam, planar = shipped_model("wam4"), shipped_model("planar2")
    rng = np.random.default_rng(SEED)
    lo, hi = wam.joint_limits[:, 0], wam.joint_limits[:, 1]
    jac_err = jd_err = 0.0
    h, eps = 1e-6, 1e-7
    for _ in range(20):
        q = rng.uniform(np.maximum(lo, -2.5), np.minimum(hi, 2.5))
        qd = rng.normal(size=q.size)
        fd = np.column_stack([(kinematics.forward_kinematics(wam, q + h * e)[0]
                               - kinematics.forward_kinematics(wam, q - h * e)[0]) / (2 * h)
                              for e in np.eye(q.size)])
        jac_err = max(jac_err, np.max(np.abs(kinematics.jacobian(wam, q) - fd)))
        fdd = (kinematics.jacobian(wam, q + eps * qd) - kinematics.jacobian(wam, q)) / eps
        jd_err = max(jd_err, np.max(np.abs(kinematics.jacobian_dot(wam, q, qd) - fdd)))
    l1, l2, m1, m2, g = 0.5, 0.4, 1.5, 1.0, 9.81
    rne_err = 0.0
    for _ in range(20):
        q, qd, qdd = rng.uniform(-3, 3, 2), rng.normal(size=2), rng.normal(size=2)
        c2, s2 = np.cos(q[1]), np.sin(q[1])
        M = np.array([[m1 * l1 ** 2 + m2 * (l1 ** 2 + l2 ** 2 + 2 * l1 * l2 * c2), m2 * (l2 ** 2 + l1 * l2 * c2)],
                      [m2 * (l2 ** 2 + l1 * l2 * c2), m2 * l2 ** 2]])
        hh = m2 * l1 * l2 * s2
        c = np.array([-hh * (2 * qd[0] * qd[1] + qd[1] ** 2), hh * qd[0] ** 2])
        c12 = np.cos(q[0] + q[1])
        gv = np.array([(m1 + m2) * g * l1 * np.cos(q[0]) + m2 * g * l2 * c12, m2 * g * l2 * c12])
        tau = dynamics.inverse_dynamics(planar, q, qd, qdd)
        rne_err = max(rne_err, np.max(np.abs(tau - (M @ qdd + c + gv))))
    q0 = np.array([0.4, -0.3])
    tr = dynamics.simulate_arm_dynamics(planar, np.zeros((1000, 2)), JointState.rest(q0))
    T = np.array([dynamics.kinetic_energy(planar, q, qd) for q, qd in zip(tr.q, tr.qd)])
    V = np.array([dynamics.potential_energy(planar, q) for q in tr.q])
    E = T + V
    drift = float(np.max(np.abs(E - E[0])) / max(abs(E[0]), np.max(T)))
    ok = jac_err < 1e-5 and jd_err < 1e-5 and rne_err < 1e-10 and drift < 1e-6
    return report(9, "numerics oracles", ok,
                  f"J FD {jac_err:.1e}, Jdot FD {jd_err:.1e} (< 1e-5); RNE vs 2-link "
                  f"{rne_err:.1e} (< 1e-10); energy drift over 2 s {drift:.1e} (< 1e-6)")


# 10 --------------------------------------------------------------------------

def criterion_10():
    runs = {
        "limit": {"n_balls": (5, 17), "max_catches": 50},
        "robustness": {"n_balls": (3, 7), "sigma": (0.005, 0.02), "max_catches": 30},
        "constraints": {"carry_distance": (0.12, 0.2), "pairs": ((2, 2), (2, 0)), "max_catches": 30},
        "controllers": {"controllers": ("PD+FF", "ID"), "n_balls": (5,), "tracking_catches": 10,
                        "perturbation_std": (0.0, 0.1), "first_catches": 10},
    }
    trials = {"limit": 1, "robustness": 4, "constraints": 3, "controllers": 2}
    same = {}
    for kind, grid in runs.items():
        a = run_experiment(kind, grid, trials=trials[kind], seed=SEED).to_csv()
        b = run_experiment(kind, grid, trials=trials[kind], seed=SEED,
                           workers=max(2, WORKERS)).to_csv()
        same[kind] = a == b
    return report(10, "determinism", all(same.values()),
                  "byte-identical reruns: " + ", ".join(f"{k} {v}" for k, v in same.items()))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i + 1}" for i in range(10)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
