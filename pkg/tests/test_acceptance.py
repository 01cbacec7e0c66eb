"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Criteria 4, 5 and 9 read the reports produced by the first of the two
``oplab run-all`` invocations made for criterion 12, and cross-check the
headline numbers with direct solves.
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import reference as ref
from oplab.capacity import check_levelset_convergence
from oplab.mesh import Atom, DiscreteMeasure, Obstacle, assemble_operator, build_interval, build_radial_mesh, discretize_measure, probe
from oplab.oracles import GreenBall, OrsinaDatum, SandwichObstacle, minus_green_obstacle
from oplab.suite import (
    capacity_trials,
    disk_capacity_trace,
    energy_stability_trials,
    shift_identity_trials,
    truncation_energy_trials,
    uniform_stability_trials,
)
from oplab.vi import ACTIVE_SET, SolverConfig, certificate_bound, solve_linear, solve_vi

G3 = GreenBall(3, 1.0)


@pytest.fixture(scope="module")
def run_all_twice(tmp_path_factory):
    root = tmp_path_factory.mktemp("runall")
    env = dict(os.environ, OPLAB_THREADS=os.environ.get("OPLAB_THREADS", "1"))
    codes, seconds = [], []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        res = subprocess.run([sys.executable, "-m", "oplab.cli", "run-all", "--out", str(root / name)],
                             capture_output=True, text=True, env=env)
        seconds.append(time.perf_counter() - t0)
        codes.append(res.returncode)
        assert (root / name / "summary.json").exists(), res.stderr[-2000:]
    return root, codes, seconds


def report(root, sid):
    return json.loads((root / "a" / sid / "report.json").read_text())


def test_criterion_01_shift_identity(criterion):
    res = shift_identity_trials(200, 0)
    ok = res["worst"] <= 1e-8 and res["seconds"] < 60
    assert criterion(1, ok, f"shift identity, {res['detail']}")


def test_criterion_02_closed_form_vi(criterion):
    dom = build_interval(1.0, 400)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, (), "constant", {"value": -1.0})
    sol = solve_vi(op, mu, Obstacle.constant(dom, -0.01), SolverConfig())
    u01 = probe(dom, sol.u, 0.1)
    lam = sol.reaction_mass
    bound = certificate_bound(op, mu, DiscreteMeasure.zero(dom))
    ok = (abs(u01 - ref.VI_U_AT_01) <= 1e-4 and abs(lam - ref.VI_REACTION) <= 0.01 * ref.VI_REACTION
          and lam <= bound and bound <= 1.0)
    assert criterion(2, ok, f"closed-form VI u(0.1)={u01:.6f} (target {ref.VI_U_AT_01:.6f}), "
                            f"reaction {lam:.6f} (target {ref.VI_REACTION:.6f}) <= {bound:.4f}")


def test_criterion_03_green_reproduction(criterion):
    errs = {}
    for M in (100, 200, 400):
        dom = build_radial_mesh(3, 1.0, M)
        u = solve_linear(assemble_operator(dom), discretize_measure(dom, [Atom((0.0,), 1.0)]))
        errs[M] = [abs(probe(dom, u, r) - G3(r)) / G3(r) for r in (0.25, 0.5, 0.75)]
    within = max(errs[400]) <= 0.02
    orders = [math.log2(errs[a][1] / errs[b][1]) for a, b in ((100, 200), (200, 400))]
    ok = within and min(orders) >= 0.9
    assert criterion(3, ok, f"Green at M=400 max rel. error {max(errs[400]):.2e}, "
                            f"observed orders {orders[0]:.2f}, {orders[1]:.2f}")


def test_criterion_04_nomosco(criterion, run_all_twice):
    root, _, _ = run_all_twice
    rep = report(root, "nomosco")
    tab = rep["tables"]
    p = [tab[str(M)]["u(0.5)"] for M in (200, 400, 800)]
    ratios = [abs(b) / abs(a) for a, b in zip(p, p[1:])]
    lim = tab["800"]["u_limit(0.5)"]
    target = -0.0795775
    # direct solve of the finest constrained problem, independent of the scenario code
    dom = build_radial_mesh(3, 1.0, 800)
    mu = discretize_measure(dom, [Atom((0.0,), -1.0, singular=True)])
    direct = probe(dom, solve_vi(assemble_operator(dom), mu, Obstacle.constant(dom, -5.0), ACTIVE_SET).u, 0.5)
    ok = (all(0.4 <= r <= 0.65 for r in ratios) and abs(lim - target) <= 0.01 * abs(target)
          and abs(direct - p[-1]) <= 1e-6 * abs(p[-1]) and rep["verdict"] == "instability-confirmed")
    assert criterion(4, ok, f"nomosco ratios {ratios[0]:.3f}, {ratios[1]:.3f}; limit probe {lim:.6f}; "
                            f"verdict {rep['verdict']}")


def test_criterion_05_menodelta(criterion, run_all_twice):
    root, _, _ = run_all_twice
    rep = report(root, "menodelta")
    finest = str(max(int(k) for k in rep["tables"]))
    got = rep["tables"][finest]["u(0.5)"]
    lim = rep["tables"][finest]["u_limit(0.5)"]
    lev = rep["extra"]["levelset"]["verdict"]
    target = -ref.HALF_GREEN_05
    # the level-set classification again with the library defaults on a separate mesh
    dom = build_radial_mesh(3, 1.0, 200)
    fam = [SandwichObstacle(5 * 2**k, G3).obstacle(dom) for k in range(8)]
    again = check_levelset_convergence(fam, minus_green_obstacle(G3, dom)).verdict
    ok = (abs(got - target) <= 0.05 * abs(target) and abs(got - lim) >= 0.03
          and lev == "converges" and again == "converges")
    assert criterion(5, ok, f"menodelta u(0.5)={got:.6f} at M={finest} (target {target:.6f}), "
                            f"gap {abs(got - lim):.4f}, checker {lev}/{again}")


def test_criterion_06_uniform_stability(criterion):
    res = uniform_stability_trials(100, 1)
    assert criterion(6, res["violations"] == 0, f"uniform stability, {res['detail']}")


def test_criterion_07_energy_stability(criterion):
    res = energy_stability_trials(100, 2)
    assert criterion(7, res["violations"] == 0, f"energy stability, {res['detail']}")


def test_criterion_08_truncation_energy(criterion):
    res = truncation_energy_trials(50, 3)
    assert criterion(8, res["worst_ratio"] <= 1.01, f"truncation energy, {res['detail']}")


def test_criterion_09_orsina(criterion, run_all_twice):
    root, _, _ = run_all_twice
    rep = report(root, "orsina")
    tab = rep["tables"]
    levels = (250, 500, 1000)
    w14 = [tab[str(M)]["W1q_1.4"] for M in levels]
    w16 = [tab[str(M)]["W1q_1.6"] for M in levels]
    change14 = abs(w14[-1] - w14[-2]) / w14[-2]
    growth16 = [b / a - 1 for a, b in zip(w16, w16[1:])]
    mass = OrsinaDatum(1.5, 3, 0.5).total_mass()
    ok_mass = abs(mass - 30.19) <= 0.01 * 30.19
    ok = change14 < 0.05 and all(g >= 0.20 for g in growth16) and ok_mass
    assert criterion(9, ok, f"orsina W1,1.4 change {change14:.3%}; W1,1.6 growth "
                            f"{growth16[0]:.1%}, {growth16[1]:.1%} (need >= 20%); mass {mass:.4f}")


def test_criterion_10_capacity(criterion):
    pairs = capacity_trials(500, 4)
    disk = disk_capacity_trace((64, 128, 256))
    ok = pairs["passed"] and disk["passed"]
    rel = ", ".join(f"{r:.2%}" for r in disk["relative_changes"])
    assert criterion(10, ok, f"capacity, {pairs['detail']}; disk {disk['detail']} (changes {rel})")


def test_criterion_11_levelset_classifications(criterion):
    dom = build_radial_mesh(3, 1.0, 200)
    minus_n = check_levelset_convergence([Obstacle.constant(dom, -float(2**k)) for k in range(8)],
                                         Obstacle.unconstrained(dom)).verdict
    sandwich = check_levelset_convergence([SandwichObstacle(5 * 2**k, G3).obstacle(dom) for k in range(8)],
                                          minus_green_obstacle(G3, dom)).verdict
    psi = minus_green_obstacle(G3, dom)
    psi = Obstacle(dom, np.where(np.isfinite(psi.values), np.maximum(psi.values, -3.0), -3.0))
    constant = check_levelset_convergence([psi] * 6, psi).verdict
    ok = (minus_n, sandwich, constant) == ("converges-to-minus-infinity", "converges", "converges")
    assert criterion(11, ok, f"checker verdicts -n: {minus_n}; sandwich: {sandwich}; constant: {constant}")


def test_criterion_12_determinism(criterion, run_all_twice):
    root, codes, seconds = run_all_twice
    ids = sorted(p.name for p in (root / "a").iterdir() if p.is_dir())
    same = [(root / "a" / i / "report.json").read_bytes() == (root / "b" / i / "report.json").read_bytes()
            for i in ids]
    summary_same = (root / "a" / "summary.json").read_bytes() == (root / "b" / "summary.json").read_bytes()
    ok = len(ids) >= 11 and all(same) and summary_same and codes[0] == codes[1]
    assert criterion(12, ok, f"run-all twice: {sum(same)}/{len(ids)} report.json byte-identical, "
                             f"summary identical {summary_same}, exit codes {codes}, "
                             f"{seconds[0]:.0f}+{seconds[1]:.0f} s")
