"""Randomized invariant trials shared by the CLI check command and the test suite."""
from __future__ import annotations

import time

import numpy as np

from .capacity import capacity, capacity_operator
from .mesh import (
    Atom,
    DiscreteDomain,
    NormSpec,
    Obstacle,
    assemble_operator,
    build_grid2d,
    build_interval,
    build_radial_mesh,
    discretize_measure,
    norm,
)
from .vi import ACTIVE_SET, BoundaryData, shift_solve, solve_linear, solve_op_g, truncate


def random_domain(rng: np.random.Generator, kind: str) -> DiscreteDomain:
    if kind == "interval":
        return build_interval(float(rng.uniform(0.5, 2.0)), int(rng.integers(8, 60)))
    if kind == "radial":
        return build_radial_mesh(int(rng.integers(2, 5)), float(rng.uniform(0.5, 1.5)), int(rng.integers(8, 60)))
    n = int(rng.integers(6, 16))
    return build_grid2d(float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.5, 1.5)), n, n + int(rng.integers(0, 4)))


def random_point(rng, dom: DiscreteDomain) -> tuple:
    if dom.kind == "grid2d":
        return tuple(float(rng.uniform(0.05, 0.95) * L) for L in dom.extent)
    lo = 0.0 if dom.kind == "radial" and rng.random() < 0.3 else 0.05
    return (float(rng.uniform(lo, 0.95) * dom.extent[0]),)


def random_measure(rng, dom: DiscreteDomain, sign: int = 0, atoms: int = 3):
    """Random atoms plus a random constant density; ``sign`` > 0 forces a nonnegative measure."""
    out = []
    for _ in range(int(rng.integers(0, atoms + 1))):
        m = float(rng.uniform(0.05, 1.0))
        if sign == 0 and rng.random() < 0.6:
            m = -m
        out.append(Atom(random_point(rng, dom), m, singular=bool(rng.random() < 0.5)))
    value = float(rng.uniform(-2.0, 2.0)) if sign == 0 else float(rng.uniform(0.0, 2.0))
    return discretize_measure(dom, out, "constant", {"value": value})


def random_obstacle(rng, dom: DiscreteDomain, top: float = 0.3, free: float = 0.2, g=None) -> Obstacle:
    """Random obstacle, feasible for the boundary datum g (default 0), with some -inf nodes."""
    v = rng.uniform(-top, top, dom.n_nodes)
    v[rng.random(dom.n_nodes) < free] = -np.inf
    B = dom.boundary_nodes
    gb = np.zeros(len(B)) if g is None else g[B]
    v[B] = np.minimum(v[B], gb - rng.uniform(0, 0.1, len(B)))
    return Obstacle(dom, v)


def _kinds(i):
    return ("interval", "radial", "grid2d")[i % 3]


def shift_identity_trials(count: int = 200, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(count):
        dom = random_domain(rng, _kinds(i))
        op = assemble_operator(dom)
        mu = random_measure(rng, dom)
        nu = random_measure(rng, dom, sign=1)
        psi = random_obstacle(rng, dom)
        a, b = shift_solve(op, mu, nu, psi, ACTIVE_SET)
        scale = max(a.scale, b.scale)
        worst = max(worst, float(np.max(np.abs(a.u - b.u))) / scale)
    elapsed = time.perf_counter() - t0
    return {"passed": worst <= 1e-8 and elapsed < 60, "worst": worst, "seconds": elapsed,
            "detail": f"max discrepancy/scale {worst:.2e} over {count} instances in {elapsed:.1f} s"}


def uniform_stability_trials(count: int = 100, seed: int = 1) -> dict:
    rng = np.random.default_rng(seed)
    violations, worst_slack = 0, np.inf
    for i in range(count):
        dom = random_domain(rng, _kinds(i))
        op = assemble_operator(dom)
        mu = random_measure(rng, dom)
        gv = np.zeros(dom.n_nodes)
        gv[dom.boundary_nodes] = rng.uniform(-0.5, 0.5, len(dom.boundary_nodes))
        g = BoundaryData(gv)
        psi1 = random_obstacle(rng, dom, g=gv)
        pert = rng.uniform(-0.2, 0.2, dom.n_nodes) * float(rng.uniform(0.0, 1.0))
        pert[dom.boundary_nodes] = np.minimum(pert[dom.boundary_nodes], 0.0)
        psi2 = Obstacle(dom, np.where(psi1.finite, psi1.values + pert, -np.inf))
        u1 = solve_op_g(op, mu, g, psi1, ACTIVE_SET)
        u2 = solve_op_g(op, mu, g, psi2, ACTIVE_SET)
        f = psi1.finite
        dpsi = float(np.max(np.abs(psi1.values[f] - psi2.values[f]))) if f.any() else 0.0
        slack = dpsi + 1e-8 * max(u1.scale, u2.scale) - float(np.max(np.abs(u1.u - u2.u)))
        worst_slack = min(worst_slack, slack)
        violations += slack < 0
    return {"passed": violations == 0, "violations": int(violations), "worst_slack": worst_slack,
            "detail": f"{violations} violations in {count} draws (smallest slack {worst_slack:.2e})"}


def piecewise_coefficient(rng, dom: DiscreteDomain):
    """Coefficient taking random values in [1, 4] on two halves of the domain."""
    left, right = rng.uniform(1.0, 4.0, 2)
    cut = float(rng.uniform(0.3, 0.7)) * dom.extent[0]
    return np.where(dom.coords[:, 0] < cut, left, right)


def energy_stability_trials(count: int = 100, seed: int = 2) -> dict:
    rng = np.random.default_rng(seed)
    worst, violations = 0.0, 0
    for i in range(count):
        dom = random_domain(rng, _kinds(i))
        a = 1.0 if i % 2 == 0 else piecewise_coefficient(rng, dom)
        op = assemble_operator(dom, a)
        mu = random_measure(rng, dom)
        psi1 = random_obstacle(rng, dom)
        e = rng.uniform(-0.1, 0.1, dom.n_nodes)
        e[dom.boundary_nodes] = 0.0
        psi2 = psi1.shifted(-e)
        u1 = _solve(op, mu, psi1)
        u2 = _solve(op, mu, psi2)
        de = norm(e * psi1.finite, NormSpec("H10-energy"), dom)
        du = norm(u1 - u2, NormSpec("H10-energy"), dom)
        ratio = du / de if de > 0 else 0.0
        bound = op.C / op.gamma
        worst = max(worst, ratio / bound)
        violations += ratio > bound * (1 + 1e-6)
    return {"passed": violations == 0, "violations": int(violations), "worst_ratio_over_bound": worst,
            "detail": f"{violations} violations in {count} draws (largest ratio/(C/gamma) {worst:.3f})"}


def _solve(op, mu, psi):
    from .vi import solve_vi

    return solve_vi(op, mu, psi, ACTIVE_SET).u


def truncation_energy_trials(count: int = 50, seed: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(count):
        dom = random_domain(rng, _kinds(i))
        op = assemble_operator(dom, 1.0 if i % 2 else piecewise_coefficient(rng, dom))
        mu = random_measure(rng, dom)
        u = solve_linear(op, mu)
        l1 = float(np.abs(mu.loads[dom.interior]).sum())
        top = float(np.max(np.abs(u)))
        for k in np.linspace(0.0, 1.2, 13)[1:] * top:
            if l1 == 0:
                continue
            worst = max(worst, op.energy(truncate(u, k)) / (k * l1))
    return {"passed": worst <= 1.01, "worst_ratio": worst,
            "detail": f"max energy(T_k u)/(k ||mu||) = {worst:.4f} over {count} measures"}


def capacity_trials(count: int = 500, seed: int = 4, n: int = 10) -> dict:
    rng = np.random.default_rng(seed)
    dom = build_grid2d(1.0, 1.0, n, n)
    op = capacity_operator(dom)
    I = dom.interior
    mono = sub = 0
    for _ in range(count):
        E = I[rng.random(len(I)) < rng.uniform(0.02, 0.4)]
        F = I[rng.random(len(I)) < rng.uniform(0.02, 0.4)]
        cE, cF = capacity(dom, E, op).value, capacity(dom, F, op).value
        cU = capacity(dom, np.union1d(E, F), op).value
        mono += not (cE <= cU * (1 + 1e-9) and cF <= cU * (1 + 1e-9))
        sub += not (cU <= cE + cF + 1e-9)
    return {"passed": mono == 0 and sub == 0, "monotonicity_violations": mono, "subadditivity_violations": sub,
            "detail": f"{mono} monotonicity and {sub} subadditivity violations over {count} pairs"}


def disk_capacity_trace(levels=(64, 128, 256), radius: float = 0.25) -> dict:
    vals = []
    for n in levels:
        dom = build_grid2d(1.0, 1.0, n, n)
        E = np.flatnonzero(np.hypot(dom.coords[:, 0] - 0.5, dom.coords[:, 1] - 0.5) <= radius + 1e-12)
        vals.append(capacity(dom, E).value)
    rel = [abs(b - a) / b for a, b in zip(vals, vals[1:])]
    return {"passed": all(r <= 0.02 for r in rel), "values": vals, "relative_changes": rel,
            "detail": "capacities " + ", ".join(f"{v:.5f}" for v in vals)}


def run_invariant_suite(seed: int = 0) -> dict:
    return {
        "shift identity": shift_identity_trials(seed=seed),
        "uniform stability": uniform_stability_trials(seed=seed + 1),
        "energy stability": energy_stability_trials(seed=seed + 2),
        "truncation energy": truncation_energy_trials(seed=seed + 3),
        "capacity monotone and subadditive": capacity_trials(seed=seed + 4),
        "disk capacity refinement": disk_capacity_trace(),
    }
