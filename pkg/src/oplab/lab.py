"""Scenario registry: mesh-family experiments with machine-readable reports.

Each scenario builds its discrete problems on a list of mesh levels, records
traces (level, quantity, value), runs the invariant suite on every solve and
finishes with a list of named checks. The verdict is the scenario's success
label when every check passes and ``fail`` otherwise.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .capacity import CapacityCache, check_levelset_convergence
from .errors import UnknownScenario
from .mesh import (
    Atom,
    DiscreteMeasure,
    NormSpec,
    Obstacle,
    assemble_operator,
    build_grid2d,
    build_radial_mesh,
    discretize_measure,
    norm,
    probe,
    write_field_csv,
)
from .oracles import GreenBall, OrsinaDatum, SandwichObstacle, green_nodal, minus_green_obstacle, orsina_field
from .vi import (
    ACTIVE_SET,
    BoundaryData,
    SolverConfig,
    certificate_bound,
    check_solution,
    harmonic_lift,
    solve_linear,
    solve_op_g,
    solve_vi,
    truncate,
)

log = logging.getLogger(__name__)

RADIAL_LEVELS = (100, 200, 400, 800)
GRID_LEVELS = (32, 64, 128)
PROBE_RADII = (0.25, 0.5, 0.75)
PASSING = ("pass", "instability-confirmed")


# ---------------------------------------------------------------------------
# report plumbing


def richardson(hs, values) -> dict:
    """Extrapolated limit from the last three levels, assuming a constant refinement ratio."""
    if len(values) < 3:
        return {"limit": float(values[-1]) if values else None, "order": None, "rule": "last-value"}
    (h1, h2, h3), (q1, q2, q3) = hs[-3:], values[-3:]
    d1, d2 = q2 - q1, q3 - q2
    ratio = h2 / h3
    if d1 == 0.0 or d2 == 0.0 or d1 * d2 < 0 or abs(d2) >= abs(d1) or ratio <= 1:
        return {"limit": float(q3), "order": None, "rule": "last-value"}
    p = math.log(abs(d1 / d2)) / math.log(ratio)
    return {"limit": float(q3 + d2 / (ratio**p - 1)), "order": float(p), "rule": "richardson-last-three"}


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


class Run:
    """Mutable recorder handed to a scenario body."""

    def __init__(self, scenario: "Scenario", levels, params: dict, out: Path | None):
        self.scenario = scenario
        self.levels = list(levels)
        self.params = params
        self.out = out
        self.trace: list[tuple] = []
        self.checks: list[dict] = []
        self.tables: dict[str, dict] = {}
        self.provenance: dict[str, str] = {}
        self.extra: dict = {}
        self.h: dict = {}
        self.invariant_failures: list[str] = []

    # traces
    def record(self, level, quantity: str, value) -> None:
        self.trace.append((level, quantity, float(value)))
        self.tables.setdefault(str(level), {})[quantity] = float(value)

    def series(self, quantity: str) -> tuple[list, list]:
        pts = [(lv, v) for lv, q, v in self.trace if q == quantity]
        return [p[0] for p in pts], [p[1] for p in pts]

    def check(self, name: str, passed: bool, value=None, target=None, tolerance=None) -> bool:
        self.checks.append({
            "name": name, "passed": bool(passed), "value": value,
            "target": target, "tolerance": tolerance,
        })
        return bool(passed)

    def invariants(self, level, label: str, op, mu, psi: Obstacle, sol, rho=None, lift=None) -> None:
        """Structural checks that hold exactly on every discrete solve."""
        flags = check_solution(op, mu, psi if lift is None else psi.shifted(lift), _inner(sol, lift))
        base = solve_linear(op, mu) + (0.0 if lift is None else lift)
        flags["above_linear"] = bool(np.all(sol.u >= base - 1e-9 * sol.scale))
        if rho is not None:
            bound = certificate_bound(op, mu, rho)
            flags["reaction_bound"] = bool(sol.reaction_mass <= bound * (1 + 1e-9) + 1e-9 * sol.scale)
        u_mu = solve_linear(op, mu)
        l1 = float(np.abs(_loads(mu)[op.domain.interior]).sum())
        top = float(np.max(np.abs(u_mu))) if u_mu.size else 0.0
        ok = True
        for frac in (0.1, 0.5, 1.0):
            k = frac * top
            ok &= op.energy(truncate(u_mu, k)) <= k * l1 * (1 + 1e-9) + 1e-12
        flags["truncation_energy"] = bool(ok)
        for k, v in flags.items():
            self.record(level, f"inv:{label}:{k}", 1.0 if v else 0.0)
            if not v:
                self.invariant_failures.append(f"{level}:{label}:{k}")

    def solve(self, level, label, op, mu, psi, rho=None, cfg: SolverConfig = ACTIVE_SET):
        sol = solve_vi(op, mu, psi, cfg)
        self.invariants(level, label, op, mu, psi, sol, rho)
        return sol

    def cross_check(self, level, op, mu, psi, sol) -> None:
        """Projected SOR against the active-set solution on one coarse instance."""
        alt = solve_vi(op, mu, psi, SolverConfig(method="psor"))
        diff = float(np.max(np.abs(alt.u - sol.u)))
        self.record(level, "psor_vs_active_set", diff)
        self.check(f"psor agrees with active set at level {level}", diff <= 1e-6 * sol.scale, diff, 0.0, 1e-6 * sol.scale)

    def field(self, name: str, dom, values) -> str | None:
        if self.out is None:
            return None
        fn = f"{name}.csv"
        write_field_csv(self.out / fn, dom, values)
        return fn


def _loads(mu):
    return mu.loads if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)


def _inner(sol, lift):
    if lift is None:
        return sol
    from .vi import VISolution

    return VISolution(u=sol.u - lift, lam=sol.lam, residual=sol.residual, iterations=sol.iterations,
                      active=sol.active, scale=sol.scale, tolerance=sol.tolerance)


@dataclass(frozen=True)
class Scenario:
    id: str
    anchor: str
    claim: str
    kind: str
    levels: tuple
    params: dict
    body: Callable[[Run], None] = field(repr=False)
    success: str = "pass"


SCENARIOS: dict[str, Scenario] = {}


def scenario(id: str, anchor: str, claim: str, kind: str = "radial", levels: tuple | None = None,
             success: str = "pass", **params):
    def deco(fn):
        if id in SCENARIOS:
            raise ValueError(f"duplicate scenario id {id}")
        lv = levels or (RADIAL_LEVELS if kind == "radial" else GRID_LEVELS)
        SCENARIOS[id] = Scenario(id, anchor, claim, kind, tuple(lv), dict(params), fn, success)
        return fn

    return deco


def list_scenarios() -> list[dict]:
    return [{"id": s.id, "anchor": s.anchor, "claim": s.claim, "kind": s.kind, "levels": list(s.levels)}
            for s in SCENARIOS.values()]


def get_scenario(id: str) -> Scenario:
    if id not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {id!r}; known: {', '.join(SCENARIOS)}")
    return SCENARIOS[id]


def run_scenario(id: str, levels=None, out=None, config: dict | None = None) -> dict:
    """Run one scenario and return its report (also written to ``out`` when given)."""
    sc = get_scenario(id)
    config = copy.deepcopy(config or {})
    params = dict(sc.params)
    params.update(config.get("params", {}))
    lv = levels if levels is not None else config.get("levels", sc.levels)
    lv = sorted(int(x) for x in lv)
    if len(lv) < 1:
        raise ValueError("at least one mesh level is needed")
    outp = Path(out) if out is not None else None
    if outp is not None:
        outp.mkdir(parents=True, exist_ok=True)
    run = Run(sc, lv, params, outp)
    t0 = time.perf_counter()
    sc.body(run)
    runtime = time.perf_counter() - t0
    if run.invariant_failures:
        run.check("invariant suite", False, run.invariant_failures[:20])
    else:
        run.check("invariant suite", True)
    report = _report(run)
    if outp is not None:
        (outp / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n")
        with open(outp / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "quantity", "value"])
            for level, q, v in run.trace:
                w.writerow([level, q, repr(v)])
        (outp / "timing.json").write_text(json.dumps({"scenario": id, "runtime_s": runtime}, indent=2) + "\n")
    report["runtime_s"] = runtime
    return report


def _report(run: Run) -> dict:
    sc = run.scenario
    extrap = {}
    quantities = sorted({q for _, q, _ in run.trace if not q.startswith("inv:")})
    for q in quantities:
        lv, vals = run.series(q)
        if len(lv) >= 3 and len(set(lv)) == len(lv) and all(isinstance(x, int) for x in lv):
            hs = [run.h.get(x, 1.0 / x) for x in lv]
            extrap[q] = richardson(hs, vals)
    passed = all(c["passed"] for c in run.checks)
    return _clean({
        "scenario": sc.id,
        "anchor": sc.anchor,
        "claim": sc.claim,
        "config": {"levels": run.levels, "params": run.params},
        "tables": run.tables,
        "extrapolated": extrap,
        "checks": run.checks,
        "provenance": run.provenance,
        "extra": run.extra,
        "verdict": sc.success if passed else "fail",
    })


def run_all(levels=None, out=None, threads: int | None = None, ids=None) -> dict:
    """Every scenario; results are merged by id so execution order does not matter."""
    from concurrent.futures import ThreadPoolExecutor

    ids = list(ids or SCENARIOS)
    outp = Path(out) if out is not None else None
    threads = threads or int(os.environ.get("OPLAB_THREADS", "1") or 1)

    def one(i):
        return i, run_scenario(i, levels=levels, out=None if outp is None else outp / i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = dict(ex.map(one, ids))
    else:
        results = dict(one(i) for i in ids)
    summary = {
        "scenarios": {i: {"verdict": results[i]["verdict"],
                          "failed_checks": [c["name"] for c in results[i]["checks"] if not c["passed"]]}
                      for i in sorted(results)},
    }
    summary["all_passed"] = all(v["verdict"] in PASSING for v in summary["scenarios"].values())
    if outp is not None:
        outp.mkdir(parents=True, exist_ok=True)
        (outp / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    summary["reports"] = results
    return summary


# ---------------------------------------------------------------------------
# shared builders


def radial(M: int, N: int = 3, R: float = 1.0):
    dom = build_radial_mesh(N, R, M)
    return dom, assemble_operator(dom)


def grid(n: int, extent: float = 1.0, a=1.0):
    dom = build_grid2d(extent, extent, n, n)
    return dom, assemble_operator(dom, a)


def smooth_field(seed: int, extent: float = 1.0, bumps: int = 4) -> Callable[[np.ndarray], np.ndarray]:
    """Random smooth function on the square with values in [-1, 1], independent of the mesh."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.15, 0.85, size=(bumps, 2)) * extent
    a = rng.uniform(-1.0, 1.0, size=bumps)
    w = rng.uniform(0.12, 0.3, size=bumps) * extent

    def raw(x):
        d2 = (x[:, None, 0] - c[None, :, 0]) ** 2 + (x[:, None, 1] - c[None, :, 1]) ** 2
        return np.sum(a[None, :] * np.exp(-d2 / w[None, :] ** 2), axis=1)

    s = np.linspace(0, extent, 65)
    X, Y = np.meshgrid(s, s)
    scale = float(np.max(np.abs(raw(np.column_stack([X.ravel(), Y.ravel()]))))) or 1.0
    return lambda x: raw(x) / scale


def window(x, extent: float = 1.0):
    return np.sin(np.pi * x[:, 0] / extent) * np.sin(np.pi * x[:, 1] / extent)


def radial_probes(run: Run, level, dom, u, name: str, radii=PROBE_RADII) -> None:
    for r in radii:
        run.record(level, f"{name}({r:g})", probe(dom, u, r))


def w1q(dom, u, q):
    return norm(u, NormSpec("W1q", q), dom)


def energy_norm(dom, u):
    return norm(u, NormSpec("H10-energy"), dom)


def _monotone_decreasing(vals, rtol=0.0) -> bool:
    return all(b <= a * (1 + rtol) + 1e-14 for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# radial Dirac scenarios


@scenario("nomosco", "Dirac datum -delta_0 with constant obstacles -n",
          "at fixed n the discrete solutions tend to 0 as h -> 0, while the problem without obstacle gives -G",
          success="instability-confirmed", n=5, family=(1, 2, 4, 8, 16, 32, 64, 128))
def _nomosco(run: Run) -> None:
    gb = GreenBall()
    n = float(run.params["n"])
    run.provenance["limit probe"] = "-G(0.5) with G(r) = (1/r - 1)/(4 pi), closed form validated by the radial quadrature oracle"
    probes = []
    for i, M in enumerate(run.levels):
        dom, op = radial(M)
        run.h[M] = dom.h
        mu = discretize_measure(dom, [Atom((0.0,), -1.0, singular=True)])
        psi = Obstacle.constant(dom, -n)
        sol = run.solve(M, "op", op, mu, psi, rho=DiscreteMeasure.zero(dom))
        if i == 0:
            run.cross_check(M, op, mu, psi, sol)
        radial_probes(run, M, dom, sol.u, "u")
        run.record(M, "reaction_mass", sol.reaction_mass)
        run.record(M, "u(0.5)/h", probe(dom, sol.u, 0.5) / dom.h)
        lim = solve_linear(op, mu)
        radial_probes(run, M, dom, lim, "u_limit")
        probes.append(probe(dom, sol.u, 0.5))
        if M == 200:
            p = probes[-1]
            run.check("u(0.5) at M=200 is negative and at most 6h in size", p < 0 and abs(p) <= 6 * dom.h, p, 0.0, 6 * dom.h)
        if i == len(run.levels) - 1:
            run.field("u", dom, sol.u)
            run.field("lambda", dom, sol.lam)
            run.extra["finest_solution"] = sol.to_json()
            target = -gb(0.5)
            got = probe(dom, lim, 0.5)
            run.check("limit problem probe at r=0.5", abs(got - target) <= 0.01 * abs(target), got, target, 0.01)
            fam = [Obstacle.constant(dom, -float(k)) for k in run.params["family"]]
            v = check_levelset_convergence(fam, Obstacle.unconstrained(dom), members=list(run.params["family"]))
            run.extra["levelset"] = v.to_json()
            if run.out is not None:
                v.write_csv(run.out / "levelset_trace.csv")
            run.check("constant family converges to -inf in the sense of level sets",
                      v.verdict == "converges-to-minus-infinity", v.verdict, "converges-to-minus-infinity")
    ratios = [abs(b) / abs(a) for a, b in zip(probes, probes[1:])]
    for (Ma, Mb), r in zip(zip(run.levels, run.levels[1:]), ratios):
        run.record(Mb, "halving_ratio", r)
        run.check(f"|u(0.5)| ratio {Ma}->{Mb} in [0.4, 0.65]", 0.4 <= r <= 0.65, r, [0.4, 0.65])


@scenario("controllo", "zero datum with obstacles G - n",
          "at fixed n the solutions tend to G while the level-set limit -inf has solution 0",
          success="instability-confirmed", n=5, members=8)
def _controllo(run: Run) -> None:
    gb = GreenBall()
    n = float(run.params["n"])
    run.provenance["probe target"] = "G(0.5) = 1/(4 pi), closed form"
    for i, M in enumerate(run.levels):
        dom, op = radial(M)
        run.h[M] = dom.h
        delta = discretize_measure(dom, [Atom((0.0,), 1.0, singular=True)])
        g_h = solve_linear(op, delta)
        zero = DiscreteMeasure.zero(dom)
        psi = Obstacle(dom, g_h - n)
        sol = run.solve(M, "op", op, zero, psi, rho=delta)
        if i == 0:
            run.cross_check(M, op, zero, psi, sol)
        other = run.solve(M, "shifted", op, -delta, Obstacle.constant(dom, -n), rho=zero)
        res = float(np.max(np.abs(sol.u - (g_h + other.u)))) / sol.scale
        run.record(M, "shift_residual", res)
        run.check(f"shift identity at M={M}", res <= 1e-8, res, 0.0, 1e-8)
        radial_probes(run, M, dom, sol.u, "u")
        run.record(M, "reaction_mass", sol.reaction_mass)
        last = i == len(run.levels) - 1
        if M == 400 or (last and 400 not in run.levels):
            got, target = probe(dom, sol.u, 0.5), gb(0.5)
            run.check(f"u(0.5) near G(0.5) at M={M}", abs(got - target) <= 0.03 * target, got, target, 0.03)
        if last:
            run.field("u", dom, sol.u)
            run.field("lambda", dom, sol.lam)
            run.extra["finest_solution"] = sol.to_json()
            run.extra["limit_solution_probe"] = 0.0
            base = max(n, math.ceil(float(g_h.max())))
            ns = [base * 2**k for k in range(int(run.params["members"]))]
            fam = [Obstacle(dom, g_h - k) for k in ns]
            v = check_levelset_convergence(fam, Obstacle.unconstrained(dom), members=ns)
            run.extra["levelset"] = v.to_json()
            if run.out is not None:
                v.write_csv(run.out / "levelset_trace.csv")
            run.check("family G - n converges to -inf in the sense of level sets",
                      v.verdict == "converges-to-minus-infinity", v.verdict, "converges-to-minus-infinity")


@scenario("menodelta", "Dirac datum -delta_0 with sandwich obstacles",
          "at fixed n the solutions tend to -G/2, the limit obstacle -G gives -G",
          success="instability-confirmed", n=5, members=8)
def _menodelta(run: Run) -> None:
    gb = GreenBall()
    n = int(run.params["n"])
    a, b = SandwichObstacle(n, gb).radii
    run.extra["radii"] = {"a_n": a, "b_n": b}
    run.provenance["solution target"] = "-G(0.5)/2 = -1/(8 pi)"
    run.provenance["limit target"] = "-G(0.5) = -1/(4 pi)"
    for i, M in enumerate(run.levels):
        dom, op = radial(M)
        run.h[M] = dom.h
        mu = discretize_measure(dom, [Atom((0.0,), -1.0, singular=True)])
        psi = SandwichObstacle(n, gb).obstacle(dom)
        sol = run.solve(M, "op", op, mu, psi, rho=DiscreteMeasure.zero(dom))
        if i == 0:
            run.cross_check(M, op, mu, psi, sol)
        lim_psi = minus_green_obstacle(gb, dom)
        lim = run.solve(M, "limit", op, mu, lim_psi, rho=DiscreteMeasure.zero(dom))
        radial_probes(run, M, dom, sol.u, "u")
        radial_probes(run, M, dom, lim.u, "u_limit")
        run.record(M, "reaction_mass", sol.reaction_mass)
        if i == len(run.levels) - 1:
            run.field("u", dom, sol.u)
            run.field("lambda", dom, sol.lam)
            run.extra["finest_solution"] = sol.to_json()
            got, target = probe(dom, sol.u, 0.5), -0.5 * gb(0.5)
            run.check("finest u(0.5) near -G(0.5)/2", abs(got - target) <= 0.05 * abs(target), got, target, 0.05)
            lp = probe(dom, lim.u, 0.5)
            run.check("limit problem probe at r=0.5", abs(lp + gb(0.5)) <= 0.01 * gb(0.5), lp, -gb(0.5), 0.01)
            run.check("gap to the limit problem", abs(got - lp) >= 0.03, abs(got - lp), 0.03)
            ns = [n * 2**k for k in range(int(run.params["members"]))]
            fam = [SandwichObstacle(k, gb).obstacle(dom) for k in ns]
            v = check_levelset_convergence(fam, lim_psi, members=ns)
            run.extra["levelset"] = v.to_json()
            if run.out is not None:
                v.write_csv(run.out / "levelset_trace.csv")
            run.check("sandwich family converges to -G in the sense of level sets", v.passed, v.verdict, "converges")


@scenario("w1q-counterexample", "sandwich obstacles converge in W^{1,q} but solutions do not",
          "||psi_n - psi||_{W^{1,1.2}} -> 0 while u_n(0.5) stays near -G(0.5)/2",
          success="instability-confirmed", q=1.2, norm_family=(5, 10, 20, 40, 80, 160, 320, 640),
          solve_family=(5, 10, 20))
def _w1q(run: Run) -> None:
    gb = GreenBall()
    q = float(run.params["q"])
    run.provenance["norm trace"] = "closed-form gradient part plus quadrature of the L^q part of the explicit piecewise field"
    trace = []
    for n in run.params["norm_family"]:
        val = _sandwich_w1q_exact(int(n), gb, q)
        trace.append(val)
        run.record(f"n={n}", "W1q(psi_n - psi)", val)
    run.check("W^{1,q} distance of sandwich obstacles decreases", _monotone_decreasing(trace), trace)
    run.check("W^{1,q} distance of sandwich obstacles falls below 10% of its first value",
              trace[-1] <= 0.1 * trace[0], trace[-1] / trace[0], 0.0, 0.1)
    for i, M in enumerate(run.levels):
        dom, op = radial(M)
        run.h[M] = dom.h
        mu = discretize_measure(dom, [Atom((0.0,), -1.0, singular=True)])
        lim = solve_linear(op, mu)
        lp = probe(dom, lim, 0.5)
        run.record(M, "u_limit(0.5)", lp)
        lim_vals = -green_nodal(gb, dom)
        for n in run.params["solve_family"]:
            psi = SandwichObstacle(int(n), gb).obstacle(dom)
            sol = run.solve(M, f"n{n}", op, mu, psi, rho=DiscreteMeasure.zero(dom))
            p = probe(dom, sol.u, 0.5)
            run.record(M, f"u_n{n}(0.5)", p)
            run.record(M, f"gap_n{n}", abs(p - lp))
            with np.errstate(invalid="ignore"):
                diff = np.where(np.isfinite(psi.values), psi.values - lim_vals, 0.0)
            run.record(M, f"W1q_nodal(psi_{n} - psi)", w1q(dom, diff, q))
            if i == len(run.levels) - 1:
                run.check(f"finest gap for n={n} at least 0.03", abs(p - lp) >= 0.03, abs(p - lp), 0.03)


def _sandwich_w1q_exact(n: int, gb: GreenBall, q: float) -> float:
    """W^{1,q} norm of psi_n - psi on the ball (gradient L^q plus L^q)."""
    a, b = SandwichObstacle(n, gb).radii
    N, c = gb.N, gb.c
    sig = 2 * math.pi ** (N / 2) / math.gamma(N / 2)
    k = N - 1 - (N - 1) * q  # |G'|^q r^{N-1} = c^q r^{(1-N) q + N - 1}
    if k <= -1:
        raise ValueError("gradient not q-integrable")

    def pw(lo, hi):
        return (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)

    grad = sig * c**q * ((0.5**q) * pw(0.0, a) + pw(a, b))
    lq_in = integrate.quad(lambda r: (0.5 * gb(r)) ** q * r ** (N - 1), 0.0, a, limit=200)[0]
    lq_mid = integrate.quad(lambda r: (gb(r) - n) ** q * r ** (N - 1), a, b, limit=200)[0]
    return grad ** (1 / q) + (sig * (lq_in + lq_mid)) ** (1 / q)


@scenario("orsina", "diffuse datum f = |x|^-N (-log|x|)^-theta, not in W^{1,N/(N-1)}",
          "solutions of the truncated obstacles -(u_f ^ n) reach -u_f; W^{1,1.4} stabilises, W^{1,1.6} grows",
          levels=(250, 500, 1000), theta=1.5, N=3, R=0.5, family=(1, 2, 4, 8, 16, 32, 64, 128))
def _orsina(run: Run) -> None:
    od = OrsinaDatum(theta=float(run.params["theta"]), N=int(run.params["N"]), R=float(run.params["R"]))
    R = od.R
    radii = tuple(f * R for f in (0.25, 0.5, 0.75))
    mass = od.total_mass()
    exact = 2 * math.pi ** (od.N / 2) / math.gamma(od.N / 2) * (math.log(1 / R)) ** (1 - od.theta) / (od.theta - 1)
    run.extra["datum_mass"] = {"quadrature": mass, "closed_form": exact}
    run.provenance["datum mass"] = "quadrature in s = -log r against sigma (log 1/R)^(1-theta)/(theta-1)"
    run.provenance["reference field"] = "nested radial quadrature on a 10x finer grid"
    run.check("datum mass 8 pi / sqrt(log 2) within 1%", abs(mass - exact) <= 0.01 * exact, mass, exact, 0.01)
    gaps = {r: [] for r in radii}
    n14, n16 = [], []
    for i, M in enumerate(run.levels):
        dom = build_radial_mesh(od.N, R, M)
        op = assemble_operator(dom)
        run.h[M] = dom.h
        f, ref = orsina_field(od, dom)
        run.record(M, "discrete_mass", f.tv_norm())
        u_f = solve_linear(op, f)
        mu = -f
        psi = Obstacle(dom, -u_f)
        fam = [int(k) for k in run.params["family"]]
        while fam[-1] < u_f.max():
            fam.append(2 * fam[-1])
        run.record(M, "max_u_f", float(u_f.max()))
        errs = []
        sols = []
        for k in fam:
            psi_n = Obstacle(dom, -np.minimum(u_f, k))
            sol = run.solve(M, f"n{k}", op, mu, psi_n, rho=DiscreteMeasure.zero(dom))
            err = float(np.max(np.abs(sol.u + u_f)))
            errs.append(err)
            sols.append(sol)
            run.record(M, f"maxerr_n{k}", err)
        if i == 0:
            run.cross_check(M, op, mu, Obstacle(dom, -np.minimum(u_f, fam[0])), sols[0])
        run.check(f"n-trace of |u_n + u_f| nonincreasing at M={M}", _monotone_decreasing(errs, 1e-9), errs)
        run.check(f"largest n reproduces -u_f at M={M}", errs[-1] <= 1e-8 * sols[-1].scale, errs[-1], 0.0)
        u = sols[-1].u
        radial_probes(run, M, dom, u, "u", radii)
        for r in radii:
            g = abs(probe(dom, u, r) + probe(dom, ref, r))
            gaps[r].append(g)
            run.record(M, f"reference_gap({r:g})", g)
        a, b = w1q(dom, u, 1.4), w1q(dom, u, 1.6)
        n14.append(a)
        n16.append(b)
        run.record(M, "W1q_1.4", a)
        run.record(M, "W1q_1.6", b)
        if i == len(run.levels) - 1:
            run.field("u", dom, u)
            run.field("u_f_reference", dom, np.where(np.isfinite(ref), ref, np.nan))
            run.extra["finest_solution"] = sols[-1].to_json()
            family = [Obstacle(dom, -np.minimum(u_f, k)) for k in fam]
            v = check_levelset_convergence(family, psi, members=fam)
            run.extra["levelset"] = v.to_json()
            if run.out is not None:
                v.write_csv(run.out / "levelset_trace.csv")
            run.check("truncated family converges with converging capacity traces",
                      v.passed and v.pointwise_ok, v.verdict, "converges")
    for r in radii:
        run.check(f"gap to the reference at r={r:g} shrinks with h", _monotone_decreasing(gaps[r]), gaps[r])
    if len(n14) >= 2:
        rel = abs(n14[-1] - n14[-2]) / n14[-2]
        run.check("W^{1,1.4} relative change below 5% at the finest step", rel < 0.05, rel, 0.0, 0.05)
        for (Ma, Mb), (x, y) in zip(zip(run.levels, run.levels[1:]), zip(n16, n16[1:])):
            g = y / x - 1
            run.check(f"W^{{1,1.6}} grows by at least 20% from M={Ma} to M={Mb}", g >= 0.20, g, 0.20)


# ---------------------------------------------------------------------------
# two-dimensional scenarios


def _base_measure(dom, density: float = -1.0, atom=((0.3, 0.6), -0.2)):
    return discretize_measure(dom, [Atom(atom[0], atom[1], singular=True)], "constant", {"value": density})


@scenario("dasotto", "obstacles approaching from below",
          "psi_n <= psi, psi_n -> psi gives u_n -> u in W^{1,q}; the inf-tail family is increasing",
          kind="grid2d", seed=7, q=1.5, family=(1, 2, 4, 8, 16), bump_seed=11, amplitude=0.02)
def _dasotto(run: Run) -> None:
    q = float(run.params["q"])
    S = smooth_field(int(run.params["seed"]))
    fam = [int(k) for k in run.params["family"]]
    for i, n in enumerate(run.levels):
        dom, op = grid(n)
        run.h[n] = dom.h
        x = dom.coords
        mu = _base_measure(dom)
        psi = Obstacle(dom, -0.03 + 0.04 * S(x) * window(x))
        bump = float(run.params["amplitude"]) * window(x)
        u = run.solve(n, "limit", op, mu, psi, rho=DiscreteMeasure.zero(dom))
        if i == 0:
            run.cross_check(n, op, mu, psi, u)
        same = run.solve(n, "same", op, mu, Obstacle(dom, psi.values.copy()))
        run.check(f"identical obstacle gives identical solution at n={n}", np.array_equal(same.u, u.u))
        errs = []
        for k in fam:
            sol = run.solve(n, f"k{k}", op, mu, Obstacle(dom, psi.values - bump / k), rho=DiscreteMeasure.zero(dom))
            e = w1q(dom, sol.u - u.u, q)
            errs.append(e)
            run.record(n, f"W1q_err_k{k}", e)
        run.check(f"W^{{1,q}} error decreasing at n={n}", _monotone_decreasing(errs), errs)
        run.check(f"W^{{1,q}} error reduced 4x over the family at n={n}", errs[-1] <= 0.25 * errs[0],
                  errs[-1] / errs[0] if errs[0] else 0.0, 0.0, 0.25)
        # inf-tail family of randomly perturbed obstacles
        rng = np.random.default_rng(int(run.params["bump_seed"]))
        pert = [psi.values - (rng.uniform(0.2, 1.0) * bump * (1 + 0.5 * smooth_field(int(rng.integers(1 << 30)))(x))) / k
                for k in fam]
        phi = [np.min(np.stack(pert[j:]), axis=0) for j in range(len(pert))]
        inc = all(np.all(b >= a) for a, b in zip(phi, phi[1:]))
        run.check(f"inf-tail obstacles increasing at n={n}", inc)
        us = [run.solve(n, f"phi{j}", op, mu, Obstacle(dom, p)).u for j, p in enumerate(phi)]
        run.check(f"inf-tail solutions increasing at n={n}", all(np.all(b >= a - 1e-12) for a, b in zip(us, us[1:])))
        tail_err = [w1q(dom, v - u.u, q) for v in us]
        for j, e in enumerate(tail_err):
            run.record(n, f"W1q_err_inf_tail{j}", e)
        run.check(f"inf-tail W^{{1,q}} error decreasing at n={n}", _monotone_decreasing(tail_err), tail_err)
        if i == len(run.levels) - 1:
            run.field("u", dom, u.u)
            run.field("lambda", dom, u.lam)
            run.extra["finest_solution"] = u.to_json()


@scenario("h1-stability", "perturbations of the obstacle small in energy",
          "||u_n - u||_E <= (C/gamma) ||e_n||_E at every level, with e_n -> 0",
          kind="grid2d", seed=3, family=(1, 2, 4, 8, 16), amplitude=0.005, small=1e-6)
def _h1(run: Run) -> None:
    S = smooth_field(int(run.params["seed"]))
    fam = [int(k) for k in run.params["family"]]
    coefs = {"a=1": 1.0, "a in [1,4]": lambda x: np.where(x[:, 0] > 0.5, 4.0, 1.0)}
    for i, n in enumerate(run.levels):
        run.h[n] = 1.0 / n
        for label, a in coefs.items():
            dom, op = grid(n, a=a)
            x = dom.coords
            mu = discretize_measure(dom, [Atom((0.35, 0.4), -0.3, singular=True)], "constant", {"value": -0.5})
            psi = Obstacle(dom, -0.04 + 0.03 * S(x) * window(x))
            e = window(x) * (0.5 + 0.5 * np.cos(3 * np.pi * x[:, 0])) * float(run.params["amplitude"])
            u = run.solve(n, f"{label}:limit", op, mu, psi, rho=DiscreteMeasure.zero(dom))
            bound = op.C / op.gamma
            run.record(n, f"{label}:C/gamma", bound)
            ratios, errs = [], []
            for k in fam:
                sol = run.solve(n, f"{label}:k{k}", op, mu, psi.shifted(-e / k), rho=DiscreteMeasure.zero(dom))
                d = energy_norm(dom, sol.u - u.u)
                r = d / energy_norm(dom, e / k)
                errs.append(d)
                ratios.append(r)
                run.record(n, f"{label}:energy_err_k{k}", d)
                run.record(n, f"{label}:ratio_k{k}", r)
            worst = max(ratios)
            run.check(f"energy ratio within C/gamma ({label}, n={n})", worst <= bound * (1 + 1e-6), worst, bound)
            run.check(f"energy error decreasing ({label}, n={n})", _monotone_decreasing(errs, 1e-9), errs)
            tiny = e / np.max(np.abs(e)) * float(run.params["small"])
            sol = run.solve(n, f"{label}:small", op, mu, psi.shifted(-tiny), rho=DiscreteMeasure.zero(dom))
            d = float(np.max(np.abs(sol.u - u.u)))
            run.record(n, f"{label}:small_perturbation_maxdiff", d)
            run.check(f"1e-6 perturbation moves u by at most 1e-6 ({label}, n={n})", d <= 1e-6 * (1 + 1e-6), d, 0.0, 1e-6)
            if i == 0 and label == "a=1":
                run.cross_check(n, op, mu, psi, u)


@scenario("rhoenne", "obstacles shifted by potentials of small measures",
          "||u_n - u||_{W^{1,q}} <= K (||rho_n|| + shift residual) with K stable across levels",
          kind="grid2d", seed=5, q=1.5, family=(1, 2, 4, 8, 16), x0=(0.55, 0.45), K_spread=1.5)
def _rhoenne(run: Run) -> None:
    q = float(run.params["q"])
    S = smooth_field(int(run.params["seed"]))
    fam = [int(k) for k in run.params["family"]]
    Ks = []
    for i, n in enumerate(run.levels):
        dom, op = grid(n)
        run.h[n] = dom.h
        x = dom.coords
        mu = _base_measure(dom)
        psi = Obstacle(dom, -0.03 + 0.04 * S(x) * window(x))
        u = run.solve(n, "limit", op, mu, psi, rho=DiscreteMeasure.zero(dom))
        if i == 0:
            run.cross_check(n, op, mu, psi, u)
        zero_rho = DiscreteMeasure.zero(dom)
        same = solve_vi(op, mu, psi.shifted(-solve_linear(op, zero_rho)), ACTIVE_SET)
        run.check(f"rho = 0 gives the identical solution at n={n}", np.array_equal(same.u, u.u))
        ratios = []
        for k in fam:
            rho = discretize_measure(dom, [Atom(tuple(run.params["x0"]), 1.0 / k)])
            u_rho = solve_linear(op, rho)
            a = run.solve(n, f"k{k}", op, mu, psi.shifted(-u_rho), rho=rho)
            b_inner = run.solve(n, f"k{k}:shift", op, mu - rho, psi, rho=zero_rho)
            res = float(np.max(np.abs(a.u - (b_inner.u + u_rho)))) / a.scale
            run.check(f"shift identity for k={k} at n={n}", res <= 1e-8, res, 0.0, 1e-8)
            err = w1q(dom, a.u - u.u, q)
            ratios.append(err / (rho.tv_norm() + res))
            run.record(n, f"W1q_err_k{k}", err)
            run.record(n, f"ratio_k{k}", ratios[-1])
        Ks.append(max(ratios))
        run.record(n, "K", Ks[-1])
        if i == len(run.levels) - 1:
            run.field("u", dom, u.u)
            run.extra["finest_solution"] = u.to_json()
    K0 = Ks[0]
    run.extra["K_fitted"] = K0
    spread = float(run.params["K_spread"])
    run.check("K fitted on the coarsest level holds within the allowed spread on all levels",
              all(k <= spread * K0 for k in Ks), Ks, K0, spread)
    run.check("fitted K is stable across levels", max(Ks) / min(Ks) <= spread, max(Ks) / min(Ks), 1.0, spread)


@scenario("lostesso", "2-D analogue: atom away from the pole of a Green obstacle",
          "the solution with datum -delta_x0 and obstacle -G_0 vanishes in the limit, matching the datum mu+ - mu-_a = 0",
          kind="grid2d", x0=(1.5, 1.0), extent=2.0, clearance=0.25)
def _lostesso(run: Run) -> None:
    ext = float(run.params["extent"])
    c = (ext / 2, ext / 2)
    x0 = tuple(run.params["x0"])
    run.extra["analogue"] = "two-dimensional logarithmic kernel stands in for N > 2"
    far_max = []
    for i, n in enumerate(run.levels):
        dom, op = grid(n, ext)
        run.h[n] = dom.h
        x = dom.coords
        green0 = solve_linear(op, discretize_measure(dom, [Atom(c, 1.0)]))
        psi = Obstacle(dom, -green0)
        mu = discretize_measure(dom, [Atom(x0, -1.0, singular=True)])
        sol = run.solve(n, "full", op, mu, psi, rho=DiscreteMeasure.zero(dom))
        if i == 0:
            run.cross_check(n, op, mu, psi, sol)
        absolute = mu.without_singular()
        drop = float(np.abs(mu.loads).sum() - np.abs(absolute.loads).sum())
        run.check(f"dropping the singular atom removes exactly mass 1 at n={n}", abs(drop - 1.0) <= 1e-12, drop, 1.0, 1e-12)
        reduced = run.solve(n, "absolutely-continuous", op, absolute, psi, rho=DiscreteMeasure.zero(dom))
        run.check(f"datum mu+ - mu-_a gives u = 0 exactly at n={n}", not np.any(reduced.u), float(np.max(np.abs(reduced.u))), 0.0)
        r = float(run.params["clearance"])
        far = (np.hypot(x[:, 0] - c[0], x[:, 1] - c[1]) > r) & (np.hypot(x[:, 0] - x0[0], x[:, 1] - x0[1]) > r)
        m = float(np.max(np.abs(sol.u[far])))
        far_max.append(m)
        run.record(n, "far_max_abs_u", m)
        run.record(n, "far_max_abs_u/h", m / dom.h)
        run.record(n, "reaction_mass", sol.reaction_mass)
        for pt in ((0.5, 1.0), (1.0, 0.5), (1.0, 1.5)):
            run.record(n, f"u({pt[0]:g},{pt[1]:g})", probe(dom, sol.u, pt))
        run.check(f"far-field probe at most 10h at n={n}", m <= 10 * dom.h, m, 0.0, 10 * dom.h)
        if i == len(run.levels) - 1:
            run.field("u", dom, sol.u)
            run.field("lambda", dom, sol.lam)
            run.extra["finest_solution"] = sol.to_json()
    run.check("far-field maximum decreases under refinement", _monotone_decreasing(far_max), far_max)


_G_SET = {
    "affine": lambda x: 0.1 + 0.2 * x[:, 0],
    "wave": lambda x: 0.15 * np.sin(2 * np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
    "quadratic": lambda x: 0.3 - 0.2 * x[:, 1] ** 2,
}


@scenario("uniforme", "uniformly converging obstacles with boundary data",
          "||u_n - u||_inf <= ||psi_n - psi||_inf at every fixed h; reaction bounded independently of g",
          kind="grid2d", seed=9, family=(1, 2, 4, 8, 10, 16), density=-30.0, certificate=20.0)
def _uniforme(run: Run) -> None:
    S = smooth_field(int(run.params["seed"]))
    fam = [int(k) for k in run.params["family"]]
    for i, n in enumerate(run.levels):
        dom, op = grid(n)
        run.h[n] = dom.h
        x = dom.coords
        mu = discretize_measure(dom, [Atom((0.3, 0.6), -0.3, singular=True), Atom((0.7, 0.3), 0.2)],
                                "constant", {"value": float(run.params["density"])})
        rho = discretize_measure(dom, [], "constant", {"value": float(run.params["certificate"])})
        osc = window(x) * np.sin(5 * np.pi * x[:, 0]) * np.sin(3 * np.pi * x[:, 1])
        osc /= np.max(np.abs(osc))
        u_rho = solve_linear(op, rho)
        bound = certificate_bound(op, mu, rho)
        for gname, gf in _G_SET.items():
            g = BoundaryData.from_function(dom, gf)
            lift = harmonic_lift(op, g)
            psi = Obstacle(dom, lift - 1.0 + 0.3 * S(x) * window(x))
            base = _solve_g(run, n, f"{gname}:limit", op, mu, g, psi, rho, lift)
            if i == 0 and gname == "affine":
                alt = solve_vi(op, mu, psi.shifted(lift), SolverConfig(method="psor"))
                diff = float(np.max(np.abs(alt.u + lift - base.u)))
                run.check(f"psor agrees with active set at level {n}", diff <= 1e-6 * base.scale, diff)
            slack = []
            for k in fam:
                c = 1.0 / k
                psi_n = Obstacle(dom, psi.values + c * osc)
                if np.any(psi_n.values > lift + u_rho + 1e-12):
                    raise AssertionError("certificate does not dominate the perturbed obstacle")
                sol = _solve_g(run, n, f"{gname}:k{k}", op, mu, g, psi_n, rho, lift)
                d = float(np.max(np.abs(sol.u - base.u)))
                slack.append(c + 10 * sol.tolerance - d)
                run.record(n, f"{gname}:maxdiff_k{k}", d)
                run.record(n, f"{gname}:reaction_k{k}", sol.reaction_mass)
                run.check(f"uniform stability {gname} c={c:g} n={n}", d <= c + 10 * sol.tolerance, d, c, 10 * sol.tolerance)
                run.check(f"reaction bound {gname} c={c:g} n={n}", sol.reaction_mass <= bound * (1 + 1e-9),
                          sol.reaction_mass, bound)
            run.record(n, f"{gname}:min_slack", min(slack))
            same = _solve_g(run, n, f"{gname}:c0", op, mu, g, Obstacle(dom, psi.values + 0.0 * osc), rho, lift)
            run.check(f"c = 0 reproduces the solution ({gname}, n={n})", np.array_equal(same.u, base.u))
            if i == len(run.levels) - 1 and gname == "affine":
                run.field("u", dom, base.u)
                run.extra["finest_solution"] = base.to_json()


def _solve_g(run, level, label, op, mu, g, psi, rho, lift):
    sol = solve_op_g(op, mu, g, psi, ACTIVE_SET)
    run.invariants(level, label, op, mu, psi, sol, rho, lift)
    return sol


@scenario("mu-k-sequence", "truncated measures mu_k = A T_k(u_mu - u_rho) + rho",
          "OP(mu_k, psi) -> OP(mu, psi) in W^{1,q} as k grows, uniformly over obstacles below u_rho",
          kind="grid2d", q=1.5, seed=13, certificate=3.0, k_fractions=(1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0, 2.0))
def _mu_k(run: Run) -> None:
    q = float(run.params["q"])
    S = smooth_field(int(run.params["seed"]))
    fr = [float(v) for v in run.params["k_fractions"]]
    for i, n in enumerate(run.levels):
        dom, op = grid(n)
        run.h[n] = dom.h
        x = dom.coords
        I = dom.interior
        mu = discretize_measure(dom, [Atom((0.4, 0.6), -0.5, singular=True)], "bump",
                                {"center": [0.6, 0.4], "width": 0.2, "amplitude": 0.5})
        rho = discretize_measure(dom, [], "constant", {"value": float(run.params["certificate"])})
        u_rho = solve_linear(op, rho)
        w = solve_linear(op, mu) - u_rho
        disk = np.hypot(x[:, 0] - 0.5, x[:, 1] - 0.5) < 0.2
        obstacles = {
            "shifted": Obstacle(dom, u_rho - 0.02),
            "scaled": Obstacle(dom, 0.5 * u_rho * (1 + 0.5 * S(x))),
            "disk": Obstacle(dom, np.where(disk, u_rho, -np.inf)),
        }
        exact = {name: run.solve(n, f"{name}:mu", op, mu, p, rho=rho) for name, p in obstacles.items()}
        top = float(np.max(np.abs(w)))
        worst = []
        for f in fr:
            k = f * top
            loads = mu.loads.copy()
            loads[I] -= (op.full @ (w - truncate(w, k)))[I]
            mu_k = DiscreteMeasure.from_loads(dom, loads)
            digest = mu_k.loads.tobytes()
            if f >= 1.0:
                run.check(f"k >= ||w||_inf leaves the loads untouched (n={n}, k/top={f:g})",
                          mu_k.loads.tobytes() == mu.loads.tobytes())
            errs = []
            for name, p in obstacles.items():
                if mu_k.loads.tobytes() != digest:
                    raise AssertionError("mu_k changed between obstacles")
                sol = run.solve(n, f"{name}:k{f:g}", op, mu_k, p, rho=rho)
                e = w1q(dom, sol.u - exact[name].u, q)
                errs.append(e)
                run.record(n, f"{name}:W1q_err_k{f:g}", e)
            worst.append(max(errs))
            run.record(n, f"max_W1q_err_k{f:g}", worst[-1])
        run.check(f"worst-case error nonincreasing in k at n={n}", _monotone_decreasing(worst, 0.02), worst)
        run.check(f"error vanishes once truncation is inactive at n={n}", worst[-1] == 0.0, worst[-1], 0.0)
        if i == 0:
            run.cross_check(n, op, mu, obstacles["shifted"], exact["shifted"])
        if i == len(run.levels) - 1:
            run.field("u", dom, exact["shifted"].u)
            run.extra["finest_solution"] = exact["shifted"].to_json()
