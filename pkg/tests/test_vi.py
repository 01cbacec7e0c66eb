import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from oplab.errors import InfeasibleObstacle, NotConverged, NotSupersolution
from oplab.mesh import (
    Atom,
    DiscreteMeasure,
    Obstacle,
    assemble_operator,
    build_grid2d,
    build_interval,
    build_radial_mesh,
    discretize_measure,
    probe,
)
from oplab.suite import random_domain, random_measure, random_obstacle
from oplab.vi import (
    ACTIVE_SET,
    BoundaryData,
    SolverConfig,
    certificate_bound,
    check_solution,
    harmonic_lift,
    lattice_min,
    reaction_norm,
    shift_solve,
    solve_linear,
    solve_op_g,
    solve_vi,
    truncate,
)

KINDS = ("interval", "radial", "grid2d")


def closed_form_instance(M=400):
    dom = build_interval(1.0, M)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, (), "constant", {"value": -1.0})
    return dom, op, mu, Obstacle.constant(dom, -0.01)


def pole_instance(M, n=5):
    dom = build_radial_mesh(3, 1.0, M)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, [Atom((0.0,), -1.0)])
    return dom, op, mu, Obstacle.constant(dom, -float(n))


# --- linear solves ---------------------------------------------------------


def test_parabola():
    dom = build_interval(1.0, 100)
    op = assemble_operator(dom)
    u = solve_linear(op, discretize_measure(dom, (), "constant", {"value": 1.0}))
    assert probe(dom, u, 0.5) == pytest.approx(0.125, abs=1e-4)


def test_green_at_quarter():
    dom = build_radial_mesh(3, 1.0, 400)
    u = solve_linear(assemble_operator(dom), discretize_measure(dom, [Atom((0.0,), 1.0)]))
    assert probe(dom, u, 0.25) == pytest.approx(ref.GREEN_025, rel=0.02)


def test_zero_datum():
    dom = build_grid2d(1, 1, 8, 8)
    assert not solve_linear(assemble_operator(dom), DiscreteMeasure.zero(dom)).any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_linear_comparison(seed):
    rng = np.random.default_rng(seed)
    dom = random_domain(rng, KINDS[seed % 3])
    op = assemble_operator(dom, rng.uniform(0.5, 3.0, dom.n_nodes))
    b1 = rng.normal(size=dom.n_nodes)
    b2 = b1 + rng.uniform(0, 1, dom.n_nodes)
    u1, u2 = solve_linear(op, b1), solve_linear(op, b2)
    assert np.all(u1 <= u2 + 1e-10)


# --- obstacle problem ------------------------------------------------------


def test_closed_form_vi():
    dom, op, mu, psi = closed_form_instance()
    sol = solve_vi(op, mu, psi, SolverConfig())
    assert probe(dom, sol.u, 0.1) == pytest.approx(ref.VI_U_AT_01, abs=1e-4)
    assert sol.reaction_mass == pytest.approx(ref.VI_REACTION, rel=0.01)
    x = dom.coords[sol.active, 0]
    assert x.min() == pytest.approx(ref.VI_CONTACT, abs=2 * dom.h)
    assert x.max() == pytest.approx(1 - ref.VI_CONTACT, abs=2 * dom.h)
    bound = certificate_bound(op, mu, DiscreteMeasure.zero(dom))
    assert bound == pytest.approx(1.0, abs=2 * dom.h)  # interior share of the unit mass
    assert reaction_norm(sol) <= bound
    assert all(check_solution(op, mu, psi, sol).values())


def test_closed_form_active_set_agrees():
    dom, op, mu, psi = closed_form_instance()
    a = solve_vi(op, mu, psi, SolverConfig())
    b = solve_vi(op, mu, psi, ACTIVE_SET)
    assert np.abs(a.u - b.u).max() <= 1e-6 * a.scale


def test_unconstrained_is_linear():
    dom = build_grid2d(1, 1, 10, 10)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, [Atom((0.3, 0.4), -1.0)], "constant", {"value": 2.0})
    sol = solve_vi(op, mu, Obstacle.unconstrained(dom))
    assert np.allclose(sol.u, solve_linear(op, mu), atol=1e-13)
    assert reaction_norm(sol) <= 1e-10


def test_pole_atom_probe_decays():
    probes = []
    for M in (200, 400):
        dom, op, mu, psi = pole_instance(M)
        probes.append(probe(dom, solve_vi(op, mu, psi, ACTIVE_SET).u, 0.5))
    assert probes[0] < 0 and abs(probes[0]) <= 6.0 / 200
    assert 0.4 <= abs(probes[1]) / abs(probes[0]) <= 0.65


def test_pole_atom_reaction_tends_to_one():
    gaps = []
    for M in (100, 200, 400):
        dom, op, mu, psi = pole_instance(M)
        gaps.append(abs(solve_vi(op, mu, psi, ACTIVE_SET).reaction_mass - 1.0))
    # the missing mass is O(h)
    assert gaps[2] < gaps[1] < gaps[0]
    assert 0.4 <= gaps[2] / gaps[1] <= 0.6 and gaps[2] < 0.05


def test_infeasible_obstacle():
    dom = build_interval(1.0, 10)
    with pytest.raises(InfeasibleObstacle):
        solve_vi(assemble_operator(dom), DiscreteMeasure.zero(dom), Obstacle.constant(dom, 0.5))


def test_not_converged():
    dom, op, mu, psi = closed_form_instance(100)
    with pytest.raises(NotConverged):
        solve_vi(op, mu, psi, SolverConfig(max_iterations=2))


def test_solver_config_contract():
    with pytest.raises(ValueError):
        SolverConfig(omega=2.0)
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
    assert SolverConfig().relaxation(assemble_operator(build_grid2d(1, 1, 4, 4))) == 1.8
    assert SolverConfig().relaxation(assemble_operator(build_interval(1, 4))) == 1.5


def test_solution_json():
    dom, op, mu, psi = closed_form_instance(50)
    out = solve_vi(op, mu, psi).to_json()
    assert out["u"] == "u.csv" and out["lambda"] == "lambda.csv"
    assert set(out) == {"u", "lambda", "residual", "iterations", "reaction_mass"}


@pytest.mark.parametrize("kind", KINDS)
def test_psor_matches_active_set(kind):
    rng = np.random.default_rng({"interval": 0, "radial": 1, "grid2d": 2}[kind])
    for _ in range(15):
        dom = random_domain(rng, kind)
        op = assemble_operator(dom)
        mu = random_measure(rng, dom)
        psi = random_obstacle(rng, dom)
        a = solve_vi(op, mu, psi)
        b = solve_vi(op, mu, psi, ACTIVE_SET)
        assert np.abs(a.u - b.u).max() <= 1e-6 * a.scale
        assert all(check_solution(op, mu, psi, a).values())
        assert all(check_solution(op, mu, psi, b).values())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_vi_comparison_in_loads(seed):
    rng = np.random.default_rng(seed)
    dom = random_domain(rng, KINDS[seed % 3])
    op = assemble_operator(dom)
    psi = random_obstacle(rng, dom)
    b1 = random_measure(rng, dom).loads
    b2 = b1 + rng.uniform(0, 1, dom.n_nodes)
    s1, s2 = solve_vi(op, b1, psi, ACTIVE_SET), solve_vi(op, b2, psi, ACTIVE_SET)
    assert np.all(s1.u <= s2.u + 10 * max(s1.tolerance, s2.tolerance))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_vi_comparison_in_obstacle(seed):
    rng = np.random.default_rng(seed)
    dom = random_domain(rng, KINDS[seed % 3])
    op = assemble_operator(dom)
    mu = random_measure(rng, dom)
    psi1 = random_obstacle(rng, dom)
    bump = rng.uniform(0, 0.2, dom.n_nodes)
    bump[dom.boundary_nodes] = 0.0
    psi2 = psi1.shifted(-bump)
    s1, s2 = solve_vi(op, mu, psi1, ACTIVE_SET), solve_vi(op, mu, psi2, ACTIVE_SET)
    assert np.all(s1.u <= s2.u + 10 * max(s1.tolerance, s2.tolerance))


def test_reaction_bound_with_certificate():
    rng = np.random.default_rng(8)
    for i in range(60):
        dom = random_domain(rng, KINDS[i % 3])
        op = assemble_operator(dom)
        mu = random_measure(rng, dom)
        rho = random_measure(rng, dom, sign=1)
        u_rho = solve_linear(op, rho)
        # any obstacle below u_rho is certified by rho
        v = u_rho - rng.uniform(0, 0.3, dom.n_nodes)
        v[rng.random(dom.n_nodes) < 0.2] = -np.inf
        v[dom.boundary_nodes] = np.minimum(v[dom.boundary_nodes], 0.0)
        psi = Obstacle(dom, v).with_certificate(op, rho)
        sol = solve_vi(op, mu, psi, ACTIVE_SET)
        assert reaction_norm(sol) <= certificate_bound(op, mu, rho) * (1 + 1e-6) + 1e-12


# --- truncation ------------------------------------------------------------


def test_truncate_trivial():
    u = np.linspace(-2, 3, 11)
    assert not truncate(u, 0.0).any()
    assert np.array_equal(truncate(u, 3.0), u)
    with pytest.raises(ValueError):
        truncate(u, -1.0)


def test_truncated_green_energy():
    dom = build_radial_mesh(3, 1.0, 400)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, [Atom((0.0,), 1.0)])
    u = solve_linear(op, mu)
    assert op.energy(truncate(u, 1.0)) <= 1.0 * 1.0 * 1.01


# --- shift identity --------------------------------------------------------


def test_shift_zero_nu():
    dom, op, mu, psi = closed_form_instance(50)
    a, b = shift_solve(op, mu, DiscreteMeasure.zero(dom), psi)
    assert np.array_equal(a.u, b.u)


def test_shift_random():
    rng = np.random.default_rng(31)
    for i in range(30):
        dom = random_domain(rng, KINDS[i % 3])
        op = assemble_operator(dom)
        a, b = shift_solve(op, random_measure(rng, dom), random_measure(rng, dom, sign=1),
                           random_obstacle(rng, dom), ACTIVE_SET)
        assert np.abs(a.u - b.u).max() <= 1e-8 * max(a.scale, b.scale)


def test_shift_pole_mechanics():
    dom = build_radial_mesh(3, 1.0, 200)
    op = assemble_operator(dom)
    delta = discretize_measure(dom, [Atom((0.0,), 1.0)])
    psi = Obstacle(dom, solve_linear(op, delta) - 5.0)
    psi = Obstacle(dom, np.where(dom.boundary, -5.0, psi.values))
    a, b = shift_solve(op, DiscreteMeasure.zero(dom), delta, psi, ACTIVE_SET)
    assert np.abs(a.u - b.u).max() <= 1e-8


# --- boundary data ---------------------------------------------------------


def test_lift_constant():
    dom = build_grid2d(1, 1, 8, 8)
    u = harmonic_lift(assemble_operator(dom), BoundaryData(np.full(dom.n_nodes, 0.7)))
    assert np.allclose(u, 0.7, atol=1e-13)


def test_lift_linear():
    dom = build_grid2d(1, 1, 10, 10)
    g = BoundaryData.from_function(dom, lambda xy: xy[:, 0])
    u = harmonic_lift(assemble_operator(dom), g)
    assert probe(dom, u, (0.5, 0.5)) == pytest.approx(0.5, abs=1e-10)


def test_lift_maximum_principle():
    dom = build_grid2d(1, 1, 12, 12)
    B = dom.boundary_nodes
    v = np.zeros(dom.n_nodes)
    v[B] = np.where(np.arange(len(B)) % 2, 1.0, -1.0)
    u = harmonic_lift(assemble_operator(dom, lambda x: 1 + x[:, 0]), BoundaryData(v))
    assert np.abs(u).max() <= 1.0 + 1e-12


def test_op_g_zero_datum():
    rng = np.random.default_rng(4)
    dom = random_domain(rng, "grid2d")
    op = assemble_operator(dom)
    mu, psi = random_measure(rng, dom), random_obstacle(rng, dom)
    a = solve_op_g(op, mu, BoundaryData(np.zeros(dom.n_nodes)), psi, ACTIVE_SET)
    b = solve_vi(op, mu, psi, ACTIVE_SET)
    assert np.allclose(a.u, b.u, atol=1e-13)


def test_op_g_unconstrained_is_lift():
    dom = build_grid2d(1, 1, 8, 8)
    op = assemble_operator(dom)
    g = BoundaryData.from_function(dom, lambda xy: np.sin(3 * xy[:, 0]) + xy[:, 1])
    sol = solve_op_g(op, DiscreteMeasure.zero(dom), g, Obstacle.unconstrained(dom))
    assert np.allclose(sol.u, harmonic_lift(op, g), atol=1e-13)
    assert reaction_norm(sol) == 0.0


def test_op_g_one_dimensional_fit():
    # g = 0 at x = 0, 1 at x = 1, f = -1, psi = 0.2 inside. The constraint is
    # active only at the first node; beyond it u is the quadratic with u'' = 1
    # through (h, 0.2) and (1, 1), which the three-point stencil reproduces exactly.
    M = 200
    dom = build_interval(1.0, M)
    h = dom.h
    op = assemble_operator(dom)
    mu = discretize_measure(dom, (), "constant", {"value": -1.0})
    g = BoundaryData.from_function(dom, lambda x: x[:, 0])
    psi = Obstacle(dom, np.where(dom.boundary, -np.inf, 0.2))
    sol = solve_op_g(op, mu, g, psi, SolverConfig())
    x = dom.coords[:, 0]
    alpha = (0.8 - (1 - h) ** 2 / 2) / (1 - h)
    exact = np.where(x > 0, 0.2 + alpha * (x - h) + (x - h) ** 2 / 2, 0.0)
    assert np.abs(sol.u - exact).max() <= 1e-8
    assert sol.u[dom.interior].min() >= 0.2 - 1e-12
    assert sol.residual < sol.tolerance
    assert list(sol.active) == [1]
    assert sol.lam[1] == pytest.approx(0.2 / h - alpha + h / 2, rel=1e-8)


def test_reaction_independent_of_boundary_datum():
    rng = np.random.default_rng(12)
    for i in range(20):
        dom = random_domain(rng, KINDS[i % 3])
        op = assemble_operator(dom)
        gv = np.zeros(dom.n_nodes)
        gv[dom.boundary_nodes] = rng.uniform(-1, 1, len(dom.boundary_nodes))
        g = BoundaryData(gv)
        mu = random_measure(rng, dom)
        psi = random_obstacle(rng, dom, g=gv)
        a = solve_op_g(op, mu, g, psi, ACTIVE_SET)
        b = solve_vi(op, mu, psi.shifted(harmonic_lift(op, g)), ACTIVE_SET)
        assert np.abs(a.lam - b.lam).max() <= 10 * a.tolerance


def test_op_g_infeasible():
    dom = build_interval(1.0, 10)
    g = BoundaryData(np.zeros(dom.n_nodes))
    with pytest.raises(InfeasibleObstacle):
        solve_op_g(assemble_operator(dom), DiscreteMeasure.zero(dom), g, Obstacle.constant(dom, 0.1))


# --- lattice ---------------------------------------------------------------


def test_lattice_trivial():
    dom = build_grid2d(1, 1, 8, 8)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, (), "constant", {"value": 1.0})
    u = solve_linear(op, mu)
    assert np.array_equal(lattice_min(u, u, op, mu), u)
    v = u + 0.1
    assert np.array_equal(lattice_min(u, v, op, mu), u)


def test_lattice_random_pairs():
    rng = np.random.default_rng(40)
    dom = build_grid2d(1, 1, 12, 12)
    op = assemble_operator(dom)
    for _ in range(100):
        mu = random_measure(rng, dom)
        # supersolutions: u_mu plus potentials of nonnegative loads plus nonnegative constants
        u = solve_linear(op, mu.loads + rng.uniform(0, 1, dom.n_nodes)) + rng.uniform(0, 0.1)
        v = solve_linear(op, mu.loads + rng.exponential(1, dom.n_nodes)) + rng.uniform(0, 0.1)
        w = lattice_min(u, v, op, mu)
        scale = 1 + np.abs(mu.loads[dom.interior]).sum()
        assert op.residual(w, mu.loads).min() >= -10 * 1e-9 * scale


def test_lattice_rejects_subsolution():
    dom = build_interval(1.0, 20)
    op = assemble_operator(dom)
    mu = discretize_measure(dom, (), "constant", {"value": 1.0})
    u = solve_linear(op, mu)
    with pytest.raises(NotSupersolution):
        lattice_min(u, -u, op, mu)


def test_energy_identity_for_vi():
    # at the solution the energy equals <loads + lambda, u> over interior nodes
    dom, op, mu, psi = closed_form_instance(100)
    sol = solve_vi(op, mu, psi, ACTIVE_SET)
    I = dom.interior
    assert op.energy(sol.u) == pytest.approx(float((mu.loads[I] + sol.lam[I]) @ sol.u[I]), rel=1e-9)
    assert math.isfinite(sol.residual)
