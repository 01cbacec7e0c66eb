"""Linear solves, the discrete obstacle problem and its structural identities.

The discrete obstacle problem is the symmetric LCP

    K u - b = lam >= 0,   u >= psi,   lam * (u - psi) = 0

on interior nodes, with K an M-matrix. Its solution is the smallest discrete
supersolution above psi, which is what the measure-data obstacle problem
reduces to at a fixed mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse.linalg as spla

from .errors import NotConverged, NotSupersolution, SingularSystem
from .mesh import DiscreteMeasure, EllipticOperator, Obstacle

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-7


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings. ``omega=None`` picks 1.5 on 1-D meshes and 1.8 on grids."""

    omega: float | None = None
    tolerance: float = 1e-10
    max_iterations: int | None = None
    method: str = "psor"

    def __post_init__(self):
        if self.omega is not None and not 0 < self.omega < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.method not in ("psor", "active-set"):
            raise ValueError(f"unknown method {self.method!r}")

    def relaxation(self, op: EllipticOperator) -> float:
        if self.omega is not None:
            return self.omega
        return 1.8 if op.domain.kind == "grid2d" else 1.5

    def to_dict(self) -> dict:
        return {"omega": self.omega, "tolerance": self.tolerance,
                "max_iterations": self.max_iterations, "method": self.method}


ACTIVE_SET = SolverConfig(method="active-set")


@dataclass(frozen=True, eq=False)
class VISolution:
    u: np.ndarray
    lam: np.ndarray
    residual: float
    iterations: int
    active: np.ndarray
    scale: float
    tolerance: float

    @property
    def reaction_mass(self) -> float:
        return reaction_norm(self)

    def to_json(self, u_file: str = "u.csv", lambda_file: str = "lambda.csv") -> dict:
        return {
            "u": u_file,
            "lambda": lambda_file,
            "residual": self.residual,
            "iterations": self.iterations,
            "reaction_mass": self.reaction_mass,
        }


@dataclass(frozen=True, eq=False)
class BoundaryData:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary data must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, dom, g) -> "BoundaryData":
        v = np.zeros(dom.n_nodes)
        B = dom.boundary_nodes
        v[B] = np.asarray(g(dom.coords[B]), dtype=float)
        return cls(v)


def _loads(mu: DiscreteMeasure | np.ndarray) -> np.ndarray:
    return mu.loads if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)


def load_scale(op: EllipticOperator, mu) -> float:
    return 1.0 + float(np.abs(_loads(mu)[op.domain.interior]).sum())


def solve_linear(op: EllipticOperator, mu) -> np.ndarray:
    """u_mu: K u = loads on the interior, zero on the boundary (full nodal field)."""
    dom = op.domain
    b = _loads(mu)
    if b.shape != (dom.n_nodes,):
        raise ValueError("measure and operator live on different meshes")
    u = np.zeros(dom.n_nodes)
    u[dom.interior] = op.solve_interior(b[dom.interior])
    return u


def harmonic_lift(op: EllipticOperator, g: BoundaryData) -> np.ndarray:
    dom = op.domain
    u = np.zeros(dom.n_nodes)
    B, I = dom.boundary_nodes, dom.interior
    u[B] = g.values[B]
    u[I] = op.solve_interior(-(op.K_ib @ g.values[B]))
    return u


# ---------------------------------------------------------------------------
# projected SOR


@numba.njit(cache=True)
def _psor(indptr, indices, data, b, psi, has_psi, u, omega, tol, max_sweeps):
    n = b.shape[0]
    diag = np.empty(n)
    for i in range(n):
        diag[i] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                diag[i] = data[k]
    sweeps = 0
    res = np.inf
    while sweeps < max_sweeps:
        for i in range(n):
            s = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * u[j]
            v = (1.0 - omega) * u[i] + omega * s / diag[i]
            if has_psi[i] and v < psi[i]:
                v = psi[i]
            u[i] = v
        sweeps += 1
        res = 0.0
        for i in range(n):
            r = -b[i]
            for k in range(indptr[i], indptr[i + 1]):
                r += data[k] * u[indices[k]]
            if has_psi[i]:
                g = (u[i] - psi[i]) * diag[i]
                if g < r:
                    r = g
            r = abs(r)
            if r > res:
                res = r
        if res < tol:
            break
    return sweeps, res


def _complementarity_residual(op, u_I, b_I, psi_I, has_psi):
    r = op.K @ u_I - b_I
    g = np.where(has_psi, (u_I - np.where(has_psi, psi_I, 0.0)) * op.diagonal, np.inf)
    return float(np.max(np.abs(np.minimum(r, g)))) if len(r) else 0.0


def _active_set(op, b_I, psi_I, has_psi, tol, max_it):
    """Primal-dual active set iteration; exact up to round-off for M-matrices."""
    K = op.K
    n = K.shape[0]
    d = op.diagonal
    u = op.solve_interior(b_I)
    lam = np.zeros(n)
    active = has_psi & (u < psi_I)
    seen = set()
    for it in range(1, max_it + 1):
        key = active.tobytes()
        if key in seen and it > 1:
            break
        seen.add(key)
        inactive = ~active
        u = np.where(active, psi_I, 0.0)
        if inactive.any():
            rhs = b_I[inactive] - K[inactive][:, active] @ psi_I[active]
            Kii = K[inactive][:, inactive].tocsc()
            try:
                u[inactive] = spla.splu(Kii).solve(rhs)
            except RuntimeError as exc:  # pragma: no cover
                raise SingularSystem(str(exc)) from exc
        lam = K @ u - b_I
        crit = lam - d * (u - np.where(has_psi, psi_I, 0.0))
        # degenerate nodes (lam ~ 0 and u ~ psi) keep their state instead of flipping on round-off
        eps = 1e-3 * tol
        new_active = has_psi & ((crit > eps) | (active & (crit > -eps)))
        if np.array_equal(new_active, active):
            return u, it
        active = new_active
    res = _complementarity_residual(op, u, b_I, psi_I, has_psi)
    if res < tol:
        return u, it
    raise NotConverged(f"active-set iteration stalled after {it} steps (residual {res:.3e})")


def solve_vi(op: EllipticOperator, mu, psi: Obstacle, cfg: SolverConfig | None = None) -> VISolution:
    """Discrete OP(mu, psi): smallest supersolution above psi, zero on the boundary."""
    cfg = cfg or SolverConfig()
    dom = op.domain
    psi.check_boundary()
    b = _loads(mu)
    I = dom.interior
    b_I = b[I].astype(float)
    scale = 1.0 + float(np.abs(b[I]).sum())
    tol = cfg.tolerance * scale
    psi_I = psi.values[I]
    has_psi = np.isfinite(psi_I)
    psi_safe = np.where(has_psi, psi_I, 0.0)

    if not has_psi.any():
        u_I = op.solve_interior(b_I)
        iterations = 0
    elif cfg.method == "active-set":
        u_I, iterations = _active_set(op, b_I, psi_safe, has_psi, tol, cfg.max_iterations or max(50, len(I)))
    else:
        max_sweeps = cfg.max_iterations or 200 * dom.n_nodes
        u_I = np.where(has_psi, np.maximum(psi_safe, 0.0), 0.0)
        K = op.K
        iterations, _ = _psor(K.indptr, K.indices, K.data, b_I, psi_safe, has_psi, u_I,
                              cfg.relaxation(op), tol, max_sweeps)
    res = _complementarity_residual(op, u_I, b_I, psi_safe, has_psi)
    if res >= tol:
        raise NotConverged(f"{cfg.method} stopped at residual {res:.3e} > {tol:.3e} after {iterations} iterations")

    u = np.zeros(dom.n_nodes)
    u[I] = u_I
    lam = np.zeros(dom.n_nodes)
    lam[I] = op.K @ u_I - b_I
    gap = np.where(has_psi, u_I - psi_safe, np.inf)
    active = I[gap <= ACTIVE_TOL * scale]
    return VISolution(u=u, lam=lam, residual=res, iterations=int(iterations),
                      active=active, scale=scale, tolerance=tol)


def reaction_norm(sol: VISolution) -> float:
    return float(np.abs(sol.lam).sum())


def truncate(u: np.ndarray, k: float) -> np.ndarray:
    if k < 0:
        raise ValueError("truncation level must be nonnegative")
    return np.clip(u, -k, k)


def shift_solve(op, mu: DiscreteMeasure, nu: DiscreteMeasure, psi: Obstacle,
                cfg: SolverConfig | None = None) -> tuple[VISolution, VISolution]:
    """Both sides of the shift identity.

    Returns (OP(mu + nu, psi), OP(mu, psi - u_nu) with u_nu added back).
    """
    first = solve_vi(op, _loads(mu) + _loads(nu), psi, cfg)
    u_nu = solve_linear(op, nu)
    inner = solve_vi(op, mu, psi.shifted(u_nu), cfg)
    second = VISolution(u=inner.u + u_nu, lam=inner.lam, residual=inner.residual,
                        iterations=inner.iterations, active=inner.active,
                        scale=inner.scale, tolerance=inner.tolerance)
    return first, second


def solve_op_g(op, mu, g: BoundaryData, psi: Obstacle, cfg: SolverConfig | None = None) -> VISolution:
    """OP(mu, g, psi) = u0^g + OP(mu, psi - u0^g)."""
    psi.check_boundary(g.values)
    lift = harmonic_lift(op, g)
    inner = solve_vi(op, mu, psi.shifted(lift), cfg)
    return VISolution(u=inner.u + lift, lam=inner.lam, residual=inner.residual,
                      iterations=inner.iterations, active=inner.active,
                      scale=inner.scale, tolerance=inner.tolerance)


def supersolution_defect(op: EllipticOperator, w: np.ndarray, mu) -> np.ndarray:
    """K w - loads on interior nodes (w carries its own boundary values)."""
    return op.residual(w, _loads(mu))


def lattice_min(u: np.ndarray, v: np.ndarray, op: EllipticOperator, mu, tol: float = 1e-9) -> np.ndarray:
    """Pointwise minimum of two discrete supersolutions, checked to remain one."""
    scale = load_scale(op, mu)
    for name, w in (("u", u), ("v", v)):
        if supersolution_defect(op, w, mu).min() < -tol * scale:
            raise NotSupersolution(f"{name} is not a discrete supersolution")
    w = np.minimum(u, v)
    if supersolution_defect(op, w, mu).min() < -10 * tol * scale:
        raise NotSupersolution("minimum lost the supersolution property")
    return w


def certificate_bound(op: EllipticOperator, mu, rho) -> float:
    """l1 norm over interior nodes of the negative part of (mu - rho)."""
    d = (_loads(mu) - _loads(rho))[op.domain.interior]
    return float(np.maximum(-d, 0.0).sum())


def check_solution(op: EllipticOperator, mu, psi: Obstacle, sol: VISolution) -> dict[str, bool]:
    """The VISolution invariants, each as a boolean flag."""
    I = op.domain.interior
    s = sol.scale
    psi_I = psi.values[I]
    f = np.isfinite(psi_I)
    u_I, lam_I = sol.u[I], sol.lam[I]
    comp = lam_I[f] * (u_I[f] - psi_I[f])
    return {
        "above_obstacle": bool(np.all(u_I[f] >= psi_I[f] - 1e-9 * s)),
        "reaction_nonnegative": bool(np.all(lam_I >= -1e-9 * s)),
        "complementarity": bool(np.all(comp <= 1e-8 * s)),
        "free_nodes_balanced": bool(np.all(np.abs(lam_I[~f]) <= 1e-8 * s)),
    }
