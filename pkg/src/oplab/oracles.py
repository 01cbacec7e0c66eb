"""Closed-form and quadrature references for the radial examples."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import InvalidTheta, PoleEvaluation, QuadratureFailure
from .mesh import (
    DiscreteDomain,
    DiscreteMeasure,
    Obstacle,
    discretize_measure,
    register_density,
    sphere_area,
)


@dataclass(frozen=True)
class GreenBall:
    """Green function of -Laplace on B_R(0) in R^N with pole at the origin."""

    N: int = 3
    R: float = 1.0

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("GreenBall needs N >= 3")

    @property
    def c(self) -> float:
        return 1.0 / ((self.N - 2) * sphere_area(self.N))

    def __call__(self, r):
        return green_value(self, r)


def green_value(gb: GreenBall, r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise PoleEvaluation("the Green function is infinite at the pole")
    out = gb.c * (r ** (2 - gb.N) - gb.R ** (2 - gb.N))
    return float(out) if out.ndim == 0 else out


def green_nodal(gb: GreenBall, dom: DiscreteDomain) -> np.ndarray:
    """Sampled Green function, +inf at the pole node."""
    r = dom.coords[:, 0]
    out = np.full(dom.n_nodes, np.inf)
    out[r > 0] = green_value(gb, r[r > 0])
    return out


def sandwich_radii(n: int, gb: GreenBall) -> tuple[float, float]:
    """Radii where -G/2 and -G meet the plateau -n: G(a) = 2n, G(b) = n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = 1e-300

    def root(level):
        return optimize.bisect(lambda r: green_value(gb, r) - level, lo, gb.R, xtol=1e-13, maxiter=2000)

    return root(2.0 * n), root(float(n))


@dataclass(frozen=True)
class SandwichObstacle:
    n: int
    green: GreenBall

    @property
    def radii(self) -> tuple[float, float]:
        return sandwich_radii(self.n, self.green)

    def values(self, r: np.ndarray) -> np.ndarray:
        """-G/2 inside a_n, -n on (a_n, b_n), -G outside b_n; -inf at the pole."""
        r = np.asarray(r, dtype=float)
        a, b = self.radii
        out = np.full(r.shape, -np.inf)
        pos = r > 0
        G = np.zeros(r.shape)
        G[pos] = green_value(self.green, r[pos])
        out[pos & (r < a)] = -0.5 * G[pos & (r < a)]
        out[(r >= a) & (r <= b)] = -float(self.n)
        out[r > b] = -G[r > b]
        return out

    def obstacle(self, dom: DiscreteDomain) -> Obstacle:
        return Obstacle(dom, self.values(dom.coords[:, 0]))


def minus_green_obstacle(gb: GreenBall, dom: DiscreteDomain) -> Obstacle:
    return Obstacle(dom, -green_nodal(gb, dom))


@dataclass(frozen=True)
class OrsinaDatum:
    theta: float = 1.5
    N: int = 3
    R: float = 0.5

    def __post_init__(self):
        if self.theta <= 1:
            raise InvalidTheta(f"theta must exceed 1, got {self.theta}")

    def density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        p = r > 0
        out[p] = 1.0 / (r[p] ** self.N * (-np.log(r[p])) ** self.theta)
        return out

    def shell_weight(self, t: float) -> float:
        """r^N f(r) at r = exp(-t)."""
        return t ** (-self.theta) if t > 0 else 0.0

    def total_mass(self) -> float:
        """Quadrature in s = -log r of sigma * s^-theta over (log 1/R, inf)."""
        val, err = integrate.quad(lambda s: s ** (-self.theta), -math.log(self.R), np.inf)
        if err > 1e-8 * abs(val):
            raise QuadratureFailure("mass quadrature did not converge")
        return sphere_area(self.N) * val


@register_density("orsina")
def _orsina_density(params):
    od = OrsinaDatum(theta=float(params.get("theta", 1.5)), N=int(params.get("N", 3)), R=float(params.get("R", 0.5)))
    return lambda x: od.density(x[:, 0])


def orsina_field(od: OrsinaDatum, dom: DiscreteDomain) -> tuple[DiscreteMeasure, np.ndarray]:
    """Discretized density and the quadrature reference u_f (10x finer, +inf at the pole)."""
    if dom.kind != "radial" or dom.dimension != od.N or abs(dom.extent[0] - od.R) > 1e-14:
        raise ValueError("orsina_field needs a radial mesh of matching dimension and radius")
    mu = discretize_measure(dom, (), "orsina", {"theta": od.theta, "N": od.N, "R": od.R})
    ref = radial_ode_oracle(dom, density=od.density, shell_weight=od.shell_weight)
    return mu, ref


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _kernel(a, b, N):
    """Integral of s^(1-N) over (a, b)."""
    if N == 2:
        return np.log(b / a)
    return (a ** (2 - N) - b ** (2 - N)) / (N - 2)


def radial_ode_oracle(dom: DiscreteDomain, density=None, atom_mass: float = 0.0,
                      loads: np.ndarray | None = None, refine: int = 10,
                      shell_weight=None) -> np.ndarray:
    """Radial two-point problem by nested quadrature on a refined grid.

    Solves (r^(N-1) u')' = -r^(N-1) f with u(R) = 0 and a flux condition at the
    origin: u(r) = int_r^R F(s) s^(1-N) ds, F(s) = atom/sigma + int_0^s t^(N-1) f.
    Nodal ``loads`` are read as shell masses at the node radii. The value at the
    pole is +inf when the integral diverges. ``shell_weight(t)`` may supply
    r^N f(r) as a function of t = -log r for densities that blow up at the pole.
    """
    if dom.kind != "radial":
        raise ValueError("radial_ode_oracle needs a radial mesh")
    N, R, M = dom.dimension, dom.extent[0], dom.shape[0] - 1
    sigma = sphere_area(N)
    s = np.linspace(0.0, R, refine * M + 1)
    nfine = len(s) - 1
    f = density if density is not None else (lambda r: np.zeros_like(np.asarray(r, dtype=float)))

    # flux increments and inner double integral on each fine interval (Fubini)
    dF = np.zeros(nfine)
    inner = np.zeros(nfine)
    a, b = s[1:-1], s[2:]
    mid, half = (a + b) / 2, (b - a) / 2
    t = mid[:, None] + half[:, None] * _GL_X[None, :]
    ft = np.asarray(f(t), dtype=float) * t ** (N - 1)
    dF[1:] = half * np.sum(_GL_W * ft, axis=1)
    inner[1:] = half * np.sum(_GL_W * ft * _kernel(t, b[:, None], N), axis=1)
    # first interval in t = -log x; w(t) = x^N f(x) stays finite where x^N underflows
    t1 = -math.log(s[1])
    if shell_weight is None:
        def shell_weight(tt):
            return math.exp(-N * tt) * float(f(np.array([math.exp(-tt)]))[0])

    def pole_integral(g):
        return integrate.quad(lambda y: g(t1 + y), 0.0, np.inf, limit=400)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            dF[0] = pole_integral(shell_weight)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from exc
        if N == 2:
            kern = lambda tt: tt - t1  # noqa: E731
        else:
            kern = lambda tt: (math.exp((N - 2) * tt) - math.exp((N - 2) * t1)) / (N - 2)  # noqa: E731
        try:
            inner0 = pole_integral(lambda tt: shell_weight(tt) * kern(tt))
            pole_finite = bool(np.isfinite(inner0))
        except (integrate.IntegrationWarning, OverflowError, ZeroDivisionError):
            inner0, pole_finite = np.inf, False

    F = np.concatenate([[atom_mass / sigma], atom_mass / sigma + np.cumsum(dF)])
    if loads is not None:
        loads = np.asarray(loads, dtype=float)
        shell = np.zeros(len(s))
        shell[:: refine] = loads / sigma
        shell_cum = np.cumsum(shell)  # flux beyond a node includes its own shell
        F = F + shell_cum
    kern_seg = np.zeros(nfine)
    kern_seg[1:] = _kernel(s[1:-1], s[2:], N)
    seg = F[:-1] * kern_seg + inner
    if atom_mass != 0.0 or (loads is not None and loads[0] != 0.0) or not pole_finite:
        seg[0] = np.inf
    else:
        seg[0] = inner0
    u_fine = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return u_fine[:: refine].copy()
