"""Discrete domains, the scalar-coefficient elliptic operator, measures, obstacles and norms.

Three domain kinds are supported:

* ``interval``: the segment (0, L), both end points are boundary nodes;
* ``radial``: radially symmetric functions on the ball B_R(0) of R^N, sampled
  at r_i = i*h, node 0 is the pole and node M sits on the sphere |x| = R;
* ``grid2d``: a tensor grid on the rectangle (0, Lx) x (0, Ly).

Every operator is assembled as a weighted graph Laplacian over *all* nodes.
The unknowns are the interior nodes, boundary values enter as data.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AtomOutsideDomain,
    InfeasibleObstacle,
    InfiniteField,
    InvalidMesh,
    NonEllipticCoefficient,
    SingularSystem,
)

KINDS = ("interval", "radial", "grid2d")


def unit_ball_volume(N: int) -> float:
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def sphere_area(N: int) -> float:
    """Area of the unit (N-1)-sphere in R^N, e.g. 4*pi for N = 3."""
    return N * unit_ball_volume(N)


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    kind: str
    dimension: int
    extent: tuple[float, ...]
    shape: tuple[int, ...]
    coords: np.ndarray
    spacing: tuple[float, ...]
    boundary: np.ndarray
    volumes: np.ndarray
    edges: np.ndarray
    edge_weights: np.ndarray
    cells: np.ndarray
    cell_volumes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def h(self) -> float:
        return max(self.spacing)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def measure(self) -> float:
        if self.kind == "radial":
            return unit_ball_volume(self.dimension) * self.extent[0] ** self.dimension
        return float(np.prod(self.extent))

    @property
    def radii(self) -> np.ndarray:
        """Distance of each node to the origin (the radial coordinate for ``radial``)."""
        return np.linalg.norm(self.coords, axis=1)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "extent": list(self.extent),
            "shape": list(self.shape),
        }


def _edges_1d(n: int) -> np.ndarray:
    i = np.arange(n - 1)
    return np.stack([i, i + 1], axis=1)


def build_interval(L: float, M: int) -> DiscreteDomain:
    if M < 4:
        raise InvalidMesh(f"interval mesh needs M >= 4, got {M}")
    if L <= 0:
        raise InvalidMesh("interval length must be positive")
    h = L / M
    x = np.arange(M + 1) * h
    x[-1] = L
    boundary = np.zeros(M + 1, dtype=bool)
    boundary[[0, M]] = True
    vol = np.full(M + 1, h)
    vol[[0, M]] = h / 2
    edges = _edges_1d(M + 1)
    return DiscreteDomain(
        kind="interval",
        dimension=1,
        extent=(float(L),),
        shape=(M + 1,),
        coords=x[:, None],
        spacing=(h,),
        boundary=boundary,
        volumes=vol,
        edges=edges,
        edge_weights=np.full(M, 1.0 / h),
        cells=edges,
        cell_volumes=np.full(M, h),
    )


def build_radial_mesh(N: int, R: float, M: int) -> DiscreteDomain:
    """Radial mesh r_i = i*R/M of the ball B_R(0) in R^N.

    Control volume of node i is the shell [r_i - h/2, r_i + h/2] cut to [0, R];
    the pole owns the ball of radius h/2.
    """
    if N < 2:
        raise InvalidMesh(f"radial mesh needs N >= 2, got {N}")
    if M < 8:
        raise InvalidMesh(f"radial mesh needs M >= 8, got {M}")
    if R <= 0:
        raise InvalidMesh("radius must be positive")
    h = R / M
    r = np.arange(M + 1) * h
    r[-1] = R
    boundary = np.zeros(M + 1, dtype=bool)
    boundary[M] = True
    omega = unit_ball_volume(N)
    lo = np.clip(r - h / 2, 0.0, R)
    hi = np.clip(r + h / 2, 0.0, R)
    vol = omega * (hi**N - lo**N)
    rf = (r[:-1] + r[1:]) / 2
    weights = sphere_area(N) * rf ** (N - 1) / h
    return DiscreteDomain(
        kind="radial",
        dimension=N,
        extent=(float(R),),
        shape=(M + 1,),
        coords=r[:, None],
        spacing=(h,),
        boundary=boundary,
        volumes=vol,
        edges=_edges_1d(M + 1),
        edge_weights=weights,
        cells=_edges_1d(M + 1),
        cell_volumes=omega * (r[1:] ** N - r[:-1] ** N),
    )


def build_grid2d(extent_x: float, extent_y: float, nx: int, ny: int) -> DiscreteDomain:
    """Tensor grid with (nx+1) x (ny+1) nodes, x varying fastest."""
    if nx < 4 or ny < 4:
        raise InvalidMesh(f"grid needs nx, ny >= 4, got {nx}, {ny}")
    if extent_x <= 0 or extent_y <= 0:
        raise InvalidMesh("extents must be positive")
    hx, hy = extent_x / nx, extent_y / ny
    xs = np.arange(nx + 1) * hx
    ys = np.arange(ny + 1) * hy
    xs[-1], ys[-1] = extent_x, extent_y
    X, Y = np.meshgrid(xs, ys)
    coords = np.stack([X.ravel(), Y.ravel()], axis=1)
    I, J = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    I, J = I.ravel(), J.ravel()
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    boundary = (I == 0) | (I == nx) | (J == 0) | (J == ny)
    wx = np.where((I == 0) | (I == nx), 0.5, 1.0)
    wy = np.where((J == 0) | (J == ny), 0.5, 1.0)
    vol = wx * wy * hx * hy

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny + 1))
    ex = np.stack([idx(ii, jj).ravel(), idx(ii + 1, jj).ravel()], axis=1)
    # edges running along the boundary carry half a dual face
    wex = np.where((jj.ravel() == 0) | (jj.ravel() == ny), 0.5, 1.0) * hy / hx
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny))
    ey = np.stack([idx(ii, jj).ravel(), idx(ii, jj + 1).ravel()], axis=1)
    wey = np.where((ii.ravel() == 0) | (ii.ravel() == nx), 0.5, 1.0) * hx / hy

    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    cells = np.stack([idx(ci, cj), idx(ci + 1, cj), idx(ci, cj + 1), idx(ci + 1, cj + 1)], axis=1)
    return DiscreteDomain(
        kind="grid2d",
        dimension=2,
        extent=(float(extent_x), float(extent_y)),
        shape=(nx + 1, ny + 1),
        coords=coords,
        spacing=(hx, hy),
        boundary=boundary,
        volumes=vol,
        edges=np.concatenate([ex, ey]),
        edge_weights=np.concatenate([wex, wey]),
        cells=cells,
        cell_volumes=np.full(len(cells), hx * hy),
    )


def domain_from_dict(d: dict) -> DiscreteDomain:
    kind = d["kind"]
    if kind == "interval":
        return build_interval(d["extent"][0], d["shape"][0] - 1)
    if kind == "radial":
        return build_radial_mesh(d["dimension"], d["extent"][0], d["shape"][0] - 1)
    if kind == "grid2d":
        return build_grid2d(d["extent"][0], d["extent"][1], d["shape"][0] - 1, d["shape"][1] - 1)
    raise InvalidMesh(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------------------
# operator


def _graph_laplacian(n: int, edges: np.ndarray, w: np.ndarray, diag=None) -> sp.csr_matrix:
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([w, w, -w, -w])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if diag is not None:
        K = K + sp.diags(diag, format="csr")
    K.sum_duplicates()
    K.sort_indices()
    return K


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Stiffness of -div(a grad .) on a DiscreteDomain, a scalar field a(x) > 0."""

    domain: DiscreteDomain
    coefficient: np.ndarray
    face_coefficient: np.ndarray
    full: sp.csr_matrix
    gamma: float
    C: float
    reaction: np.ndarray | None = None

    @cached_property
    def K(self) -> sp.csr_matrix:
        I = self.domain.interior
        return self.full[I][:, I].tocsr()

    @cached_property
    def K_ib(self) -> sp.csr_matrix:
        return self.full[self.domain.interior][:, self.domain.boundary_nodes].tocsr()

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.K.diagonal()

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.K.tocsc())
        except RuntimeError as exc:  # pragma: no cover - M-matrices are nonsingular
            raise SingularSystem(str(exc)) from exc

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularSystem("non-finite solution of the linear system")
        return x

    def residual(self, u: np.ndarray, loads: np.ndarray) -> np.ndarray:
        """(K u - loads) on interior nodes for a full nodal field u."""
        return (self.full @ u)[self.domain.interior] - loads[self.domain.interior]

    def energy(self, u: np.ndarray) -> float:
        """Quadratic form sum_e a_e g_e (u_i - u_j)^2 (plus reaction term if any)."""
        e = self.domain.edges
        d = u[e[:, 0]] - u[e[:, 1]]
        val = float(np.sum(self.face_coefficient * self.domain.edge_weights * d * d))
        if self.reaction is not None:
            val += float(np.sum(self.reaction * u * u))
        return val

    def with_mass(self) -> "EllipticOperator":
        """Same operator plus the lumped L2 mass term (full H^1 form)."""
        dom = self.domain
        return EllipticOperator(
            domain=dom,
            coefficient=self.coefficient,
            face_coefficient=self.face_coefficient,
            full=_graph_laplacian(
                dom.n_nodes, dom.edges, self.face_coefficient * dom.edge_weights, dom.volumes
            ),
            gamma=self.gamma,
            C=self.C,
            reaction=dom.volumes.copy(),
        )


def assemble_operator(dom: DiscreteDomain, a: float | np.ndarray | Callable = 1.0) -> EllipticOperator:
    """Finite-volume assembly with harmonic face averaging of the nodal coefficient.

    ``a`` may be a scalar, a nodal array or a callable taking the (n, d) node
    coordinates and returning nodal values.
    """
    if callable(a):
        vals = np.asarray(a(dom.coords), dtype=float).reshape(-1)
    else:
        vals = np.broadcast_to(np.asarray(a, dtype=float), (dom.n_nodes,)).copy()
    if vals.shape != (dom.n_nodes,):
        raise ValueError("coefficient must have one value per node")
    if not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise NonEllipticCoefficient(f"coefficient minimum {vals.min()} is not positive")
    ai, aj = vals[dom.edges[:, 0]], vals[dom.edges[:, 1]]
    face = np.where(ai == aj, ai, 2 * ai * aj / (ai + aj))
    full = _graph_laplacian(dom.n_nodes, dom.edges, face * dom.edge_weights)
    return EllipticOperator(
        domain=dom,
        coefficient=vals,
        face_coefficient=face,
        full=full,
        gamma=float(vals.min()),
        C=float(vals.max()),
    )


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class Atom:
    location: tuple[float, ...]
    mass: float
    singular: bool = False


DensityFactory = Callable[[dict], Callable[[np.ndarray], np.ndarray]]
DENSITIES: dict[str, DensityFactory] = {}


def register_density(name: str):
    def deco(factory: DensityFactory) -> DensityFactory:
        DENSITIES[name] = factory
        return factory

    return deco


@register_density("zero")
def _zero_density(params):
    return lambda x: np.zeros(len(x))


@register_density("constant")
def _constant_density(params):
    value = float(params.get("value", 1.0))
    return lambda x: np.full(len(x), value)


@register_density("bump")
def _bump_density(params):
    """amplitude * exp(-|x - center|^2 / width^2)."""
    c = np.asarray(params.get("center", [0.0]), dtype=float)
    w = float(params.get("width", 0.1))
    amp = float(params.get("amplitude", 1.0))
    return lambda x: amp * np.exp(-np.sum((x - c[: x.shape[1]]) ** 2, axis=1) / w**2)


def _split_atom(dom: DiscreteDomain, loc: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Node indices and multilinear weights carrying one unit of atom mass."""
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    if dom.kind in ("interval", "radial"):
        x = float(loc[0])
        L = dom.extent[0]
        lo_ok = x >= 0 if dom.kind == "radial" else x > 0
        if not (lo_ok and x < L):
            raise AtomOutsideDomain(f"atom at {x} outside the open domain")
        h = dom.spacing[0]
        k = min(int(x // h), dom.shape[0] - 2)
        t = (x - k * h) / h
        if t == 0.0:
            return np.array([k]), np.array([1.0])
        return np.array([k, k + 1]), np.array([1.0 - t, t])
    if len(loc) != 2:
        raise AtomOutsideDomain("grid2d atoms need two coordinates")
    x, y = loc
    Lx, Ly = dom.extent
    if not (0 < x < Lx and 0 < y < Ly):
        raise AtomOutsideDomain(f"atom at {(x, y)} outside the open rectangle")
    nx, ny = dom.shape[0] - 1, dom.shape[1] - 1
    hx, hy = dom.spacing
    i = min(int(x // hx), nx - 1)
    j = min(int(y // hy), ny - 1)
    s = (x - i * hx) / hx
    t = (y - j * hy) / hy
    idx = np.array([j * (nx + 1) + i, j * (nx + 1) + i + 1, (j + 1) * (nx + 1) + i, (j + 1) * (nx + 1) + i + 1])
    w = np.array([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
    keep = w != 0
    return idx[keep], w[keep]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def _integrate_density(dom: DiscreteDomain, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Mass of the density in each control volume."""
    if dom.kind != "radial":
        return np.asarray(f(dom.coords), dtype=float) * dom.volumes
    N, R, h = dom.dimension, dom.extent[0], dom.spacing[0]
    r = dom.coords[:, 0]
    lo = np.clip(r - h / 2, 0.0, R)
    hi = np.clip(r + h / 2, 0.0, R)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = np.asarray(f(pts.reshape(-1, 1)), dtype=float).reshape(pts.shape)
    out = sphere_area(N) * np.sum(_GL_W[None, :] * vals * pts ** (N - 1), axis=1) * half
    # pole cell: density value at its outer face times the cell volume
    out[0] = float(np.asarray(f(np.array([[h / 2]])))[0]) * dom.volumes[0]
    return out


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Signed measure: tagged atoms plus a density, assembled onto nodes.

    Atom loads are kept split by sign so the positive and negative parts are
    exact nodal measures and the total variation is preserved by assembly.
    """

    domain: DiscreteDomain
    atoms: tuple[Atom, ...]
    atom_pos: np.ndarray
    atom_neg: np.ndarray
    density_loads: np.ndarray
    density_name: str | None = None
    density_params: dict = field(default_factory=dict)

    @property
    def density_cells(self) -> np.ndarray:
        return self.density_loads / self.domain.volumes

    @cached_property
    def pos_loads(self) -> np.ndarray:
        return self.atom_pos + np.maximum(self.density_loads, 0.0)

    @cached_property
    def neg_loads(self) -> np.ndarray:
        return self.atom_neg + np.maximum(-self.density_loads, 0.0)

    @cached_property
    def loads(self) -> np.ndarray:
        return self.pos_loads - self.neg_loads

    def tv_norm(self) -> float:
        return float(sum(abs(a.mass) for a in self.atoms) + np.abs(self.density_loads).sum())

    def split_l1(self) -> float:
        """l1 norm of the nodal positive part plus that of the negative part."""
        return float(self.pos_loads.sum() + self.neg_loads.sum())

    def interior_l1(self) -> float:
        return float(np.abs(self.loads[self.domain.interior]).sum())

    @classmethod
    def from_loads(cls, dom: DiscreteDomain, loads: np.ndarray) -> "DiscreteMeasure":
        loads = np.asarray(loads, dtype=float)
        z = np.zeros(dom.n_nodes)
        return cls(dom, (), z, z.copy(), loads.copy(), "nodal", {})

    @classmethod
    def zero(cls, dom: DiscreteDomain) -> "DiscreteMeasure":
        return cls.from_loads(dom, np.zeros(dom.n_nodes))

    def positive_part(self) -> "DiscreteMeasure":
        return DiscreteMeasure.from_loads(self.domain, self.pos_loads)

    def negative_part(self) -> "DiscreteMeasure":
        return DiscreteMeasure.from_loads(self.domain, self.neg_loads)

    def without_singular(self) -> "DiscreteMeasure":
        """Drop the singular-tagged atoms (the measure minus its tagged part)."""
        keep = tuple(a for a in self.atoms if not a.singular)
        return discretize_measure(self.domain, keep, None)._with_density(self)

    def _with_density(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return DiscreteMeasure(
            self.domain,
            self.atoms,
            self.atom_pos,
            self.atom_neg,
            other.density_loads.copy(),
            other.density_name,
            dict(other.density_params),
        )

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.domain is not self.domain:
            raise ValueError("measures live on different domains")
        names = [n for n in (self.density_name, other.density_name) if n not in (None, "zero")]
        return DiscreteMeasure(
            self.domain,
            self.atoms + other.atoms,
            self.atom_pos + other.atom_pos,
            self.atom_neg + other.atom_neg,
            self.density_loads + other.density_loads,
            "+".join(names) if names else None,
            {},
        )

    def __mul__(self, c: float) -> "DiscreteMeasure":
        c = float(c)
        atoms = tuple(Atom(a.location, c * a.mass, a.singular) for a in self.atoms)
        pos, neg = (self.atom_pos, self.atom_neg) if c >= 0 else (self.atom_neg, self.atom_pos)
        return DiscreteMeasure(
            self.domain, atoms, abs(c) * pos, abs(c) * neg, c * self.density_loads,
            self.density_name, dict(self.density_params, scale=c * self.density_params.get("scale", 1.0)),
        )

    __rmul__ = __mul__

    def __neg__(self) -> "DiscreteMeasure":
        return self * -1.0

    def __sub__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return self + (-other)

    def to_json(self) -> dict:
        atoms = []
        for a in self.atoms:
            entry = {"x": a.location[0]}
            if len(a.location) > 1:
                entry["y"] = a.location[1]
            entry.update(mass=a.mass, singular=a.singular)
            atoms.append(entry)
        out = {"atoms": atoms, "density": self.density_name or "zero", "params": dict(self.density_params)}
        if self.density_name == "nodal" or (self.density_name and self.density_name not in DENSITIES):
            out["density"] = "nodal"
            out["params"] = {"loads": self.density_loads.tolist()}
        return out


def discretize_measure(
    dom: DiscreteDomain,
    atoms: Iterable[Atom | tuple] = (),
    density: Callable[[np.ndarray], np.ndarray] | str | None = None,
    params: dict | None = None,
) -> DiscreteMeasure:
    """Assemble atoms (multilinear splitting) and a density (per control volume)."""
    params = dict(params or {})
    n = dom.n_nodes
    pos, neg = np.zeros(n), np.zeros(n)
    parsed = []
    for a in atoms:
        if not isinstance(a, Atom):
            loc, mass, *rest = a
            a = Atom(tuple(np.atleast_1d(loc).astype(float).tolist()), float(mass), bool(rest[0]) if rest else False)
        idx, w = _split_atom(dom, a.location)
        target = pos if a.mass >= 0 else neg
        np.add.at(target, idx, abs(a.mass) * w)
        parsed.append(a)
    name = None
    if density is None:
        dens = np.zeros(n)
    else:
        if isinstance(density, str):
            name = density
            if density == "nodal":
                dens = np.asarray(params["loads"], dtype=float)
                return DiscreteMeasure(dom, tuple(parsed), pos, neg, dens, "nodal", {})
            f = DENSITIES[density](params)
        else:
            f = density
            name = params.pop("name", None)
        dens = _integrate_density(dom, f)
    return DiscreteMeasure(dom, tuple(parsed), pos, neg, dens, name, params)


def measure_from_json(dom: DiscreteDomain, obj: dict) -> DiscreteMeasure:
    atoms = []
    for a in obj.get("atoms", []):
        loc = (a["x"],) if "y" not in a else (a["x"], a["y"])
        atoms.append(Atom(tuple(float(v) for v in loc), float(a["mass"]), bool(a.get("singular", False))))
    name = obj.get("density", "zero")
    params = dict(obj.get("params", {}))
    scale = params.pop("scale", 1.0)
    mu = discretize_measure(dom, atoms, name if name != "zero" else None, params)
    if scale != 1.0:
        mu = DiscreteMeasure(
            dom, mu.atoms, mu.atom_pos, mu.atom_neg, scale * mu.density_loads,
            mu.density_name, dict(mu.density_params, scale=scale),
        )
    return mu


# ---------------------------------------------------------------------------
# obstacles


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Nodal obstacle, -inf marks a node where no constraint is imposed."""

    domain: DiscreteDomain
    values: np.ndarray
    certificate: DiscreteMeasure | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.domain.n_nodes,):
            raise ValueError("obstacle needs one value per node")
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise ValueError("obstacle values must be finite or -inf")
        object.__setattr__(self, "values", v)

    @classmethod
    def unconstrained(cls, dom: DiscreteDomain) -> "Obstacle":
        return cls(dom, np.full(dom.n_nodes, -np.inf))

    @classmethod
    def constant(cls, dom: DiscreteDomain, c: float) -> "Obstacle":
        v = np.full(dom.n_nodes, float(c))
        return cls(dom, v)

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def check_boundary(self, g: np.ndarray | None = None) -> None:
        B = self.domain.boundary_nodes
        gb = np.zeros(len(B)) if g is None else np.asarray(g, dtype=float)[B]
        bad = self.values[B] > gb + 1e-12 * (1 + np.abs(gb))
        if np.any(bad):
            raise InfeasibleObstacle(
                f"obstacle exceeds the boundary datum at {int(bad.sum())} boundary node(s)"
            )

    def shifted(self, w: np.ndarray) -> "Obstacle":
        """psi - w, leaving -inf nodes untouched."""
        v = self.values.copy()
        f = self.finite
        v[f] = v[f] - w[f]
        return Obstacle(self.domain, v)

    def with_certificate(self, op: EllipticOperator, rho: DiscreteMeasure, tol: float = 1e-8) -> "Obstacle":
        u = np.zeros(self.domain.n_nodes)
        u[self.domain.interior] = op.solve_interior(rho.loads[self.domain.interior])
        I = self.domain.interior
        f = self.finite[I]
        if np.any(u[I][f] < self.values[I][f] - tol):
            raise InfeasibleObstacle("certificate potential does not dominate the obstacle")
        return Obstacle(self.domain, self.values, rho)


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class NormSpec:
    which: str
    exponent: float | None = None

    def __post_init__(self):
        if self.which not in ("H10-energy", "H1-full", "W1q", "Lp", "Linf"):
            raise ValueError(f"unknown norm {self.which!r}")
        needs = self.which in ("W1q", "Lp")
        if needs != (self.exponent is not None):
            raise ValueError(f"exponent must be given iff norm is W1q or Lp (got {self.which}, {self.exponent})")
        if needs and self.exponent <= 1:
            raise ValueError("exponent must exceed 1")


def cell_gradients(dom: DiscreteDomain, u: np.ndarray) -> np.ndarray:
    """Magnitude of the piecewise gradient on every cell."""
    c = dom.cells
    if dom.kind in ("interval", "radial"):
        return np.abs(u[c[:, 1]] - u[c[:, 0]]) / dom.spacing[0]
    hx, hy = dom.spacing
    gx = ((u[c[:, 1]] - u[c[:, 0]]) + (u[c[:, 3]] - u[c[:, 2]])) / (2 * hx)
    gy = ((u[c[:, 2]] - u[c[:, 0]]) + (u[c[:, 3]] - u[c[:, 1]])) / (2 * hy)
    return np.hypot(gx, gy)


def energy_seminorm_sq(dom: DiscreteDomain, u: np.ndarray) -> float:
    e = dom.edges
    d = u[e[:, 0]] - u[e[:, 1]]
    return float(np.sum(dom.edge_weights * d * d))


def norm(u: np.ndarray, spec: NormSpec, dom: DiscreteDomain) -> float:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InfiniteField("norms need a finite field")
    w = spec.which
    if w == "Linf":
        return float(np.max(np.abs(u))) if u.size else 0.0
    if w == "H10-energy":
        return math.sqrt(energy_seminorm_sq(dom, u))
    if w == "H1-full":
        return math.sqrt(energy_seminorm_sq(dom, u) + float(np.sum(u * u * dom.volumes)))
    p = float(spec.exponent)
    lp = float(np.sum(np.abs(u) ** p * dom.volumes)) ** (1 / p)
    if w == "Lp":
        return lp
    g = cell_gradients(dom, u)
    return float(np.sum(g**p * dom.cell_volumes)) ** (1 / p) + lp


# ---------------------------------------------------------------------------
# probes and serialization


def probe(dom: DiscreteDomain, u: np.ndarray, point: float | Sequence[float]) -> float:
    """Linear (bilinear on grids) interpolation of a nodal field at a point."""
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    if dom.kind in ("interval", "radial"):
        return float(np.interp(pt[0], dom.coords[:, 0], u))
    nx, ny = dom.shape[0] - 1, dom.shape[1] - 1
    hx, hy = dom.spacing
    i = min(max(int(pt[0] // hx), 0), nx - 1)
    j = min(max(int(pt[1] // hy), 0), ny - 1)
    s, t = pt[0] / hx - i, pt[1] / hy - j
    k = j * (nx + 1) + i
    return float(
        (1 - s) * (1 - t) * u[k] + s * (1 - t) * u[k + 1]
        + (1 - s) * t * u[k + nx + 1] + s * t * u[k + nx + 2]
    )


def nearest_node(dom: DiscreteDomain, point: float | Sequence[float]) -> int:
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    return int(np.argmin(np.sum((dom.coords - pt[None, : dom.coords.shape[1]]) ** 2, axis=1)))


def write_field_csv(path, dom: DiscreteDomain, values: np.ndarray) -> None:
    header = ["x", "value"] if dom.coords.shape[1] == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xy, v in zip(dom.coords, values):
            w.writerow([repr(float(c)) for c in xy] + [repr(float(v))])


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    return data[:, :-1], data[:, -1]


def dump_measure(path, mu: DiscreteMeasure) -> None:
    with open(path, "w") as fh:
        json.dump(mu.to_json(), fh, indent=2, sort_keys=True)
