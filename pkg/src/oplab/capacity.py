"""Discrete H^1 capacities of node sets and the level-set convergence checker."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientFamily, InvalidLevel, InvalidMesh, NotMonotone
from .mesh import DiscreteDomain, EllipticOperator, Obstacle, assemble_operator
from .vi import ACTIVE_SET, solve_vi

VERDICTS = ("converges", "fails-liminf", "fails-limsup", "converges-to-minus-infinity")


@dataclass(frozen=True, eq=False)
class CapacityResult:
    value: float
    z: np.ndarray
    iterations: int


def capacity_operator(dom: DiscreteDomain) -> EllipticOperator:
    return assemble_operator(dom, 1.0).with_mass()


def capacity(dom: DiscreteDomain, E, op: EllipticOperator | None = None) -> CapacityResult:
    """Minimal full H^1 energy of z with z = 0 on the boundary and z >= 1 on E."""
    E = np.unique(np.asarray(E, dtype=np.int64).reshape(-1))
    if E.size == 0:
        return CapacityResult(0.0, np.zeros(dom.n_nodes), 0)
    if np.any(dom.boundary[E]):
        raise ValueError("capacity target must consist of interior nodes")
    op = op or capacity_operator(dom)
    chi = np.full(dom.n_nodes, -np.inf)
    chi[E] = 1.0
    sol = solve_vi(op, np.zeros(dom.n_nodes), Obstacle(dom, chi), ACTIVE_SET)
    return CapacityResult(op.energy(sol.u), sol.u, sol.iterations)


class CapacityCache:
    """Capacities keyed by node set; one factorized operator per domain."""

    def __init__(self, dom: DiscreteDomain):
        self.domain = dom
        self.op = capacity_operator(dom)
        self._values: dict[bytes, float] = {}

    @staticmethod
    def key(nodes: np.ndarray) -> bytes:
        return np.asarray(nodes, dtype=np.int64).tobytes()

    def get(self, nodes: np.ndarray) -> float:
        k = self.key(nodes)
        if k not in self._values:
            self._values[k] = capacity(self.domain, nodes, self.op).value
        return self._values[k]

    def fill(self, node_sets: Sequence[np.ndarray], threads: int | None = None) -> None:
        todo = {}
        for s in node_sets:
            k = self.key(s)
            if k not in self._values:
                todo[k] = s
        if not todo:
            return
        threads = threads or _threads()
        keys = sorted(todo)
        self.op.K  # build shared factors before fanning out
        if threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                vals = list(ex.map(lambda k: capacity(self.domain, todo[k], self.op).value, keys))
        else:
            vals = [capacity(self.domain, todo[k], self.op).value for k in keys]
        self._values.update(zip(keys, vals))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OPLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# boxes and level sets


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box in node coordinates (a ball around 0 on radial meshes)."""

    lo: tuple
    hi: tuple
    label: str = ""

    def contains(self, coords: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        return np.all((coords >= lo - 1e-12) & (coords <= hi + 1e-12), axis=1)

    def grown(self, m: float, label: str = "") -> "Box":
        lo = tuple(max(0.0, v - m) if v == 0.0 else v - m for v in self.lo)
        return Box(lo, tuple(v + m for v in self.hi), label)

    def to_dict(self) -> dict:
        return {"label": self.label, "lo": list(self.lo), "hi": list(self.hi)}


def _inside(inner: Box, outer: Box, margin: float, radial: bool) -> bool:
    for a, b in zip(inner.lo, outer.lo):
        if radial and a == 0.0 and b == 0.0:
            continue
        if a - b < margin - 1e-12:
            return False
    return all(b - a >= margin - 1e-12 for a, b in zip(inner.hi, outer.hi))


def domain_box(dom: DiscreteDomain) -> Box:
    return Box(tuple(0.0 for _ in dom.extent), tuple(dom.extent), "domain")


def level_set(values, t: float, box: Box | None = None, dom: DiscreteDomain | None = None) -> np.ndarray:
    """Interior nodes with value > t, restricted to the box."""
    if isinstance(values, Obstacle):
        dom, v = values.domain, values.values
    else:
        if dom is None:
            raise ValueError("a plain field needs its domain")
        v = np.asarray(values, dtype=float)
    t = float(t)
    if np.isnan(t) or t == -np.inf:
        raise InvalidLevel(f"level must be a real number or +inf, got {t}")
    mask = (v > t) & ~dom.boundary & np.isfinite(v)
    if box is not None:
        mask &= box.contains(dom.coords)
    return np.flatnonzero(mask)


@dataclass(frozen=True)
class LevelSetProbe:
    levels: tuple
    gap: float
    boxes: tuple  # pairs (B, B')
    eps_cap: float = 0.05

    def __post_init__(self):
        if not self.gap > 0:
            raise ValueError("level gap must be positive")
        if not self.levels:
            raise ValueError("probe needs at least one level")
        if any(np.isnan(t) or t == -np.inf for t in self.levels):
            raise InvalidLevel("probe levels must be real")

    def validate(self, dom: DiscreteDomain) -> None:
        m = 2 * dom.h - 1e-12
        radial = dom.kind == "radial"
        omega = domain_box(dom)
        for B, Bp in self.boxes:
            if not (_inside(B, Bp, m, radial) and _inside(Bp, omega, m, radial)):
                raise InvalidMesh(f"boxes {B.label}/{Bp.label} are not nested with margin 2h")

    def mapped(self, phi: Callable) -> "LevelSetProbe":
        lv = np.asarray(phi(np.asarray(self.levels, dtype=float)), dtype=float)
        return LevelSetProbe(tuple(float(t) for t in lv), self.gap, self.boxes, self.eps_cap)

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "gap": self.gap,
            "boxes": [[B.to_dict(), Bp.to_dict()] for B, Bp in self.boxes],
            "eps_cap": self.eps_cap,
        }


def default_boxes(dom: DiscreteDomain) -> tuple:
    m = 2 * dom.h
    pairs = []
    for i, frac in enumerate((0.25, 0.5, 0.75)):
        if dom.kind == "radial":
            B = Box((0.0,), (frac * dom.extent[0],), f"B{i}")
        else:
            c = np.asarray(dom.extent) / 2
            B = Box(tuple(c - frac * c), tuple(c + frac * c), f"B{i}")
        pairs.append((B, B.grown(m, f"B{i}'")))
    return tuple(pairs)


def default_probe(limit: Obstacle, family: Sequence[Obstacle] = (), n_levels: int = 9,
                  eps_cap: float = 0.05) -> LevelSetProbe:
    """Levels spanning the limit's finite interior values.

    A limit without finite values (identically -inf) borrows the range of the
    first half of the family instead.
    """
    dom = limit.domain
    I = dom.interior
    vals = limit.values[I][np.isfinite(limit.values[I])]
    if vals.size == 0 and family:
        head = family[: max(1, len(family) // 2)]
        vals = np.concatenate([o.values[I][np.isfinite(o.values[I])] for o in head])
    if vals.size == 0:
        levels, gap = np.array([0.0]), 1.0
    else:
        lo, hi = float(vals.min()), float(vals.max())
        if hi - lo <= 1e-12 * (1 + abs(hi)):
            levels, gap = np.array([lo - 1.0, lo]), 1.0
        else:
            levels = np.linspace(lo, hi, n_levels)
            gap = float(levels[1] - levels[0])
    return LevelSetProbe(tuple(float(t) for t in levels), gap, default_boxes(dom), eps_cap)


# ---------------------------------------------------------------------------
# the checker


@dataclass(eq=False)
class ConvergenceVerdict:
    probe: LevelSetProbe
    members: list
    rows: list = field(default_factory=list)
    liminf_ok: bool = True
    limsup_ok: bool = True
    pointwise_ok: bool = True
    minus_infinity: bool = False

    @property
    def verdict(self) -> str:
        if not self.liminf_ok:
            return "fails-liminf"
        if not self.limsup_ok:
            return "fails-limsup"
        return "converges-to-minus-infinity" if self.minus_infinity else "converges"

    @property
    def passed(self) -> bool:
        return self.verdict in ("converges", "converges-to-minus-infinity")

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "liminf_ok": self.liminf_ok,
            "limsup_ok": self.limsup_ok,
            "pointwise_ok": self.pointwise_ok,
            "members": list(self.members),
            "probe": self.probe.to_dict(),
            "rows": self.rows,
        }

    def trace_rows(self) -> list[tuple]:
        out = []
        for r in self.rows:
            for n, c in zip(self.members, r["cap_t_B"]):
                out.append((n, r["t"], r["box"], c))
            for n, c in zip(self.members, r["cap_s_Bp"]):
                out.append((n, r["s"], r["box"] + "'", c))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "box", "cap"])
            for row in self.trace_rows():
                w.writerow([row[0], repr(row[1]), row[2], repr(row[3])])


def check_levelset_convergence(family: Sequence[Obstacle], limit: Obstacle, probe: LevelSetProbe | None = None,
                               members: Sequence | None = None, cache: CapacityCache | None = None,
                               threads: int | None = None) -> ConvergenceVerdict:
    """Empirical liminf/limsup capacity inequalities over the tail of a family."""
    family = list(family)
    if len(family) < 4:
        raise InsufficientFamily(f"need at least 4 family members, got {len(family)}")
    dom = limit.domain
    for o in family:
        if o.domain is not dom and o.domain.n_nodes != dom.n_nodes:
            raise ValueError("family and limit live on different meshes")
    probe = probe or default_probe(limit, family)
    probe.validate(dom)
    cache = cache or CapacityCache(dom)
    members = list(members) if members is not None else list(range(1, len(family) + 1))
    tail = slice(len(family) // 2, None)

    # collect every node set first so capacities can be computed in parallel
    plan = []
    sets = []
    for t in probe.levels:
        s = t - probe.gap
        for B, Bp in probe.boxes:
            item = {
                "lim_t_B": level_set(limit, t, B),
                "lim_s_Bp": level_set(limit, s, Bp),
                "fam_t_B": [level_set(o, t, B) for o in family],
                "fam_s_Bp": [level_set(o, s, Bp) for o in family],
            }
            plan.append((t, s, B, item))
            sets += [item["lim_t_B"], item["lim_s_Bp"], *item["fam_t_B"], *item["fam_s_Bp"]]
    cache.fill(sets, threads)

    v = ConvergenceVerdict(probe=probe, members=members)
    v.minus_infinity = not np.any(np.isfinite(limit.values[dom.interior]))
    eps = probe.eps_cap
    for t, s, B, item in plan:
        cap_lim_t = cache.get(item["lim_t_B"])
        cap_lim_s = cache.get(item["lim_s_Bp"])
        fam_t = [cache.get(x) for x in item["fam_t_B"]]
        fam_s = [cache.get(x) for x in item["fam_s_Bp"]]
        lo = min(fam_s[tail])
        hi = max(fam_t[tail])
        liminf_ok = cap_lim_t <= lo + eps * max(cap_lim_t, lo)
        limsup_ok = hi <= cap_lim_s + eps * max(hi, cap_lim_s)
        pointwise_ok = all(abs(c - cap_lim_t) <= eps * max(c, cap_lim_t) for c in fam_t[tail])
        v.liminf_ok &= liminf_ok
        v.limsup_ok &= limsup_ok
        v.pointwise_ok &= pointwise_ok
        v.rows.append({
            "t": t, "s": s, "box": B.label,
            "cap_limit_t_B": cap_lim_t, "cap_limit_s_Bp": cap_lim_s,
            "cap_t_B": fam_t, "cap_s_Bp": fam_s,
            "tail_liminf": lo, "tail_limsup": hi,
            "liminf_ok": bool(liminf_ok), "limsup_ok": bool(limsup_ok), "pointwise_ok": bool(pointwise_ok),
        })
    v.liminf_ok, v.limsup_ok, v.pointwise_ok = bool(v.liminf_ok), bool(v.limsup_ok), bool(v.pointwise_ok)
    return v


def map_obstacle(family: Sequence[Obstacle], phi: Callable, samples: int = 257) -> list[Obstacle]:
    """Apply a nondecreasing scalar map nodewise to every member."""
    finite = [o.values[np.isfinite(o.values)] for o in family]
    vals = np.concatenate(finite) if finite else np.zeros(0)
    grid = np.unique(np.concatenate([
        vals,
        np.linspace(vals.min(), vals.max(), samples) if vals.size else np.linspace(-1.0, 1.0, samples),
    ]))
    img = np.asarray(phi(grid), dtype=float)
    if np.any(np.diff(img) < -1e-12 * (1 + np.abs(img[:-1]))):
        raise NotMonotone("map is not nondecreasing on the sampled values")
    out = []
    for o in family:
        with np.errstate(invalid="ignore"):
            w = np.asarray(phi(o.values), dtype=float)
        w = np.broadcast_to(w, o.values.shape).copy()
        w[np.isnan(w)] = -np.inf
        out.append(Obstacle(o.domain, w))
    return out
