"""Discrete obstacle problems with measure data: solvers, capacities and stability experiments."""
from . import oracles  # noqa: F401  registers the "orsina" density
from .capacity import capacity, check_levelset_convergence, level_set, map_obstacle
from .errors import OplabError
from .mesh import (
    Atom,
    DiscreteMeasure,
    NormSpec,
    Obstacle,
    assemble_operator,
    build_grid2d,
    build_interval,
    build_radial_mesh,
    discretize_measure,
    norm,
)
from .vi import SolverConfig, solve_linear, solve_vi

__version__ = "0.1.0"

__all__ = [
    "Atom", "DiscreteMeasure", "NormSpec", "Obstacle", "OplabError", "SolverConfig",
    "assemble_operator", "build_grid2d", "build_interval", "build_radial_mesh", "capacity",
    "check_levelset_convergence", "discretize_measure", "level_set", "map_obstacle", "norm",
    "solve_linear", "solve_vi",
]
