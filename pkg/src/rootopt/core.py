"""Domain geometry, discrete measures, the growth law, and run configuration.

Value types shared by the irrigation planner, the elliptic solvers, and the
measure-ascent optimizer.  Everything here is immutable after construction,
so instances can be shared freely between routines and threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

__all__ = [
    "ValidationError",
    "SolverError",
    "Domain",
    "Grid",
    "Atom",
    "DiscreteMeasure",
    "GrowthFunction",
    "RunConfig",
    "total_mass",
    "mass_outside",
    "mass_bound_check",
]


class ValidationError(ValueError):
    """Input data violates a structural invariant."""


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned open rectangle with the transport source strictly outside.

    The source (the point all irrigation trees are rooted at) sits at the
    origin; the rectangle is where the absorbing measure lives and where the
    elliptic problems are posed.
    """

    rect_min: tuple = (0.5, -0.5)
    rect_max: tuple = (1.5, 0.5)
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("rect_min", "rect_max", "origin"):
            v = getattr(self, name)
            if len(v) != 2 or not all(math.isfinite(float(t)) for t in v):
                raise ValidationError(f"{name} must be a finite 2-vector")
            object.__setattr__(self, name, (float(v[0]), float(v[1])))
        if not (self.rect_min[0] < self.rect_max[0] and self.rect_min[1] < self.rect_max[1]):
            raise ValidationError("rect_min must be strictly below rect_max componentwise")
        if self.source_distance() <= 0.0:
            raise ValidationError("origin must lie strictly outside the closed rectangle")

    def source_distance(self) -> float:
        """Distance from the origin to the closed rectangle (r0 > 0)."""
        ox, oy = self.origin
        dx = max(self.rect_min[0] - ox, 0.0, ox - self.rect_max[0])
        dy = max(self.rect_min[1] - oy, 0.0, oy - self.rect_max[1])
        return math.hypot(dx, dy)

    @property
    def width(self) -> float:
        return self.rect_max[0] - self.rect_min[0]

    @property
    def height(self) -> float:
        return self.rect_max[1] - self.rect_min[1]

    def contains(self, x: float, y: float, closed: bool = True) -> bool:
        if closed:
            return (self.rect_min[0] <= x <= self.rect_max[0]
                    and self.rect_min[1] <= y <= self.rect_max[1])
        return (self.rect_min[0] < x < self.rect_max[0]
                and self.rect_min[1] < y < self.rect_max[1])


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the domain rectangle.

    Nodes are indexed row-major: node k = iy * nx + ix, with ix varying
    fastest.  Axis coordinates come from a single cached linspace so that
    index -> position -> index round-trips are exact.
    """

    domain: Domain
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValidationError("grid needs nx >= 3 and ny >= 3")
        hx = self.domain.width / (self.nx - 1)
        hy = self.domain.height / (self.ny - 1)
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ValidationError(
                f"grid spacing must be uniform in both directions, got hx={hx!r} hy={hy!r}")

    @property
    def h(self) -> float:
        return self.domain.width / (self.nx - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def xs(self) -> np.ndarray:
        v = np.linspace(self.domain.rect_min[0], self.domain.rect_max[0], self.nx)
        v.setflags(write=False)
        return v

    @cached_property
    def ys(self) -> np.ndarray:
        v = np.linspace(self.domain.rect_min[1], self.domain.rect_max[1], self.ny)
        v.setflags(write=False)
        return v

    def node_position(self, ix: int, iy: int) -> tuple:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValidationError(f"node ({ix}, {iy}) outside grid {self.nx}x{self.ny}")
        return (float(self.xs[ix]), float(self.ys[iy]))

    def node_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValidationError(f"node ({ix}, {iy}) outside grid {self.nx}x{self.ny}")
        return iy * self.nx + ix

    def nearest_node(self, x: float, y: float) -> tuple:
        """Indices (ix, iy) of the node nearest to (x, y), clamped to the grid."""
        ix = int(round((x - self.domain.rect_min[0]) / self.h))
        iy = int(round((y - self.domain.rect_min[1]) / self.h))
        ix = min(max(ix, 0), self.nx - 1)
        iy = min(max(iy, 0), self.ny - 1)
        return ix, iy

    def snap(self, x: float, y: float) -> tuple:
        """Exact coordinates of the grid node nearest to (x, y)."""
        ix, iy = self.nearest_node(x, y)
        return self.node_position(ix, iy)

    def index_of(self, x: float, y: float) -> int:
        """Flat index of the node at exactly (x, y); error if (x, y) is off-node."""
        ix, iy = self.nearest_node(x, y)
        px, py = self.node_position(ix, iy)
        if px != x or py != y:
            raise ValidationError(f"position ({x!r}, {y!r}) is not a grid node")
        return self.node_index(ix, iy)

    def node_coordinates(self) -> np.ndarray:
        """All node positions as an (n_nodes, 2) array in node order."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class Atom:
    """Point mass of the absorbing measure."""

    position: tuple
    mass: float

    def __post_init__(self):
        p = self.position
        if len(p) != 2 or not all(math.isfinite(float(t)) for t in p):
            raise ValidationError("atom position must be a finite 2-vector")
        object.__setattr__(self, "position", (float(p[0]), float(p[1])))
        m = float(self.mass)
        if not math.isfinite(m) or m < 0.0:
            raise ValidationError(f"atom mass must be finite and >= 0, got {self.mass!r}")
        object.__setattr__(self, "mass", m)

    @classmethod
    def snapped(cls, grid: Grid, x: float, y: float, mass: float) -> "Atom":
        return cls(grid.snap(x, y), mass)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite nonnegative atomic measure with pairwise distinct atom positions."""

    atoms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        seen = {}
        for i, a in enumerate(self.atoms):
            if not isinstance(a, Atom):
                raise ValidationError("atoms must be Atom instances")
            if a.position in seen:
                raise ValidationError(
                    f"atoms {seen[a.position]} and {i} share position {a.position}")
            seen[a.position] = i

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def total_mass(self) -> float:
        return float(sum(a.mass for a in self.atoms))

    def positions(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, 2))
        return np.array([a.position for a in self.atoms], dtype=float)

    def masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms], dtype=float)

    def with_masses(self, masses) -> "DiscreteMeasure":
        masses = np.asarray(masses, dtype=float)
        if masses.shape != (len(self.atoms),):
            raise ValidationError("mass vector length must match atom count")
        return DiscreteMeasure(tuple(Atom(a.position, float(m))
                                     for a, m in zip(self.atoms, masses)))

    def without_zero_mass(self) -> tuple:
        """(filtered measure, original indices kept)."""
        kept = [i for i, a in enumerate(self.atoms) if a.mass > 0.0]
        return DiscreteMeasure(tuple(self.atoms[i] for i in kept)), kept

    @classmethod
    def from_arrays(cls, positions, masses) -> "DiscreteMeasure":
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        masses = np.asarray(masses, dtype=float).ravel()
        if len(positions) != len(masses):
            raise ValidationError("positions and masses must have equal length")
        return cls(tuple(Atom((float(p[0]), float(p[1])), float(m))
                         for p, m in zip(positions, masses)))


def total_mass(mu: DiscreteMeasure) -> float:
    """Total mass of the measure (0 for the empty measure)."""
    return mu.total_mass


def mass_outside(mu: DiscreteMeasure, r: float, origin=(0.0, 0.0)) -> float:
    """Mass carried by atoms at distance >= r from the origin.

    Nonincreasing and right-continuous in r; equals the total mass at r = 0.
    """
    if r < 0.0:
        raise ValidationError("radius must be >= 0")
    ox, oy = origin
    return float(sum(a.mass for a in mu.atoms
                     if math.hypot(a.position[0] - ox, a.position[1] - oy) >= r))


def mass_bound_check(mu: DiscreteMeasure, irrigation_cost: float, domain: Domain,
                     alpha: float) -> bool:
    """Whether total mass respects the transport budget (cost / r0) ** (1 / alpha).

    A measure reachable from the source at the given cost cannot weigh more
    than this bound, since every unit of mass travels at least r0.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha!r}")
    if irrigation_cost < 0.0 or not math.isfinite(irrigation_cost):
        raise ValidationError(f"irrigation cost must be finite and >= 0, got {irrigation_cost!r}")
    r0 = domain.source_distance()
    if r0 <= 0.0:
        raise ValidationError("source distance r0 must be positive")
    bound = (irrigation_cost / r0) ** (1.0 / alpha)
    return mu.total_mass <= bound + 1e-9 * max(1.0, abs(bound))


@dataclass(frozen=True)
class GrowthFunction:
    """Logistic growth law f(u) = rate * u * (1 - u / u_max).

    f vanishes at 0 and at u_max and peaks at rate * u_max / 4 in between.
    """

    u_max: float = 1.0
    rate: float = 4.0

    def __post_init__(self):
        if not (math.isfinite(self.u_max) and self.u_max > 0.0):
            raise ValidationError(f"u_max must be positive, got {self.u_max!r}")
        if not (math.isfinite(self.rate) and self.rate > 0.0):
            raise ValidationError(f"rate must be positive, got {self.rate!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.rate * u * (1.0 - u / self.u_max)
        return out if out.ndim else float(out)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        out = self.rate * (1.0 - 2.0 * u / self.u_max)
        return out if out.ndim else float(out)

    @property
    def peak(self) -> float:
        """Maximum of f on [0, u_max], attained at u_max / 2."""
        return self.rate * self.u_max / 4.0

    @property
    def monotone_shift(self) -> float:
        """Smallest sigma with f(u) + sigma * u nondecreasing on [0, u_max]."""
        return self.rate


@dataclass(frozen=True)
class RunConfig:
    """Knobs for a full planning + solving + ascent run.

    tol_residual and path_tol are relative to u_max.  spawn_mass = 0 means
    "auto": trial atoms get 5 percent of the current mean atom mass.
    """

    grid: Grid = field(default_factory=lambda: Grid(Domain(), 33, 33))
    alpha: float = 0.75
    c: float = 1.0
    growth: GrowthFunction = field(default_factory=GrowthFunction)
    tol_nonlinear: float = 1e-8
    tol_linear: float = 1e-10
    tol_residual: float = 1e-6
    max_outer_iters: int = 200
    max_plan_moves: int = 200
    step_size: float = 1.0
    seed: int = 0
    spawn: bool = False
    spawn_mass: float = 0.0
    path_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha!r}")
        if not self.c > 0.0:
            raise ValidationError(f"c must be positive, got {self.c!r}")
        for name in ("tol_nonlinear", "tol_linear", "tol_residual", "step_size", "path_tol"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"{name} must be positive")
        for name in ("max_outer_iters", "max_plan_moves"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.spawn_mass < 0.0:
            raise ValidationError("spawn_mass must be >= 0")

    @property
    def domain(self) -> Domain:
        return self.grid.domain

    def replace(self, **kw) -> "RunConfig":
        return replace(self, **kw)
