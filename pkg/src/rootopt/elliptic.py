"""Finite-difference solvers for the harvest equation and its adjoint.

Discretization
--------------
Five-point Laplacian on the uniform grid with homogeneous Neumann boundary
conditions imposed through mirrored ghost nodes, so the boundary rows read
(2 u_inner - 2 u_0) / h^2 and every row of the Laplacian sums to zero.  A
point measure lumps onto its grid node with density mass / (tau h^2), where
tau h^2 is the area of the trapezoid cell covered by the node; the smaller
cells along the walls then absorb the full atom mass.  With this pairing the
adjoint of the scheme is the scheme itself, so the sensitivity field from
solve_adjoint differentiates the discrete crop exactly.

Multiplying rows by the trapezoid weights (1, 1/2 on edges, 1/4 at corners)
symmetrizes the reflected stencil, so linear solves run on a symmetric
matrix via conjugate gradients with diagonal preconditioning.  A sparse
direct solve is the fallback when the iteration cannot reach the requested
nodewise residual (the adjoint coefficient can be indefinite where the
growth slope is positive).

State equation
--------------
    lap(u) + f(u) - u * mu = 0,   0 <= u <= u_max,  Neumann walls.

Solved by a monotone fixed-point sweep started at the constant supersolution
u = u_max.  Each sweep solves the shifted linear problem

    (-lap + mu/h^2 + sigma) u_next = f(u_k) + sigma u_k,

with sigma chosen so that f(u) + sigma u is nondecreasing on [0, u_max].
The shift makes the sweep order-preserving, the iterates decrease
monotonically, and the limit is the maximal solution (mirroring the
sub/supersolution construction).  Without the shift the sweep started at
u_max would jump straight to the trivial zero branch, since f(u_max) = 0.
A damped Newton phase takes over if the sweeps stall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import DiscreteMeasure, Grid, GrowthFunction, SolverError, ValidationError

__all__ = [
    "ScalarField",
    "NodalMeasure",
    "laplacian_matrix",
    "quadrature_weights",
    "lump_measure",
    "solve_linear",
    "solve_state",
    "harvest",
    "growth_bound_lambda",
    "solve_adjoint",
    "phi_field",
    "perturbation_derivative",
    "bilinear_interpolate",
]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid, stored flat in node order (iy * nx + ix)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.shape != (self.grid.n_nodes,):
            raise ValidationError(
                f"field needs {self.grid.n_nodes} values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class NodalMeasure:
    """Atom masses lumped onto grid nodes (weights, not densities)."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape != (self.grid.n_nodes,):
            raise ValidationError("weight vector length must match the grid")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def density(self) -> np.ndarray:
        # mass per covered cell area; boundary cells are half size, corners quarter
        return self.weights / (quadrature_weights(self.grid) * self.grid.h ** 2)


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    d = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    d[0, 1] = 2.0
    d[n - 1, n - 2] = 2.0
    return (d.tocsr() / h ** 2).tocsr()


@lru_cache(maxsize=16)
def _operators(grid: Grid):
    dxx = _second_difference(grid.nx, grid.h)
    dyy = _second_difference(grid.ny, grid.h)
    lap = (sp.kron(sp.identity(grid.ny, format="csr"), dxx)
           + sp.kron(dyy, sp.identity(grid.nx, format="csr"))).tocsr()
    tx = np.ones(grid.nx)
    tx[0] = tx[-1] = 0.5
    ty = np.ones(grid.ny)
    ty[0] = ty[-1] = 0.5
    tau = np.kron(ty, tx)
    tau.setflags(write=False)
    return lap, tau


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Reflected five-point Laplacian; every row sums to zero."""
    return _operators(grid)[0]


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Trapezoid node weights (relative cell areas) that symmetrize the stencil."""
    return _operators(grid)[1]


def lump_measure(mu: DiscreteMeasure, grid: Grid) -> NodalMeasure:
    """Place each atom's mass on its grid node; atoms must sit exactly on nodes."""
    w = np.zeros(grid.n_nodes)
    for i, a in enumerate(mu.atoms):
        try:
            idx = grid.index_of(*a.position)
        except ValidationError as e:
            raise ValidationError(f"atom {i} is not on a grid node: {e}") from None
        w[idx] += a.mass
    return NodalMeasure(grid, w)


def _atom_node_indices(mu: DiscreteMeasure, grid: Grid) -> np.ndarray:
    return np.array([grid.index_of(*a.position) for a in mu.atoms], dtype=np.int64)


def solve_linear(grid: Grid, absorption, rhs, tol_linear: float = 1e-10,
                 x0=None) -> np.ndarray:
    """Solve (-lap + diag(absorption)) u = rhs to a nodewise residual.

    The residual |(-lap + diag(a)) u - rhs| must drop below
    tol_linear * max(1, |a u|, |rhs|) at every node.  Conjugate gradients on
    the symmetrized system run first; a sparse direct solve is the fallback.
    """
    absorption = np.asarray(absorption, dtype=float).ravel()
    rhs = np.asarray(rhs, dtype=float).ravel()
    n = grid.n_nodes
    if absorption.shape != (n,) or rhs.shape != (n,):
        raise ValidationError("absorption and rhs must be nodal vectors")
    lap, tau = _operators(grid)
    a_unw = (-lap + sp.diags(absorption)).tocsr()

    def residual_ok(x):
        res = a_unw @ x - rhs
        scale = np.maximum(1.0, np.maximum(np.abs(absorption * x), np.abs(rhs)))
        return bool(np.all(np.abs(res) <= tol_linear * scale)), res

    if not np.any(rhs):
        x = np.zeros(n)
        ok, _ = residual_ok(x)
        if ok:
            return x

    a_sym = (sp.diags(tau) @ a_unw).tocsr()
    b = tau * rhs
    diag = a_sym.diagonal()
    x = None
    if np.all(diag > 0.0):
        precond = sp.diags(1.0 / diag)
        x0v = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel()
        maxiter = min(20000, 100 + 8 * n)
        x, _ = spla.cg(a_sym, b, x0=x0v, rtol=1e-15, atol=0.1 * tol_linear,
                       M=precond, maxiter=maxiter)
        ok, _ = residual_ok(x)
        if ok:
            return x
    try:
        x = spla.spsolve(a_sym.tocsc(), b)
    except Exception as e:  # singular or structurally broken systems
        raise SolverError(f"sparse solve failed: {e}") from None
    ok, res = residual_ok(x)
    if not ok:
        raise SolverError(
            f"linear solve missed tolerance {tol_linear:g}; worst residual "
            f"{float(np.max(np.abs(res))):.3e}")
    return x


def solve_state(grid: Grid, mu: DiscreteMeasure, f: GrowthFunction,
                tol: float = 1e-8, tol_linear: float = 1e-10,
                max_sweeps: int = 400) -> ScalarField:
    """Maximal solution of lap(u) + f(u) - u mu = 0 with Neumann walls.

    Returns the limit of the monotone sweep from u = u_max.  Each atom is
    absorbed over its node's cell, so the nodal density is w / (tau h^2) and
    the half cells along the walls feel their full mass.  The discrete
    residual lap_h(u) + f(u) - a u is driven below
    tol * max(1, |f(u)|, |a u|) at every node; failure to converge raises
    SolverError carrying the last residual.
    """
    w = lump_measure(mu, grid).weights
    u_max = f.u_max
    if not np.any(w):
        return ScalarField(grid, np.full(grid.n_nodes, u_max))
    lap, tau = _operators(grid)
    a = w / (tau * grid.h ** 2)
    sigma = f.monotone_shift
    a_unw = (-lap + sp.diags(a + sigma)).tocsr()
    a_sym = (sp.diags(tau) @ a_unw).tocsr()
    precond = sp.diags(1.0 / a_sym.diagonal())
    maxiter = min(20000, 100 + 8 * grid.n_nodes)

    def residual(u):
        res = lap @ u + f(u) - a * u
        scale = np.maximum(1.0, np.maximum(np.abs(a * u), np.abs(f(u))))
        return res, float(np.max(np.abs(res) / scale))

    u = np.full(grid.n_nodes, u_max)
    rmax_prev = math.inf
    stalled = False
    rmax = math.inf
    for _ in range(max_sweeps):
        b = tau * (f(u) + sigma * u)
        u_new, _ = spla.cg(a_sym, b, x0=u, rtol=1e-15, atol=0.1 * tol_linear,
                           M=precond, maxiter=maxiter)
        u = np.clip(u_new, 0.0, u_max)
        _, rmax = residual(u)
        if rmax <= tol:
            return ScalarField(grid, u)
        if rmax > 0.99 * rmax_prev:
            stalled = True
            break
        rmax_prev = rmax

    if not stalled:
        raise SolverError(f"state solve used all {max_sweeps} sweeps, residual {rmax:.3e}")

    # damped Newton finishes what the sweeps started
    for _ in range(80):
        res, rmax = residual(u)
        if rmax <= tol:
            return ScalarField(grid, u)
        jac = (lap + sp.diags(f.derivative(u) - a)).tocsc()
        try:
            delta = spla.spsolve(jac, -res)
        except Exception as e:
            raise SolverError(f"newton step failed: {e}") from None
        step = 1.0
        accepted = False
        while step >= 1.0 / 4096.0:
            u_try = np.clip(u + step * delta, 0.0, u_max)
            _, r_try = residual(u_try)
            if r_try < rmax:
                u = u_try
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise SolverError(f"state solve stalled, residual {rmax:.3e}")
    raise SolverError(f"state solve did not converge, residual {rmax:.3e}")


def harvest(u: ScalarField, mu: DiscreteMeasure) -> float:
    """Total crop sum(mass_a * u(node_a)); zero for the empty measure."""
    if not mu.atoms:
        return 0.0
    idx = _atom_node_indices(mu, u.grid)
    return float(np.dot(mu.masses(), u.values[idx]))


def growth_bound_lambda(f: GrowthFunction, delta0: float, n_samples: int = 4001) -> float:
    """Smallest lam with f'(u) (lam u + 1) < lam f(u) on [delta0, u_max].

    Found by bisection; the left side minus the right is affine in lam with
    strictly negative slope for u > 0, so the condition is monotone in lam.
    """
    lo_u = min(max(delta0, 1e-12 * f.u_max), f.u_max)
    us = np.linspace(lo_u, f.u_max, n_samples)
    fp = f.derivative(us)
    fv = f(us)

    def gap(lam):
        return float(np.max(fp * (lam * us + 1.0) - lam * fv))

    hi = 1.0
    for _ in range(200):
        if gap(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise SolverError("no admissible lambda found for the adjoint bound")
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def solve_adjoint(grid: Grid, mu: DiscreteMeasure, u_star: ScalarField,
                  f: GrowthFunction, tol: float = 1e-10) -> ScalarField:
    """Solve lap(psi) + f'(u*) psi - psi mu = -mu for the harvest sensitivity.

    Uses the same cell-area lumping as the state solve, which makes
    (1 - psi) u* the exact derivative of the discrete crop with respect to
    each nodal mass.  Post-checks: psi >= -1e-9 and
    psi <= lam * u_max + 1 + 1e-9, with lam the bisection bound evaluated at
    delta0 = min(u*).
    """
    if u_star.grid != grid:
        raise ValidationError("state field lives on a different grid")
    w = lump_measure(mu, grid).weights
    a = w / (quadrature_weights(grid) * grid.h ** 2)
    coeff = a - f.derivative(u_star.values)
    psi = solve_linear(grid, coeff, a, tol_linear=tol)
    if np.min(psi) < -1e-9:
        raise SolverError(f"adjoint went negative: min psi = {float(np.min(psi)):.3e}")
    lam = growth_bound_lambda(f, delta0=u_star.min())
    cap = lam * f.u_max + 1.0
    if np.max(psi) > cap + 1e-9:
        raise SolverError(
            f"adjoint exceeded its bound {cap:.6g}: max psi = {float(np.max(psi)):.6g}")
    return ScalarField(grid, psi)


def phi_field(u_star: ScalarField, psi: ScalarField) -> ScalarField:
    """Harvest-sensitivity field (1 - psi) u*."""
    if u_star.grid != psi.grid:
        raise ValidationError("fields live on different grids")
    return ScalarField(u_star.grid, (1.0 - psi.values) * u_star.values)


def perturbation_derivative(u_star: ScalarField, psi: ScalarField, g,
                            mu: DiscreteMeasure) -> float:
    """Derivative of the harvest under mass reweighting (1 + eps g) mu at eps = 0,
    which is sum(mass_a * g_a * phi(node_a))."""
    g = np.asarray(g, dtype=float).ravel()
    if g.shape != (len(mu.atoms),):
        raise ValidationError("g must assign one value per atom")
    if np.any(np.abs(g) > 1.0 + 1e-12):
        raise ValidationError("|g| <= 1 is required")
    if not mu.atoms:
        return 0.0
    phi = phi_field(u_star, psi)
    idx = _atom_node_indices(mu, u_star.grid)
    return float(np.sum(mu.masses() * g * phi.values[idx]))


def bilinear_interpolate(field: ScalarField, points) -> np.ndarray:
    """Bilinear interpolation of a nodal field at points inside the rectangle."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    g = field.grid
    d = g.domain
    pad = 1e-12 * max(1.0, g.h)
    if (np.any(pts[:, 0] < d.rect_min[0] - pad) or np.any(pts[:, 0] > d.rect_max[0] + pad)
            or np.any(pts[:, 1] < d.rect_min[1] - pad) or np.any(pts[:, 1] > d.rect_max[1] + pad)):
        raise ValidationError("interpolation points must lie inside the domain rectangle")
    fx = np.clip((pts[:, 0] - d.rect_min[0]) / g.h, 0.0, g.nx - 1.0)
    fy = np.clip((pts[:, 1] - d.rect_min[1]) / g.h, 0.0, g.ny - 1.0)
    ix = np.minimum(fx.astype(np.int64), g.nx - 2)
    iy = np.minimum(fy.astype(np.int64), g.ny - 2)
    tx = fx - ix
    ty = fy - iy
    v = field.as_matrix()
    return ((1 - tx) * (1 - ty) * v[iy, ix] + tx * (1 - ty) * v[iy, ix + 1]
            + (1 - tx) * ty * v[iy + 1, ix] + tx * ty * v[iy + 1, ix + 1])
