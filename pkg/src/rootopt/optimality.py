"""Payoff assembly, first-order optimality diagnostics, and mass ascent.

The objective is

    payoff(mu) = harvest(u*, mu) - c * plan_cost(mu),

with u* the maximal state solution and the plan cost taken over an optimized
irrigation tree.  At a maximizer the per-atom residual

    residual_a = phi(x_a) - c * alpha * Z(x_a),      phi = (1 - psi) u*,

vanishes: the marginal harvest of routing extra mass to an atom exactly pays
its marginal transport cost.  Away from the atoms the same quantity can only
favor the transport side, which is what the path inequality check samples
along tree edges.

`ascend_measure` runs projected gradient ascent on the atom masses with
backtracking on the true payoff, optional spawning of trial atoms at the most
promising grid node, and pruning of atoms whose mass underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (Atom, DiscreteMeasure, Grid, RunConfig, SolverError,
                   ValidationError)
from .elliptic import (ScalarField, bilinear_interpolate, harvest, phi_field,
                       solve_adjoint, solve_state)
from .irrigation import (IrrigationTree, LandscapeValues, irrigation_cost,
                         landscape, optimize_plan)

__all__ = [
    "AtomRecord",
    "OptimalityReport",
    "PathCheckReport",
    "TraceStep",
    "OptimizationTrace",
    "SupportDensityReport",
    "payoff",
    "optimality_residual",
    "path_inequality_check",
    "ascend_measure",
    "support_density_report",
]


@dataclass(frozen=True)
class AtomRecord:
    atom: int
    position: tuple
    mass: float
    phi: float
    z: float
    residual: float


@dataclass(frozen=True)
class OptimalityReport:
    """Per-atom first-order data plus the payoff split it was computed from."""

    records: tuple
    sup_residual: float
    harvest: float
    irrigation_cost: float
    c: float
    alpha: float
    iteration: int = -1

    @property
    def payoff(self) -> float:
        return self.harvest - self.c * self.irrigation_cost


def payoff(u: ScalarField | None, mu: DiscreteMeasure, tree: IrrigationTree | None,
           c: float, alpha: float) -> float:
    """harvest - c * plan cost; zero for a measure without positive mass."""
    if not c > 0.0:
        raise ValidationError(f"c must be positive, got {c!r}")
    if not any(a.mass > 0.0 for a in mu.atoms):
        return 0.0
    if u is None or tree is None:
        raise ValidationError("a state field and a plan are required when mass is present")
    return harvest(u, mu) - c * irrigation_cost(tree, mu, alpha)


def optimality_residual(u_star: ScalarField, psi: ScalarField, z: LandscapeValues,
                        mu: DiscreteMeasure, c: float, alpha: float,
                        iteration: int = -1) -> OptimalityReport:
    """Residuals phi - c * alpha * Z at every atom with positive mass."""
    if not c > 0.0:
        raise ValidationError(f"c must be positive, got {c!r}")
    phi = phi_field(u_star, psi)
    grid = u_star.grid
    records = []
    for i, a in enumerate(mu.atoms):
        if a.mass <= 0.0:
            continue
        phi_a = float(phi.values[grid.index_of(*a.position)])
        z_a = z.at_atom(i)
        records.append(AtomRecord(i, a.position, a.mass, phi_a, z_a,
                                  phi_a - c * alpha * z_a))
    sup = max((abs(r.residual) for r in records), default=0.0)
    return OptimalityReport(
        records=tuple(records),
        sup_residual=float(sup),
        harvest=harvest(u_star, mu),
        irrigation_cost=irrigation_cost(z.tree, mu, alpha),
        c=float(c),
        alpha=float(alpha),
        iteration=iteration,
    )


@dataclass(frozen=True)
class PathCheckReport:
    """Sampled check of phi <= c * alpha * Z along the plan, inside the domain."""

    n_samples: int
    n_violations: int
    max_excess: float
    tol: float

    @property
    def fraction_ok(self) -> float:
        if self.n_samples == 0:
            return 1.0
        return 1.0 - self.n_violations / self.n_samples

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def path_inequality_check(u_star: ScalarField, psi: ScalarField, tree: IrrigationTree,
                          mu: DiscreteMeasure, c: float, alpha: float,
                          tol: float = 1e-3, spacing: float | None = None) -> PathCheckReport:
    """Sample every edge at the given spacing (default: one grid cell) and
    count points where bilinear phi exceeds c * alpha * (linear Z) by more
    than tol.  Samples outside the open domain rectangle are skipped, since
    the fields only live on the rectangle."""
    if not tol > 0.0:
        raise ValidationError("tol must be positive")
    grid = u_star.grid
    spacing = grid.h if spacing is None else float(spacing)
    if not spacing > 0.0:
        raise ValidationError("spacing must be positive")
    z = landscape(tree, mu, alpha)
    phi = phi_field(u_star, psi)
    d = grid.domain
    pts_all = []
    zs_all = []
    lengths = tree.edge_lengths()
    for p, q in tree.edges():
        ln = lengths[q]
        k = max(1, int(math.ceil(ln / spacing)))
        t = np.linspace(0.0, 1.0, k + 1)
        pts = tree.positions[p] + t[:, None] * (tree.positions[q] - tree.positions[p])
        zs = z.values[p] + t * (z.values[q] - z.values[p])
        inside = ((pts[:, 0] > d.rect_min[0]) & (pts[:, 0] < d.rect_max[0])
                  & (pts[:, 1] > d.rect_min[1]) & (pts[:, 1] < d.rect_max[1]))
        pts_all.append(pts[inside])
        zs_all.append(zs[inside])
    if not pts_all or sum(len(p) for p in pts_all) == 0:
        return PathCheckReport(0, 0, 0.0, float(tol))
    pts = np.vstack(pts_all)
    zs = np.concatenate(zs_all)
    phi_hat = bilinear_interpolate(phi, pts)
    excess = phi_hat - c * alpha * zs
    n_bad = int(np.sum(excess > tol))
    return PathCheckReport(len(pts), n_bad, float(np.max(excess)), float(tol))


# ---------------------------------------------------------------------------
# mass ascent


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    measure: DiscreteMeasure
    payoff: float
    sup_residual: float
    accepted: bool
    spawned: bool
    eta: float


@dataclass(frozen=True, eq=False)
class OptimizationTrace:
    """Iteration history plus the final evaluation artifacts."""

    steps: tuple
    converged: bool
    measure: DiscreteMeasure
    tree: IrrigationTree | None
    state: ScalarField | None
    adjoint: ScalarField | None
    report: OptimalityReport | None

    @property
    def final_payoff(self) -> float:
        return self.steps[-1].payoff

    @property
    def accepted_payoffs(self):
        return [s.payoff for s in self.steps if s.accepted]


@dataclass(frozen=True, eq=False)
class _Bundle:
    mu: DiscreteMeasure
    tree: IrrigationTree | None
    u: ScalarField | None
    psi: ScalarField | None
    z: LandscapeValues | None
    report: OptimalityReport | None
    payoff: float
    sup_residual: float


def _evaluate(config: RunConfig, mu: DiscreteMeasure, iteration: int) -> _Bundle:
    if not any(a.mass > 0.0 for a in mu.atoms):
        return _Bundle(DiscreteMeasure(), None, None, None, None, None, 0.0, 0.0)
    tree = optimize_plan(mu, config.alpha, budget=config.max_plan_moves, seed=config.seed)
    u = solve_state(config.grid, mu, config.growth,
                    tol=config.tol_nonlinear, tol_linear=config.tol_linear)
    psi = solve_adjoint(config.grid, mu, u, config.growth, tol=config.tol_linear)
    z = landscape(tree, mu, config.alpha)
    report = optimality_residual(u, psi, z, mu, config.c, config.alpha, iteration)
    return _Bundle(mu, tree, u, psi, z, report, report.payoff, report.sup_residual)


def _spawn_candidate(config: RunConfig, bundle: _Bundle) -> DiscreteMeasure | None:
    """Trial measure with one extra atom at the most promising free node.

    A node's score is phi minus c alpha Z_ext, where Z_ext continues the
    landscape from the nearest point of the plan (projections onto edge
    interiors included) along a straight spur carrying the trial mass.  A
    node sitting on an edge therefore scores the plain path excess
    phi - c alpha Z, the same quantity the path inequality samples.
    """
    mu = bundle.mu
    grid = config.grid
    masses = mu.masses()
    trial_mass = config.spawn_mass if config.spawn_mass > 0.0 else 0.05 * float(masses.mean())
    if trial_mass <= 0.0:
        return None
    coords = grid.node_coordinates()
    phi = phi_field(bundle.u, bundle.psi).values
    tree = bundle.tree
    z_vals = bundle.z.values
    spur = trial_mass ** (config.alpha - 1.0)
    z_ext = np.full(len(coords), np.inf)
    for p, q in tree.edges():
        a = tree.positions[p]
        ab = tree.positions[q] - a
        denom = float(ab @ ab)
        t = np.clip(((coords - a) @ ab) / denom, 0.0, 1.0)
        gap = coords - (a + t[:, None] * ab)
        dist = np.sqrt((gap * gap).sum(axis=1))
        z_line = z_vals[p] + t * (z_vals[q] - z_vals[p])
        np.minimum(z_ext, z_line + spur * dist, out=z_ext)
    score = phi - config.c * config.alpha * z_ext
    taken = np.array([grid.index_of(*a.position) for a in mu.atoms], dtype=np.int64)
    score[taken] = -np.inf
    best = int(np.argmax(score))
    if not np.isfinite(score[best]):
        return None
    x, y = coords[best]
    return DiscreteMeasure(mu.atoms + (Atom((float(x), float(y)), trial_mass),))


def ascend_measure(config: RunConfig, mu0: DiscreteMeasure) -> OptimizationTrace:
    """Projected gradient ascent on atom masses.

    Each outer iteration replans the tree, re-solves the state and adjoint
    problems, then updates

        mass_a <- max(0, mass_a * (1 + eta * residual_a)),

    halving eta (at most 20 times) until the payoff of the updated measure is
    no worse than the current one.  Atoms below 1e-12 of the total mass are
    pruned.  With spawning enabled, a trial atom is placed at the grid node
    with the best estimated marginal payoff and kept only if the payoff
    improves.  The loop stops when the sup residual drops below
    tol_residual * u_max and no spawn helps, when no representable step makes
    progress, or when the iteration budget runs out.  Accepted steps never
    decrease the payoff.
    """
    mu, _ = mu0.without_zero_mass()
    if not mu.atoms:
        raise ValidationError("initial measure needs positive mass somewhere")
    tol_eff = config.tol_residual * config.growth.u_max
    prune_rel = 1e-12

    cur = _evaluate(config, mu, iteration=0)
    steps = [TraceStep(0, mu, cur.payoff, cur.sup_residual, True, False, 0.0)]
    converged = False

    for it in range(1, config.max_outer_iters + 1):
        progressed = False
        accepted = False
        spawned = False
        eta_used = 0.0

        if cur.sup_residual >= tol_eff and cur.mu.atoms:
            residuals = np.array([r.residual for r in cur.report.records])
            masses = cur.mu.masses()
            eta = config.step_size
            for _ in range(21):
                cand_m = np.maximum(0.0, masses * (1.0 + eta * residuals))
                total = float(cand_m.sum())
                cand_m[cand_m < prune_rel * max(total, 1e-300)] = 0.0
                cand_mu, _ = cur.mu.with_masses(cand_m).without_zero_mass()
                try:
                    cand = _evaluate(config, cand_mu, iteration=it)
                except SolverError:
                    eta *= 0.5
                    continue
                if cand.payoff >= cur.payoff:
                    accepted = True
                    eta_used = eta
                    changed = (len(cand.mu.atoms) != len(cur.mu.atoms)
                               or not np.array_equal(cand.mu.masses(), cur.mu.masses()))
                    if changed:
                        progressed = True
                    cur = cand
                    break
                eta *= 0.5

        spawn_helped = False
        if config.spawn and cur.mu.atoms:
            cand_mu = _spawn_candidate(config, cur)
            if cand_mu is not None:
                try:
                    cand = _evaluate(config, cand_mu, iteration=it)
                    if cand.payoff > cur.payoff:
                        cur = cand
                        spawn_helped = True
                        spawned = True
                        progressed = True
                except SolverError:
                    pass

        steps.append(TraceStep(it, cur.mu, cur.payoff, cur.sup_residual,
                               accepted or spawned, spawned, eta_used))

        if not cur.mu.atoms:
            converged = True
            break
        if cur.sup_residual < tol_eff and not spawn_helped:
            converged = True
            break
        if not progressed and cur.sup_residual >= tol_eff:
            break

    return OptimizationTrace(tuple(steps), converged, cur.mu, cur.tree,
                             cur.u, cur.psi, cur.report)


@dataclass(frozen=True)
class SupportDensityReport:
    """Occupancy of square cells by the support, per cell size."""

    rows: tuple  # (scale, occupied, total, fraction)

    def as_dicts(self):
        return [
            {"scale": s, "occupied": occ, "total": tot, "fraction": frac}
            for s, occ, tot, frac in self.rows
        ]


def support_density_report(mu: DiscreteMeasure, grid: Grid,
                           scales=None) -> SupportDensityReport:
    """Fraction of s-by-s cells of the rectangle meeting the support, for each
    cell size s.  Purely descriptive; a support that concentrates on a sparse
    set shows fractions sinking as s shrinks."""
    d = grid.domain
    if scales is None:
        scales = tuple(grid.h * 2 ** k for k in range(5))
    rows = []
    pos = mu.positions()
    masses = mu.masses()
    live = pos[masses > 0.0] if len(pos) else pos
    for s in scales:
        if not s > 0.0:
            raise ValidationError("cell sizes must be positive")
        ncx = max(1, int(math.ceil(d.width / s)))
        ncy = max(1, int(math.ceil(d.height / s)))
        cells = set()
        for x, y in live:
            cx = min(int((x - d.rect_min[0]) / s), ncx - 1)
            cy = min(int((y - d.rect_min[1]) / s), ncy - 1)
            cells.add((cx, cy))
        total = ncx * ncy
        rows.append((float(s), len(cells), total, len(cells) / total))
    return SupportDensityReport(tuple(rows))
