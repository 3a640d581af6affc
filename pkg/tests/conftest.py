import numpy as np
import pytest

import rootopt as ro
from rootopt.irrigation import ROOT, STEINER, TERMINAL, _contract


def random_measure(rng, n, mass_range=(0.05, 1.0)) -> ro.DiscreteMeasure:
    """Atoms away from the origin with pairwise distinct positions."""
    seen = set()
    atoms = []
    while len(atoms) < n:
        p = (float(rng.uniform(0.4, 1.5)), float(rng.uniform(-0.5, 0.5)))
        if p in seen:
            continue
        seen.add(p)
        atoms.append(ro.Atom(p, float(rng.uniform(*mass_range))))
    return ro.DiscreteMeasure(tuple(atoms))


def random_grid_measure(rng, grid, n, mass_range=(0.1, 0.8)) -> ro.DiscreteMeasure:
    idx = rng.choice(grid.n_nodes, size=n, replace=False)
    coords = grid.node_coordinates()
    return ro.DiscreteMeasure(tuple(
        ro.Atom((float(coords[i, 0]), float(coords[i, 1])), float(rng.uniform(*mass_range)))
        for i in sorted(int(i) for i in idx)))


def random_tree(rng, mu) -> ro.IrrigationTree:
    """Random topology over the atoms of mu: terminals and a random number of
    steiner nodes each hang off a uniformly chosen earlier node, then degree-1
    branch points are contracted away."""
    pos = [(0.0, 0.0)]
    parents = [-1]
    kinds = [ROOT]
    atom_index = [-1]
    for _ in range(int(rng.integers(0, len(mu.atoms) + 1))):
        parents.append(int(rng.integers(0, len(parents))))
        pos.append((float(rng.uniform(0.1, 1.4)), float(rng.uniform(-0.6, 0.6))))
        kinds.append(STEINER)
        atom_index.append(-1)
    for i, a in enumerate(mu.atoms):
        parents.append(int(rng.integers(0, len(parents))))
        pos.append(a.position)
        kinds.append(TERMINAL)
        atom_index.append(i)
    pos2, par2, kinds2, ai2 = _contract(np.array(pos, dtype=float), parents,
                                        kinds, atom_index, tol=0.0)
    return ro.IrrigationTree(pos2, par2, kinds2, ai2)


def manufactured_problem(grid, f, amplitude=0.04):
    """Measure whose exact continuum state is a cosine bump around u_max / 2.

    u_ex = u_max * (1/2 + A cos(pi xh) cos(pi yh)) satisfies the Neumann
    condition exactly; the matching absorption a = (lap u_ex + f(u_ex)) / u_ex
    is positive for small A and is lumped as one atom of mass a tau h^2 per
    node (tau h^2 the node's cell area).  Returns (measure, exact nodal values).
    """
    d = grid.domain
    xs = (grid.xs - d.rect_min[0]) / d.width
    ys = (grid.ys - d.rect_min[1]) / d.height
    cx = np.cos(np.pi * xs)[None, :]
    cy = np.cos(np.pi * ys)[:, None]
    bump = (cx * cy).ravel()
    u_ex = f.u_max * (0.5 + amplitude * bump)
    lap_u = -f.u_max * amplitude * np.pi ** 2 * (
        1.0 / d.width ** 2 + 1.0 / d.height ** 2) * bump
    a = (lap_u + f(u_ex)) / u_ex
    assert a.min() > 0.0
    coords = grid.node_coordinates()
    tau = ro.quadrature_weights(grid)
    atoms = tuple(ro.Atom((float(coords[k, 0]), float(coords[k, 1])),
                          float(a[k] * tau[k] * grid.h ** 2))
                  for k in range(grid.n_nodes))
    return ro.DiscreteMeasure(atoms), u_ex


@pytest.fixture(scope="session")
def oracle_instances():
    """100 small instances with their exhaustive-search plans, shared by the
    acceptance criteria that compare against or inspect oracle optima."""
    rng = np.random.default_rng(20260814)
    out = []
    for _ in range(100):
        n = int(rng.integers(2, 5))
        mu = random_measure(rng, n, mass_range=(0.1, 1.0))
        alpha = float(rng.uniform(0.35, 0.9))
        tree = ro.brute_force_plan(mu, alpha)
        out.append((mu, alpha, tree))
    return out


@pytest.fixture(scope="session")
def small_grid():
    return ro.Grid(ro.Domain(), 17, 17)
