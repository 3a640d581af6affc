import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rootopt as ro
from rootopt import irrigation as irr

from conftest import random_measure, random_tree


def two_atom_measure():
    return ro.DiscreteMeasure((ro.Atom((1.0, 0.1), 0.5), ro.Atom((1.0, -0.1), 0.5)))


class TestTreeValidation:
    def test_root_must_sit_at_origin(self):
        with pytest.raises(ro.ValidationError, match="origin"):
            ro.IrrigationTree(np.array([[0.1, 0.0], [1.0, 0.0]]),
                              np.array([-1, 0]), ("root", "terminal"),
                              np.array([-1, 0]))

    def test_steiner_needs_two_children(self):
        pos = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        with pytest.raises(ro.ValidationError, match="fewer than two children"):
            ro.IrrigationTree(pos, np.array([-1, 0, 1]),
                              ("root", "steiner", "terminal"), np.array([-1, -1, 0]))

    def test_zero_length_edge_rejected(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ro.ValidationError, match="zero length"):
            ro.IrrigationTree(pos, np.array([-1, 0, 1]),
                              ("root", "terminal", "terminal"), np.array([-1, 0, 1]))

    def test_duplicate_terminal_for_atom(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.5]])
        with pytest.raises(ro.ValidationError, match="more than one terminal"):
            ro.IrrigationTree(pos, np.array([-1, 0, 0]),
                              ("root", "terminal", "terminal"), np.array([-1, 0, 0]))

    def test_positions_read_only(self):
        tree = ro.star_tree(two_atom_measure())
        with pytest.raises(ValueError):
            tree.positions[0, 0] = 1.0


class TestFluxes:
    def test_star_fluxes_equal_masses(self):
        mu = two_atom_measure()
        flux = ro.compute_fluxes(ro.star_tree(mu), mu)
        assert flux.total == 1.0
        assert flux.at(1) == 0.5 and flux.at(2) == 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8))
    def test_conservation_at_every_node(self, seed, n):
        """Flux into a node equals its own terminal mass plus child inflows."""
        rng = np.random.default_rng(seed)
        mu = random_measure(rng, n)
        tree = random_tree(rng, mu)
        flux = ro.compute_fluxes(tree, mu).values
        masses = mu.masses()
        children = tree.children()
        for i in range(tree.n_nodes):
            own = masses[tree.atom_index[i]] if tree.atom_index[i] >= 0 else 0.0
            inflow = own + sum(flux[c] for c in children[i])
            assert flux[i] == pytest.approx(inflow, abs=1e-12)

    def test_positive_mass_atom_missing_terminal(self):
        mu = two_atom_measure()
        star = ro.star_tree(ro.DiscreteMeasure((mu.atoms[0],)))
        with pytest.raises(ro.ValidationError, match="no terminal"):
            ro.compute_fluxes(star, mu)


class TestCostAndLandscape:
    def test_star_cost_closed_form(self):
        rng = np.random.default_rng(7)
        mu = random_measure(rng, 6)
        pos, m = mu.positions(), mu.masses()
        expected = float(np.sum(m ** 0.6 * np.hypot(pos[:, 0], pos[:, 1])))
        assert ro.irrigation_cost(ro.star_tree(mu), mu, 0.6) == pytest.approx(
            expected, rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8),
           st.floats(0.2, 0.95))
    def test_landscape_identity(self, seed, n, alpha):
        """sum(mass * Z) reproduces the plan cost on any tree, optimal or not."""
        rng = np.random.default_rng(seed)
        mu = random_measure(rng, n)
        tree = random_tree(rng, mu)
        z = ro.landscape(tree, mu, alpha)
        cost = ro.irrigation_cost(tree, mu, alpha)
        paid = float(np.dot(mu.masses(), z.at_atoms(range(len(mu)))))
        assert paid == pytest.approx(cost, rel=1e-12, abs=1e-12)

    def test_landscape_rejects_zero_flux_edge(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((1.0, 0.5), 0.0)))
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.5]])
        tree = ro.IrrigationTree(pos, np.array([-1, 0, 0]),
                                 ("root", "terminal", "terminal"), np.array([-1, 0, 1]))
        with pytest.raises(ro.ValidationError, match="zero-flux"):
            ro.landscape(tree, mu, 0.5)

    def test_marginal_cost_matches_mass_perturbation(self):
        # d/deps cost((1 + eps * 1_a) mu) at 0 should equal alpha * m_a * Z_a
        rng = np.random.default_rng(3)
        mu = random_measure(rng, 5)
        alpha = 0.7
        tree = ro.optimize_plan(mu, alpha)
        z = ro.landscape(tree, mu, alpha)
        for a in range(len(mu)):
            g = np.zeros(len(mu))
            g[a] = 1.0
            eps = 1e-6
            fd = (ro.scaled_mass_cost(tree, mu, alpha, g, eps)
                  - ro.scaled_mass_cost(tree, mu, alpha, g, -eps)) / (2 * eps)
            node = tree.terminal_of_atom()[a]
            assert ro.marginal_cost_at_node(tree, mu, alpha, node) == pytest.approx(
                alpha * z.at_atom(a), rel=1e-14)
            assert fd == pytest.approx(alpha * mu.masses()[a] * z.at_atom(a), rel=1e-5)

    def test_scaled_mass_cost_at_zero_eps(self):
        mu = two_atom_measure()
        tree = ro.star_tree(mu)
        g = np.array([1.0, -1.0])
        assert ro.scaled_mass_cost(tree, mu, 0.5, g, 0.0) == ro.irrigation_cost(
            tree, mu, 0.5)


class TestLowerBound:
    def test_empty_measure(self):
        assert ro.cost_lower_bound(ro.DiscreteMeasure(), 0.5) == 0.0

    def test_single_atom_is_tight(self):
        mu = ro.DiscreteMeasure((ro.Atom((0.6, 0.8), 0.7),))
        assert ro.cost_lower_bound(mu, 0.4) == pytest.approx(0.7 ** 0.4 * 1.0, rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.floats(0.2, 0.95))
    def test_bound_below_star_cost(self, seed, n, alpha):
        rng = np.random.default_rng(seed)
        mu = random_measure(rng, n)
        star = ro.star_tree(mu)
        assert ro.cost_lower_bound(mu, alpha) <= ro.irrigation_cost(
            star, mu, alpha) + 1e-12

    def test_collinear_atoms_are_tight(self):
        # stacked on one ray the bound equals the chain cost
        mu = ro.DiscreteMeasure((ro.Atom((0.5, 0.0), 0.4), ro.Atom((1.0, 0.0), 0.6)))
        alpha = 0.5
        chain = 0.5 * 1.0 ** alpha + 0.5 * 0.6 ** alpha
        assert ro.cost_lower_bound(mu, alpha) == pytest.approx(chain, rel=1e-14)


class TestOptimalityDiagnostics:
    def test_holder_flags_detour(self):
        mu = ro.DiscreteMeasure((ro.Atom((2.0, 0.0), 0.5), ro.Atom((0.1, 0.0), 0.5)))
        pos = np.array([[0.0, 0.0], [2.0, 0.0], [0.1, 0.0]])
        detour = ro.IrrigationTree(pos, np.array([-1, 0, 1]),
                                   ("root", "terminal", "terminal"), np.array([-1, 0, 1]))
        report = ro.check_landscape_holder(detour, mu, 0.5)
        assert not report.ok
        assert report.pairs_checked == 6

    def test_holder_ok_on_star(self):
        mu = two_atom_measure()
        assert ro.check_landscape_holder(ro.star_tree(mu), mu, 0.5).ok

    def test_arc_chord_flags_zigzag(self):
        mu = ro.DiscreteMeasure((ro.Atom((0.5, 0.45), 0.5), ro.Atom((1.0, 0.0), 0.5)))
        pos = np.array([[0.0, 0.0], [0.5, 0.45], [1.0, 0.0]])
        zigzag = ro.IrrigationTree(pos, np.array([-1, 0, 1]),
                                   ("root", "terminal", "terminal"), np.array([-1, 0, 1]))
        report = ro.check_arc_chord(zigzag, mu, 0.95, delta0=0.4)
        assert not report.ok
        assert report.violations[0][2] > report.constant * report.violations[0][3]

    def test_arc_chord_ok_on_straight_chain(self):
        mu = ro.DiscreteMeasure((ro.Atom((0.5, 0.0), 0.5), ro.Atom((1.0, 0.0), 0.5)))
        pos = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        chain = ro.IrrigationTree(pos, np.array([-1, 0, 1]),
                                  ("root", "terminal", "terminal"), np.array([-1, 0, 1]))
        assert ro.check_arc_chord(chain, mu, 0.6, delta0=0.25).ok

    def test_delta0_must_be_positive(self):
        mu = two_atom_measure()
        with pytest.raises(ro.ValidationError):
            ro.check_arc_chord(ro.star_tree(mu), mu, 0.5, delta0=0.0)


class TestPlanners:
    def test_y_fixture_exact_cost(self):
        """Symmetric pair at (1, +-0.1), alpha = 1/2: the best plan runs a
        unit-flux trunk to (0.9, 0) and splits, total cost
        0.9 + 2 * sqrt(0.5) * sqrt(0.02) = 1.1 on the nose."""
        mu = two_atom_measure()
        tree = ro.optimize_plan(mu, 0.5)
        assert ro.irrigation_cost(tree, mu, 0.5) == pytest.approx(1.1, abs=1e-6)
        exact = ro.brute_force_plan(mu, 0.5)
        assert ro.irrigation_cost(exact, mu, 0.5) == pytest.approx(1.1, abs=1e-9)

    def test_alpha_one_gives_star(self):
        rng = np.random.default_rng(11)
        mu = random_measure(rng, 5)
        tree = ro.optimize_plan(mu, 1.0)
        pos, m = mu.positions(), mu.masses()
        expected = float(np.sum(m * np.hypot(pos[:, 0], pos[:, 1])))
        assert ro.irrigation_cost(tree, mu, 1.0) == pytest.approx(expected, rel=1e-12)
        assert all(k != "steiner" for k in tree.kinds)

    def test_optimizer_never_worse_than_star(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            mu = random_measure(rng, 6)
            alpha = float(rng.uniform(0.3, 0.95))
            cost = ro.irrigation_cost(ro.optimize_plan(mu, alpha), mu, alpha)
            star = ro.irrigation_cost(ro.star_tree(mu), mu, alpha)
            assert cost <= star + 1e-9 * max(1.0, star)

    def test_optimizer_respects_lower_bound(self, oracle_instances):
        for mu, alpha, _ in oracle_instances[:25]:
            tree = ro.optimize_plan(mu, alpha)
            assert ro.irrigation_cost(tree, mu, alpha) >= ro.cost_lower_bound(
                mu, alpha) - 1e-12

    def test_zero_mass_atoms_dropped(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((1.2, 0.3), 0.0)))
        tree = ro.optimize_plan(mu, 0.5)
        assert tree.terminal_of_atom() == {0: 1}

    def test_all_zero_mass_rejected(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.0),))
        with pytest.raises(ro.ValidationError):
            ro.optimize_plan(mu, 0.5)

    def test_incremental_gains_match_full_recompute(self, monkeypatch):
        # every accepted move's predicted gain is re-derived from scratch
        monkeypatch.setattr(irr, "_SELF_CHECK_GAINS", True)
        rng = np.random.default_rng(99)
        for _ in range(6):
            mu = random_measure(rng, 7)
            ro.optimize_plan(mu, float(rng.uniform(0.3, 0.9)))

    def test_mass_bound_holds_on_optimized_plans(self):
        rng = np.random.default_rng(41)
        domain = ro.Domain()
        for _ in range(10):
            mu = random_measure(rng, 5)
            alpha = float(rng.uniform(0.3, 0.95))
            cost = ro.irrigation_cost(ro.optimize_plan(mu, alpha), mu, alpha)
            assert ro.mass_bound_check(mu, cost, domain, alpha)


class TestBruteForce:
    def test_topology_counts(self):
        # (2n - 5)!! full binary topologies on n labeled leaves
        assert sum(1 for _ in irr._full_topologies(3)) == 1
        assert sum(1 for _ in irr._full_topologies(4)) == 3
        assert sum(1 for _ in irr._full_topologies(5)) == 15
        assert sum(1 for _ in irr._full_topologies(6)) == 105

    def test_too_many_atoms_rejected(self):
        rng = np.random.default_rng(1)
        mu = random_measure(rng, 6)
        with pytest.raises(ro.ValidationError):
            ro.brute_force_plan(mu, 0.5)

    def test_matches_heuristic_on_three_atoms(self):
        rng = np.random.default_rng(5)
        mu = random_measure(rng, 3)
        alpha = 0.6
        exact = ro.irrigation_cost(ro.brute_force_plan(mu, alpha), mu, alpha)
        heur = ro.irrigation_cost(ro.optimize_plan(mu, alpha), mu, alpha)
        assert heur <= exact * 1.02 + 1e-12
