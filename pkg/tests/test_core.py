import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rootopt as ro


class TestDomain:
    def test_defaults(self):
        d = ro.Domain()
        assert d.width == 1.0 and d.height == 1.0
        assert d.source_distance() == 0.5

    def test_origin_inside_rejected(self):
        with pytest.raises(ro.ValidationError):
            ro.Domain(rect_min=(-1.0, -1.0), rect_max=(1.0, 1.0))

    def test_origin_on_boundary_rejected(self):
        with pytest.raises(ro.ValidationError):
            ro.Domain(rect_min=(0.0, -0.5), rect_max=(1.0, 0.5))

    def test_degenerate_rectangle_rejected(self):
        with pytest.raises(ro.ValidationError):
            ro.Domain(rect_min=(1.0, 0.0), rect_max=(1.0, 1.0))

    def test_source_distance_diagonal(self):
        d = ro.Domain(rect_min=(3.0, 4.0), rect_max=(5.0, 6.0))
        assert d.source_distance() == pytest.approx(5.0, abs=1e-15)

    def test_contains(self):
        d = ro.Domain()
        assert d.contains(1.0, 0.0)
        assert d.contains(0.5, -0.5)
        assert not d.contains(0.5, -0.5, closed=False)
        assert not d.contains(0.0, 0.0)


class TestGrid:
    def test_spacing_must_match(self):
        with pytest.raises(ro.ValidationError):
            ro.Grid(ro.Domain(), 33, 17)

    def test_too_small(self):
        with pytest.raises(ro.ValidationError):
            ro.Grid(ro.Domain(), 2, 2)

    def test_index_position_round_trip_exact(self):
        g = ro.Grid(ro.Domain(), 17, 17)
        for ix in range(g.nx):
            for iy in range(g.ny):
                x, y = g.node_position(ix, iy)
                assert g.index_of(x, y) == g.node_index(ix, iy)

    def test_index_of_rejects_off_node(self):
        g = ro.Grid(ro.Domain(), 17, 17)
        with pytest.raises(ro.ValidationError, match="not a grid node"):
            g.index_of(1.0001, 0.0)

    def test_snap_and_nearest(self):
        g = ro.Grid(ro.Domain(), 17, 17)
        x, y = g.snap(0.51, -0.49)
        assert (x, y) == g.node_position(0, 0)
        assert g.nearest_node(99.0, 99.0) == (g.nx - 1, g.ny - 1)

    def test_node_coordinates_order(self):
        g = ro.Grid(ro.Domain(), 5, 5)
        coords = g.node_coordinates()
        k = g.node_index(3, 2)
        assert tuple(coords[k]) == g.node_position(3, 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(3, 40), st.integers(0, 39), st.integers(0, 39))
    def test_round_trip_property(self, n, ix, iy):
        g = ro.Grid(ro.Domain(), n, n)
        ix, iy = ix % n, iy % n
        x, y = g.node_position(ix, iy)
        assert g.index_of(x, y) == iy * n + ix


class TestMeasure:
    def test_atom_validation(self):
        with pytest.raises(ro.ValidationError):
            ro.Atom((1.0, 0.0), -0.5)
        with pytest.raises(ro.ValidationError):
            ro.Atom((math.inf, 0.0), 1.0)

    def test_duplicate_positions_rejected(self):
        a = ro.Atom((1.0, 0.0), 0.5)
        with pytest.raises(ro.ValidationError, match="share position"):
            ro.DiscreteMeasure((a, ro.Atom((1.0, 0.0), 0.25)))

    def test_total_mass_and_arrays(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((1.0, 0.25), 0.25)))
        assert ro.total_mass(mu) == 0.75
        assert mu.positions().shape == (2, 2)
        assert list(mu.masses()) == [0.5, 0.25]

    def test_empty_measure(self):
        mu = ro.DiscreteMeasure()
        assert ro.total_mass(mu) == 0.0
        assert mu.positions().shape == (0, 2)

    def test_with_masses_and_filter(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((1.0, 0.25), 0.25)))
        mu2 = mu.with_masses([0.0, 1.0])
        kept_mu, kept = mu2.without_zero_mass()
        assert kept == [1]
        assert kept_mu.atoms[0].position == (1.0, 0.25)
        with pytest.raises(ro.ValidationError):
            mu.with_masses([1.0])

    def test_mass_outside(self):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((0.6, 0.0), 0.25)))
        assert ro.mass_outside(mu, 0.0) == 0.75
        assert ro.mass_outside(mu, 0.8) == 0.5
        assert ro.mass_outside(mu, 1.0) == 0.5  # boundary counts as outside
        assert ro.mass_outside(mu, 2.0) == 0.0
        with pytest.raises(ro.ValidationError):
            ro.mass_outside(mu, -1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_mass_outside_monotone(self, r1, r2):
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 0.5), ro.Atom((0.6, 0.3), 0.25),
                                 ro.Atom((1.4, -0.4), 1.5)))
        lo, hi = min(r1, r2), max(r1, r2)
        assert ro.mass_outside(mu, lo) >= ro.mass_outside(mu, hi)

    def test_mass_bound_check(self):
        d = ro.Domain()  # r0 = 0.5
        mu = ro.DiscreteMeasure((ro.Atom((1.0, 0.0), 1.0),))
        # single atom at distance 1 and alpha = 0.5: cost 1 allows (1/0.5)^2 = 4
        assert ro.mass_bound_check(mu, 1.0, d, 0.5)
        heavy = mu.with_masses([5.0])
        assert not ro.mass_bound_check(heavy, 1.0, d, 0.5)
        with pytest.raises(ro.ValidationError):
            ro.mass_bound_check(mu, -1.0, d, 0.5)
        with pytest.raises(ro.ValidationError):
            ro.mass_bound_check(mu, 1.0, d, 1.5)


class TestGrowth:
    def test_zeros_and_peak(self):
        f = ro.GrowthFunction(u_max=2.0, rate=3.0)
        assert f(0.0) == 0.0
        assert f(2.0) == 0.0
        assert f.peak == pytest.approx(1.5)
        assert f(1.0) == pytest.approx(1.5)

    def test_derivative_matches_difference(self):
        f = ro.GrowthFunction()
        u = 0.3
        fd = (f(u + 1e-7) - f(u - 1e-7)) / 2e-7
        assert f.derivative(u) == pytest.approx(fd, rel=1e-6)

    def test_vector_evaluation(self):
        f = ro.GrowthFunction()
        out = f(np.array([0.0, 0.5, 1.0]))
        assert out.shape == (3,)

    def test_validation(self):
        with pytest.raises(ro.ValidationError):
            ro.GrowthFunction(u_max=-1.0)
        with pytest.raises(ro.ValidationError):
            ro.GrowthFunction(rate=0.0)


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = ro.RunConfig()
        assert cfg.grid.nx == 33
        assert cfg.domain.source_distance() == 0.5

    def test_replace(self):
        cfg = ro.RunConfig().replace(alpha=0.5, c=0.25)
        assert cfg.alpha == 0.5 and cfg.c == 0.25

    def test_validation(self):
        with pytest.raises(ro.ValidationError):
            ro.RunConfig(alpha=1.0)
        with pytest.raises(ro.ValidationError):
            ro.RunConfig(c=0.0)
        with pytest.raises(ro.ValidationError):
            ro.RunConfig(max_outer_iters=0)
        with pytest.raises(ro.ValidationError):
            ro.RunConfig(spawn_mass=-0.1)
