import json

import numpy as np
import pytest

import rootopt as ro
from rootopt import serialization as ser
from rootopt.elliptic import ScalarField

from conftest import random_measure, random_tree


@pytest.fixture()
def measure():
    rng = np.random.default_rng(70)
    return random_measure(rng, 5)


class TestJsonHelpers:
    def test_dumps_is_key_order_insensitive(self):
        assert ser.dumps_json({"b": 1, "a": 2}) == ser.dumps_json({"a": 2, "b": 1})

    def test_load_rejects_garbage(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{not json")
        with pytest.raises(ro.ValidationError):
            ser.load_json(p)


class TestMeasureFiles:
    def test_round_trip_is_exact(self, tmp_path, measure):
        p = tmp_path / "measure.json"
        ser.save_measure(p, measure)
        back = ser.load_measure(p)
        assert back.positions().tolist() == measure.positions().tolist()
        assert back.masses().tolist() == measure.masses().tolist()

    def test_malformed_atom_is_named(self):
        with pytest.raises(ro.ValidationError, match="atom 1"):
            ser.measure_from_dict({"atoms": [{"x": 1.0, "y": 0.0, "mass": 1.0},
                                             {"x": 1.0, "mass": 1.0}]})

    def test_non_object_rejected(self):
        with pytest.raises(ro.ValidationError):
            ser.measure_from_dict([1, 2, 3])


class TestTreeFiles:
    def test_round_trip_preserves_structure_and_flux(self, tmp_path, measure):
        rng = np.random.default_rng(71)
        tree = random_tree(rng, measure)
        p = tmp_path / "tree.json"
        ser.save_tree(p, tree, measure)
        back, stored = ser.load_tree(p)
        assert back.positions.tolist() == tree.positions.tolist()
        assert back.parents.tolist() == tree.parents.tolist()
        assert back.kinds == tree.kinds
        assert back.atom_index.tolist() == tree.atom_index.tolist()
        flux = ro.compute_fluxes(back, measure).values
        assert np.array_equal(stored[1:], flux[1:])

    def test_unknown_kind_rejected(self):
        d = {"nodes": [{"id": 0, "x": 0.0, "y": 0.0, "kind": "hub", "atom": None}],
             "edges": []}
        with pytest.raises(ro.ValidationError, match="kind"):
            ser.tree_from_dict(d)

    def test_duplicate_id_rejected(self):
        d = {"nodes": [{"id": 0, "x": 0.0, "y": 0.0, "kind": "root", "atom": None},
                       {"id": 0, "x": 1.0, "y": 0.0, "kind": "terminal", "atom": 0}],
             "edges": [{"parent": 0, "child": 1, "flux": 1.0}]}
        with pytest.raises(ro.ValidationError):
            ser.tree_from_dict(d)


class TestLandscapeCsv:
    def test_values_written_verbatim(self, tmp_path, measure):
        tree = ro.star_tree(measure)
        z = ro.landscape(tree, measure, 0.5)
        p = tmp_path / "landscape.csv"
        ser.save_landscape_csv(p, z)
        lines = p.read_text().splitlines()
        assert lines[0] == "node,x,y,z"
        assert len(lines) == tree.n_nodes + 1
        for i, line in enumerate(lines[1:]):
            node, x, y, zv = line.split(",")
            assert int(node) == i
            assert float(zv) == z.values[i]


class TestFieldFiles:
    def make_field(self, n=9):
        grid = ro.Grid(ro.Domain(), n, n)
        rng = np.random.default_rng(72)
        return ScalarField(grid, rng.uniform(-1.0, 2.0, grid.n_nodes))

    def test_csv_round_trip_exact(self, tmp_path):
        field = self.make_field()
        p = tmp_path / "field.csv"
        ser.save_field_csv(p, field)
        back = ser.load_field_csv(p, field.grid.domain)
        assert np.array_equal(back.values, field.values)
        assert back.grid == field.grid

    def test_csv_wrong_domain_rejected(self, tmp_path):
        field = self.make_field()
        p = tmp_path / "field.csv"
        ser.save_field_csv(p, field)
        other = ro.Domain(rect_min=(1.5, -0.5), rect_max=(2.5, 0.5))
        with pytest.raises(ro.ValidationError):
            ser.load_field_csv(p, other)

    def test_csv_bad_shape_rejected(self, tmp_path):
        p = tmp_path / "field.csv"
        p.write_text("x,y,value\n0.5,-0.5,1.0\n0.5,0.5,2.0\n1.5,-0.5,3.0\n")
        with pytest.raises(ro.ValidationError):
            ser.load_field_csv(p, ro.Domain())

    def test_binary_round_trip_exact(self, tmp_path):
        field = self.make_field()
        p = tmp_path / "field.bin"
        ser.save_field_binary(p, field)
        back = ser.load_field_binary(p, field.grid.domain)
        assert np.array_equal(back.values, field.values)

    def test_binary_wrong_domain_rejected(self, tmp_path):
        field = self.make_field()
        p = tmp_path / "field.bin"
        ser.save_field_binary(p, field)
        other = ro.Domain(rect_min=(0.75, -0.5), rect_max=(1.75, 0.5))
        with pytest.raises(ro.ValidationError, match="bounds"):
            ser.load_field_binary(p, other)

    def test_binary_truncated_rejected(self, tmp_path):
        p = tmp_path / "field.bin"
        p.write_bytes(b"\x01\x02")
        with pytest.raises(ro.ValidationError, match="truncated"):
            ser.load_field_binary(p, ro.Domain())


@pytest.fixture(scope="module")
def trace():
    grid = ro.Grid(ro.Domain(), 9, 9)
    cfg = ro.RunConfig(grid=grid, c=0.1, max_outer_iters=4)
    mu0 = ro.DiscreteMeasure((ro.Atom(grid.node_position(6, 4), 0.3),))
    return ro.ascend_measure(cfg, mu0)


class TestTraceAndReport:
    def test_trace_round_trip(self, tmp_path, trace):
        p = tmp_path / "trace.jsonl"
        ser.save_trace(p, trace)
        records = ser.load_trace(p)
        assert records == [ser.trace_step_dict(s) for s in trace.steps]
        assert records[0]["iteration"] == 0
        assert all(set(r) == {"iteration", "payoff", "sup_residual", "accepted",
                              "spawned", "eta", "atoms"} for r in records)

    def test_report_round_trip(self, tmp_path, trace):
        p = tmp_path / "report.json"
        ser.save_report(p, trace.report, trace.converged, len(trace.steps) - 1)
        back = ser.load_report(p)
        assert back == ser.report_to_dict(trace.report, trace.converged,
                                          len(trace.steps) - 1)
        assert back["payoff"] == trace.report.payoff

    def test_report_with_path_check(self, tmp_path, trace):
        check = ro.path_inequality_check(trace.state, trace.adjoint, trace.tree,
                                         trace.measure, 0.1, trace.report.alpha)
        p = tmp_path / "report.json"
        ser.save_report(p, trace.report, True, 3, path_check=check)
        back = ser.load_report(p)
        assert back["path_check"]["n_samples"] == check.n_samples

    def test_not_a_report_rejected(self, tmp_path):
        p = tmp_path / "report.json"
        p.write_text("{\"payoff\": 1.0}\n")
        with pytest.raises(ro.ValidationError):
            ser.load_report(p)


class TestConfigText:
    def test_round_trip_reproduces_run_config(self):
        cfg = ro.RunConfig(grid=ro.Grid(ro.Domain(), 17, 17), alpha=0.62,
                           c=0.31, tol_residual=2e-5, spawn=True, spawn_mass=0.07)
        parsed = ser.ParsedConfig(cfg, measure_path="measure.json", snap_measure=True)
        text = ser.config_to_text(parsed)
        back = ser.config_from_mapping(ser.parse_config_text(text))
        assert back.run == cfg
        assert back.measure_path == "measure.json"
        assert back.snap_measure is True

    def test_defaults_when_empty(self):
        parsed = ser.config_from_mapping({})
        assert parsed.run == ro.RunConfig()
        assert parsed.measure_path is None

    def test_unknown_key_is_named(self):
        with pytest.raises(ro.ValidationError, match="unknown config key: 'gamma'"):
            ser.parse_config_entry("gamma", "1.0")

    def test_bad_value_names_the_key(self):
        with pytest.raises(ro.ValidationError, match="'nx'"):
            ser.parse_config_entry("nx", "many")

    def test_comments_and_blanks_skipped(self):
        text = "# irrigation exponent\n\nalpha = 0.5\n  # done\n"
        assert ser.parse_config_text(text) == {"alpha": 0.5}

    def test_line_without_equals_reports_line_number(self):
        with pytest.raises(ro.ValidationError, match="line 2"):
            ser.parse_config_text("alpha = 0.5\nbogus\n")

    def test_boolean_spellings(self):
        for raw, want in (("true", True), ("YES", True), ("0", False), ("no", False)):
            assert ser.parse_config_entry("spawn", raw) == ("spawn", want)
        with pytest.raises(ro.ValidationError):
            ser.parse_config_entry("spawn", "maybe")
