"""Readers and writers for every artifact the pipeline emits.

Formats:

* measures, trees, reports, misc summaries: JSON with sorted keys
* optimizer traces: JSON lines, one record per iteration
* grid fields: CSV (x, y, value) and a compact binary format with an
  ``<ii4d`` header (nx, ny, xmin, xmax, ymin, ymax) followed by row-major
  little-endian float64 values
* run configuration: flat ``key = value`` text, unknown keys rejected by name

All writers are deterministic: key order is sorted, floats go through repr,
and nothing embeds timestamps or environment details.  Every format has a
matching parser so artifacts round-trip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import (Atom, DiscreteMeasure, Domain, Grid, GrowthFunction,
                   RunConfig, ValidationError)
from .elliptic import ScalarField
from .irrigation import ROOT, STEINER, TERMINAL, IrrigationTree, compute_fluxes
from .optimality import OptimalityReport, OptimizationTrace, PathCheckReport

__all__ = [
    "dumps_json",
    "save_json",
    "load_json",
    "measure_to_dict",
    "measure_from_dict",
    "save_measure",
    "load_measure",
    "tree_to_dict",
    "tree_from_dict",
    "save_tree",
    "load_tree",
    "save_landscape_csv",
    "save_field_csv",
    "load_field_csv",
    "save_field_binary",
    "load_field_binary",
    "trace_step_dict",
    "save_trace",
    "load_trace",
    "report_to_dict",
    "save_report",
    "load_report",
    "CONFIG_KEYS",
    "ParsedConfig",
    "parse_config_text",
    "parse_config_entry",
    "config_from_mapping",
    "load_config",
    "config_to_text",
]


# ---------------------------------------------------------------------------
# generic JSON


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(obj))


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# measures


def measure_to_dict(mu: DiscreteMeasure) -> dict:
    return {
        "atoms": [
            {"x": float(a.position[0]), "y": float(a.position[1]), "mass": float(a.mass)}
            for a in mu.atoms
        ]
    }


def measure_from_dict(d) -> DiscreteMeasure:
    if not isinstance(d, dict) or "atoms" not in d:
        raise ValidationError("measure JSON must be an object with an 'atoms' list")
    atoms = []
    for i, rec in enumerate(d["atoms"]):
        try:
            atoms.append(Atom((float(rec["x"]), float(rec["y"])), float(rec["mass"])))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"measure atom {i} needs numeric x, y, mass") from exc
    return DiscreteMeasure(tuple(atoms))


def save_measure(path, mu: DiscreteMeasure) -> None:
    save_json(path, measure_to_dict(mu))


def load_measure(path) -> DiscreteMeasure:
    return measure_from_dict(load_json(path))


# ---------------------------------------------------------------------------
# trees

_KINDS = (ROOT, STEINER, TERMINAL)


def tree_to_dict(tree: IrrigationTree, mu: DiscreteMeasure) -> dict:
    flux = compute_fluxes(tree, mu)
    nodes = [
        {
            "id": i,
            "x": float(tree.positions[i, 0]),
            "y": float(tree.positions[i, 1]),
            "kind": tree.kinds[i],
            "atom": int(tree.atom_index[i]) if tree.atom_index[i] >= 0 else None,
        }
        for i in range(tree.n_nodes)
    ]
    edges = [
        {"parent": p, "child": q, "flux": float(flux.values[q])}
        for p, q in tree.edges()
    ]
    return {"nodes": nodes, "edges": edges}


def tree_from_dict(d):
    """Rebuild the tree; returns (tree, stored_flux) with stored_flux indexed
    by child node so conservation can be checked against a measure."""
    if not isinstance(d, dict) or "nodes" not in d or "edges" not in d:
        raise ValidationError("tree JSON must be an object with 'nodes' and 'edges'")
    nodes = d["nodes"]
    n = len(nodes)
    positions = np.zeros((n, 2))
    kinds = [None] * n
    atom_index = [-1] * n
    seen = set()
    for rec in nodes:
        try:
            i = int(rec["id"])
            if i in seen or not 0 <= i < n:
                raise ValidationError(f"tree JSON: bad or duplicate node id {rec['id']!r}")
            seen.add(i)
            positions[i] = (float(rec["x"]), float(rec["y"]))
            if rec["kind"] not in _KINDS:
                raise ValidationError(f"tree JSON: unknown node kind {rec['kind']!r}")
            kinds[i] = rec["kind"]
            atom_index[i] = -1 if rec.get("atom") is None else int(rec["atom"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"tree JSON: malformed node record {rec!r}") from exc
    parents = [-1] * n
    stored = np.zeros(n)
    for rec in d["edges"]:
        try:
            p, q = int(rec["parent"]), int(rec["child"])
            if not (0 <= p < n and 0 < q < n):
                raise ValidationError(f"tree JSON: edge endpoints out of range: {rec!r}")
            parents[q] = p
            stored[q] = float(rec["flux"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"tree JSON: malformed edge record {rec!r}") from exc
    tree = IrrigationTree(positions, tuple(parents), tuple(kinds), tuple(atom_index))
    return tree, stored


def save_tree(path, tree: IrrigationTree, mu: DiscreteMeasure) -> None:
    save_json(path, tree_to_dict(tree, mu))


def load_tree(path):
    return tree_from_dict(load_json(path))


# ---------------------------------------------------------------------------
# landscape and fields


def save_landscape_csv(path, z) -> None:
    lines = ["node,x,y,z"]
    for i in range(z.tree.n_nodes):
        x, y = z.tree.positions[i]
        lines.append(f"{i},{float(x)!r},{float(y)!r},{float(z.values[i])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_field_csv(path, field: ScalarField) -> None:
    g = field.grid
    lines = ["x,y,value"]
    vals = field.values
    for iy in range(g.ny):
        y = float(g.ys[iy])
        for ix in range(g.nx):
            lines.append(f"{float(g.xs[ix])!r},{y!r},{float(vals[iy * g.nx + ix])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field_csv(path, domain: Domain) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ValidationError(f"{path}: field CSV needs exactly three columns")
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    nx, ny = len(xs), len(ys)
    if nx * ny != len(data):
        raise ValidationError(f"{path}: rows do not form a full {nx}x{ny} grid")
    grid = Grid(domain, nx, ny)
    if not (np.array_equal(xs, grid.xs) and np.array_equal(ys, grid.ys)):
        raise ValidationError(f"{path}: grid coordinates do not match the domain")
    return ScalarField(grid, data[:, 2].copy())


_FIELD_HEADER = struct.Struct("<ii4d")


def save_field_binary(path, field: ScalarField) -> None:
    g = field.grid
    d = g.domain
    header = _FIELD_HEADER.pack(g.nx, g.ny, d.rect_min[0], d.rect_max[0],
                                d.rect_min[1], d.rect_max[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field_binary(path, domain: Domain) -> ScalarField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FIELD_HEADER.size:
        raise ValidationError(f"{path}: truncated field header")
    nx, ny, xmin, xmax, ymin, ymax = _FIELD_HEADER.unpack_from(raw)
    bounds = (xmin, ymin, xmax, ymax)
    want = (domain.rect_min[0], domain.rect_min[1], domain.rect_max[0], domain.rect_max[1])
    if any(abs(a - b) > 1e-12 for a, b in zip(bounds, want)):
        raise ValidationError(f"{path}: stored bounds {bounds} do not match the domain")
    vals = np.frombuffer(raw, dtype="<f8", offset=_FIELD_HEADER.size)
    if len(vals) != nx * ny:
        raise ValidationError(f"{path}: expected {nx * ny} values, found {len(vals)}")
    return ScalarField(Grid(domain, nx, ny), vals.astype(np.float64))


# ---------------------------------------------------------------------------
# traces and reports


def trace_step_dict(step) -> dict:
    return {
        "iteration": step.iteration,
        "payoff": step.payoff,
        "sup_residual": step.sup_residual,
        "accepted": step.accepted,
        "spawned": step.spawned,
        "eta": step.eta,
        "atoms": measure_to_dict(step.measure)["atoms"],
    }


def save_trace(path, trace: OptimizationTrace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for step in trace.steps:
            fh.write(json.dumps(trace_step_dict(step), sort_keys=True,
                                separators=(",", ":")) + "\n")


def load_trace(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{ln}: not valid JSON: {exc}") from exc
    return records


def report_to_dict(report: OptimalityReport, converged: bool, iterations: int,
                   path_check: PathCheckReport | None = None) -> dict:
    return {
        "alpha": report.alpha,
        "c": report.c,
        "converged": converged,
        "iterations": iterations,
        "payoff": report.payoff,
        "harvest": report.harvest,
        "irrigation_cost": report.irrigation_cost,
        "sup_residual": report.sup_residual,
        "records": [
            {
                "atom": r.atom,
                "x": r.position[0],
                "y": r.position[1],
                "mass": r.mass,
                "phi": r.phi,
                "z": r.z,
                "residual": r.residual,
            }
            for r in report.records
        ],
        "path_check": None if path_check is None else {
            "n_samples": path_check.n_samples,
            "n_violations": path_check.n_violations,
            "max_excess": path_check.max_excess,
            "tol": path_check.tol,
        },
    }


def save_report(path, report: OptimalityReport, converged: bool, iterations: int,
                path_check: PathCheckReport | None = None) -> None:
    save_json(path, report_to_dict(report, converged, iterations, path_check))


def load_report(path) -> dict:
    d = load_json(path)
    if not isinstance(d, dict) or "records" not in d:
        raise ValidationError(f"{path}: not a report file")
    return d


# ---------------------------------------------------------------------------
# flat key = value configuration


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int(s: str) -> int:
    return int(s.strip())


def _parse_float(s: str) -> float:
    return float(s.strip())


def _parse_str(s: str) -> str:
    return s.strip()


CONFIG_KEYS = {
    "alpha": _parse_float,
    "c": _parse_float,
    "nx": _parse_int,
    "ny": _parse_int,
    "rect_min_x": _parse_float,
    "rect_min_y": _parse_float,
    "rect_max_x": _parse_float,
    "rect_max_y": _parse_float,
    "origin_x": _parse_float,
    "origin_y": _parse_float,
    "u_max": _parse_float,
    "rate": _parse_float,
    "tol_nonlinear": _parse_float,
    "tol_linear": _parse_float,
    "tol_residual": _parse_float,
    "max_outer_iters": _parse_int,
    "max_plan_moves": _parse_int,
    "step_size": _parse_float,
    "seed": _parse_int,
    "spawn": _parse_bool,
    "spawn_mass": _parse_float,
    "path_tol": _parse_float,
    "measure_path": _parse_str,
    "snap_measure": _parse_bool,
}


def parse_config_entry(key: str, raw: str):
    key = key.strip()
    if key not in CONFIG_KEYS:
        raise ValidationError(f"unknown config key: {key!r}")
    try:
        return key, CONFIG_KEYS[key](raw)
    except ValueError as exc:
        raise ValidationError(f"config key {key!r}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    values = {}
    for ln, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {ln}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key, value = parse_config_entry(key, raw)
        values[key] = value
    return values


@dataclass(frozen=True)
class ParsedConfig:
    run: RunConfig
    measure_path: str | None = None
    snap_measure: bool = False


def config_from_mapping(values: dict) -> ParsedConfig:
    for key in values:
        if key not in CONFIG_KEYS:
            raise ValidationError(f"unknown config key: {key!r}")
    v = dict(values)
    domain = Domain(
        rect_min=(v.pop("rect_min_x", 0.5), v.pop("rect_min_y", -0.5)),
        rect_max=(v.pop("rect_max_x", 1.5), v.pop("rect_max_y", 0.5)),
        origin=(v.pop("origin_x", 0.0), v.pop("origin_y", 0.0)),
    )
    grid = Grid(domain, v.pop("nx", 33), v.pop("ny", 33))
    growth = GrowthFunction(u_max=v.pop("u_max", 1.0), rate=v.pop("rate", 4.0))
    measure_path = v.pop("measure_path", None)
    snap_measure = v.pop("snap_measure", False)
    run = RunConfig(grid=grid, growth=growth, **v)
    return ParsedConfig(run, measure_path, snap_measure)


def load_config(path) -> ParsedConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def config_to_text(parsed: ParsedConfig) -> str:
    cfg = parsed.run
    d = cfg.grid.domain
    values = {
        "alpha": cfg.alpha,
        "c": cfg.c,
        "nx": cfg.grid.nx,
        "ny": cfg.grid.ny,
        "rect_min_x": d.rect_min[0],
        "rect_min_y": d.rect_min[1],
        "rect_max_x": d.rect_max[0],
        "rect_max_y": d.rect_max[1],
        "origin_x": d.origin[0],
        "origin_y": d.origin[1],
        "u_max": cfg.growth.u_max,
        "rate": cfg.growth.rate,
        "tol_nonlinear": cfg.tol_nonlinear,
        "tol_linear": cfg.tol_linear,
        "tol_residual": cfg.tol_residual,
        "max_outer_iters": cfg.max_outer_iters,
        "max_plan_moves": cfg.max_plan_moves,
        "step_size": cfg.step_size,
        "seed": cfg.seed,
        "spawn": cfg.spawn,
        "spawn_mass": cfg.spawn_mass,
        "path_tol": cfg.path_tol,
        "snap_measure": parsed.snap_measure,
    }
    if parsed.measure_path is not None:
        values["measure_path"] = parsed.measure_path
    lines = []
    for key in sorted(values):
        val = values[key]
        if isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
