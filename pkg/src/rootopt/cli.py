"""Command-line pipeline driver.

Subcommands:

* ``irrigate``  plan a tree for the configured measure: tree.json, plan.svg,
  landscape.csv, cost.json
* ``solve``     maximal state solution: state.csv, state.bin, harvest.json
* ``adjoint``   state plus adjoint and marginal-harvest fields: psi.*, phi.*,
  adjoint.json
* ``optimize``  full mass ascent: trace.jsonl, report.json, final measure and
  plan, fields, support.json
* ``verify``    re-check invariants against stored artifacts; exit 1 naming
  the first violated invariant
* ``report``    support-density table from stored or configured measure

Flags: --config PATH, --out DIR, --set K=V (repeatable), --seed N,
--threads N.  Exit status: 0 success, 1 validation failure, 2 solver failure.

Configs are flat ``key = value`` text; every subcommand writes the resolved
config and measure into the output directory, so a run directory is
self-describing and `verify` can consume it without extra flags.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .core import (Atom, DiscreteMeasure, SolverError, ValidationError,
                   total_mass)
from .elliptic import (growth_bound_lambda, harvest, phi_field, solve_adjoint,
                       solve_state)
from .irrigation import (check_landscape_holder, compute_fluxes,
                         cost_lower_bound, irrigation_cost, landscape,
                         optimize_plan)
from .optimality import (ascend_measure, optimality_residual,
                         path_inequality_check, support_density_report)
from .render import render_tree_svg, save_svg
from .serialization import (ParsedConfig, config_from_mapping, config_to_text,
                            load_field_binary, load_measure, load_report,
                            load_trace, load_tree, parse_config_entry,
                            parse_config_text, save_field_binary,
                            save_field_csv, save_json, save_landscape_csv,
                            save_measure, save_report, save_trace, save_tree)

__all__ = ["main"]


def _apply_threads(n: int) -> None:
    # best-effort hint to BLAS/OpenMP pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rootopt",
        description="branched-transport irrigation plans coupled to a harvest PDE",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("irrigate", "plan an irrigation tree and its landscape"),
        ("solve", "solve the harvest state equation"),
        ("adjoint", "solve state and adjoint, emit marginal-harvest field"),
        ("optimize", "run mass ascent on the measure"),
        ("verify", "re-check invariants against stored artifacts"),
        ("report", "support-density table"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--out", type=Path, required=True, help="artifact directory")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="override the seed key")
        p.add_argument("--threads", type=int, default=None, help="thread-count hint")
    return parser


def _load_setup(args) -> ParsedConfig:
    values = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects K=V, got {item!r}")
        key, raw = item.split("=", 1)
        key, value = parse_config_entry(key, raw)
        values[key] = value
    if args.seed is not None:
        values["seed"] = args.seed
    return config_from_mapping(values)


def _snap_to_grid(mu: DiscreteMeasure, grid) -> DiscreteMeasure:
    """Move each atom to its nearest node, merging masses that collide."""
    acc: dict[tuple, float] = {}
    for a in mu.atoms:
        key = grid.nearest_node(*a.position)
        acc[key] = acc.get(key, 0.0) + a.mass
    atoms = tuple(Atom(grid.node_position(ix, iy), m)
                  for (ix, iy), m in sorted(acc.items()))
    return DiscreteMeasure(atoms)


def _default_measure(parsed: ParsedConfig) -> DiscreteMeasure:
    grid = parsed.run.grid
    raw = DiscreteMeasure((
        Atom((0.80, -0.22), 0.35),
        Atom((1.15, 0.02), 0.40),
        Atom((0.95, 0.30), 0.25),
    ))
    return _snap_to_grid(raw, grid)


def _resolve_measure(args, parsed: ParsedConfig) -> DiscreteMeasure:
    if parsed.measure_path is None:
        return _default_measure(parsed)
    base = args.config.parent if args.config is not None else Path.cwd()
    path = Path(parsed.measure_path)
    if not path.is_absolute():
        path = base / path
    mu = load_measure(path)
    if parsed.snap_measure:
        mu = _snap_to_grid(mu, parsed.run.grid)
    return mu


def _write_common(out: Path, parsed: ParsedConfig, mu: DiscreteMeasure) -> None:
    stamped = ParsedConfig(parsed.run, measure_path="measure.json", snap_measure=False)
    with open(out / "config.txt", "w", encoding="utf-8") as fh:
        fh.write(config_to_text(stamped))
    save_measure(out / "measure.json", mu)


def _cmd_irrigate(args, parsed: ParsedConfig, out: Path) -> int:
    cfg = parsed.run
    mu = _resolve_measure(args, parsed)
    _write_common(out, parsed, mu)
    tree = optimize_plan(mu, cfg.alpha, budget=cfg.max_plan_moves, seed=cfg.seed)
    cost = irrigation_cost(tree, mu, cfg.alpha)
    lb = cost_lower_bound(mu, cfg.alpha, cfg.domain.origin)
    z = landscape(tree, mu, cfg.alpha)
    save_tree(out / "tree.json", tree, mu)
    save_landscape_csv(out / "landscape.csv", z)
    save_svg(out / "plan.svg", render_tree_svg(tree, mu, cfg.alpha, cfg.domain))
    save_json(out / "cost.json", {
        "alpha": cfg.alpha,
        "cost": cost,
        "lower_bound": lb,
        "n_atoms": len(mu.atoms),
        "total_mass": total_mass(mu),
    })
    print(f"cost {cost!r} (lower bound {lb!r}) over {len(mu.atoms)} atoms")
    return 0


def _solve_fields(parsed: ParsedConfig, mu: DiscreteMeasure):
    cfg = parsed.run
    u = solve_state(cfg.grid, mu, cfg.growth,
                    tol=cfg.tol_nonlinear, tol_linear=cfg.tol_linear)
    return u


def _cmd_solve(args, parsed: ParsedConfig, out: Path) -> int:
    cfg = parsed.run
    mu = _resolve_measure(args, parsed)
    _write_common(out, parsed, mu)
    u = _solve_fields(parsed, mu)
    h = harvest(u, mu)
    save_field_csv(out / "state.csv", u)
    save_field_binary(out / "state.bin", u)
    save_json(out / "harvest.json", {"harvest": h, "u_min": u.min(), "u_max": u.max()})
    print(f"harvest {h!r} (state range [{u.min()!r}, {u.max()!r}])")
    return 0


def _cmd_adjoint(args, parsed: ParsedConfig, out: Path) -> int:
    cfg = parsed.run
    mu = _resolve_measure(args, parsed)
    _write_common(out, parsed, mu)
    u = _solve_fields(parsed, mu)
    psi = solve_adjoint(cfg.grid, mu, u, cfg.growth, tol=cfg.tol_linear)
    phi = phi_field(u, psi)
    lam = growth_bound_lambda(cfg.growth, max(u.min(), 1e-12 * cfg.growth.u_max))
    for name, field in (("state", u), ("psi", psi), ("phi", phi)):
        save_field_csv(out / f"{name}.csv", field)
        save_field_binary(out / f"{name}.bin", field)
    save_json(out / "adjoint.json", {
        "harvest": harvest(u, mu),
        "lambda_bound": lam,
        "psi_min": psi.min(),
        "psi_max": psi.max(),
    })
    print(f"adjoint range [{psi.min()!r}, {psi.max()!r}], bound {lam * cfg.growth.u_max + 1.0!r}")
    return 0


def _cmd_optimize(args, parsed: ParsedConfig, out: Path) -> int:
    cfg = parsed.run
    mu0 = _resolve_measure(args, parsed)
    _write_common(out, parsed, mu0)
    save_measure(out / "measure_initial.json", mu0)
    trace = ascend_measure(cfg, mu0)
    save_trace(out / "trace.jsonl", trace)
    save_measure(out / "measure.json", trace.measure)
    path_check = None
    if trace.tree is not None:
        save_tree(out / "tree.json", trace.tree, trace.measure)
        save_svg(out / "plan.svg",
                 render_tree_svg(trace.tree, trace.measure, cfg.alpha, cfg.domain))
        save_landscape_csv(out / "landscape.csv",
                           landscape(trace.tree, trace.measure, cfg.alpha))
        path_check = path_inequality_check(
            trace.state, trace.adjoint, trace.tree, trace.measure,
            cfg.c, cfg.alpha, tol=cfg.path_tol * cfg.growth.u_max)
    if trace.state is not None:
        phi = phi_field(trace.state, trace.adjoint)
        for name, field in (("state", trace.state), ("psi", trace.adjoint), ("phi", phi)):
            save_field_csv(out / f"{name}.csv", field)
            save_field_binary(out / f"{name}.bin", field)
    if trace.report is not None:
        save_report(out / "report.json", trace.report, trace.converged,
                    len(trace.steps) - 1, path_check)
    support = support_density_report(trace.measure, cfg.grid)
    save_json(out / "support.json", {"rows": support.as_dicts()})
    status = "converged" if trace.converged else "not converged"
    print(f"{status} after {len(trace.steps) - 1} iterations, "
          f"payoff {trace.final_payoff!r}, sup residual "
          f"{trace.steps[-1].sup_residual!r}")
    return 0


def _cmd_report(args, parsed: ParsedConfig, out: Path) -> int:
    cfg = parsed.run
    stored = out / "measure.json"
    mu = load_measure(stored) if stored.exists() else _resolve_measure(args, parsed)
    support = support_density_report(mu, cfg.grid)
    save_json(out / "support.json", {"rows": support.as_dicts()})
    print("scale occupied total fraction")
    for s, occ, tot, frac in support.rows:
        print(f"{s!r} {occ} {tot} {frac!r}")
    return 0


# ---------------------------------------------------------------------------
# verify


def _verify_checks(args, parsed: ParsedConfig, out: Path):
    """Yield (name, detail-or-None) pairs for every check whose inputs exist."""
    cfg = parsed.run
    mu = tree = stored_flux = None
    if (out / "measure.json").exists():
        mu = load_measure(out / "measure.json")
    if (out / "tree.json").exists() and mu is not None:
        tree, stored_flux = load_tree(out / "tree.json")

    if tree is not None:
        flux = compute_fluxes(tree, mu)
        gap = float(np.max(np.abs(flux.values[1:] - stored_flux[1:]))) if tree.n_nodes > 1 else 0.0
        tol = 1e-9 * max(1.0, total_mass(mu))
        yield ("flux conservation",
               None if gap <= tol else
               f"stored edge fluxes disagree with the measure by {gap!r}")

        cost = irrigation_cost(tree, mu, cfg.alpha)
        z = landscape(tree, mu, cfg.alpha)
        paid = sum(a.mass * z.at_atom(i) for i, a in enumerate(mu.atoms) if a.mass > 0.0)
        gap = abs(paid - cost)
        yield ("landscape identity",
               None if gap <= 1e-10 * max(1.0, cost) else
               f"sum of mass*Z misses the cost by {gap!r}")

        lb = cost_lower_bound(mu, cfg.alpha, cfg.domain.origin)
        yield ("cost lower bound",
               None if cost >= lb - 1e-9 * max(1.0, cost) else
               f"cost {cost!r} sits below the lower bound {lb!r}")

        rep = check_landscape_holder(tree, mu, cfg.alpha, rel_tol=1e-6)
        worst = max((v[2] for v in rep.violations), default=0.0)
        yield ("landscape Holder bound",
               None if rep.ok else
               f"{len(rep.violations)} node pairs exceed the bound, worst {worst!r}")

    u = psi = None
    if (out / "state.bin").exists():
        u = load_field_binary(out / "state.bin", cfg.domain)
        lo, hi = u.min(), u.max()
        ok = lo >= -1e-9 and hi <= cfg.growth.u_max + 1e-9
        yield ("state box bounds",
               None if ok else f"state range [{lo!r}, {hi!r}] leaves [0, u_max]")
    if (out / "psi.bin").exists() and u is not None:
        psi = load_field_binary(out / "psi.bin", cfg.domain)
        lam = growth_bound_lambda(cfg.growth, max(u.min(), 1e-12 * cfg.growth.u_max))
        cap = lam * cfg.growth.u_max + 1.0
        ok = psi.min() >= -1e-9 and psi.max() <= cap + 1e-9
        yield ("adjoint bounds",
               None if ok else f"adjoint range [{psi.min()!r}, {psi.max()!r}] leaves [0, {cap!r}]")

    if (out / "report.json").exists():
        rep = load_report(out / "report.json")
        gap = abs(rep["payoff"] - (rep["harvest"] - rep["c"] * rep["irrigation_cost"]))
        yield ("payoff identity",
               None if gap == 0.0 else
               f"recorded payoff differs from harvest - c*cost by {gap!r}")
        if u is not None and psi is not None and tree is not None:
            z = landscape(tree, mu, cfg.alpha)
            fresh = optimality_residual(u, psi, z, mu, rep["c"], rep["alpha"])
            stored = {r["atom"]: r["residual"] for r in rep["records"]}
            fresh_map = {r.atom: r.residual for r in fresh.records}
            if set(stored) != set(fresh_map):
                yield ("optimality residuals", "stored atom set differs from the measure")
            else:
                gap = max((abs(stored[a] - fresh_map[a]) for a in stored), default=0.0)
                tol = 1e-8 * max(1.0, cfg.growth.u_max)
                yield ("optimality residuals",
                       None if gap <= tol else
                       f"stored residuals drift from recomputation by {gap!r}")

    if (out / "trace.jsonl").exists():
        records = load_trace(out / "trace.jsonl")
        accepted = [r["payoff"] for r in records if r["accepted"]]
        bad = next((i for i in range(1, len(accepted))
                    if accepted[i] < accepted[i - 1]), None)
        yield ("trace monotonicity",
               None if bad is None else
               f"accepted payoff decreases at step {bad}: "
               f"{accepted[bad - 1]!r} -> {accepted[bad]!r}")


def _cmd_verify(args, parsed: ParsedConfig, out: Path) -> int:
    ran = 0
    failures = []
    for name, detail in _verify_checks(args, parsed, out):
        ran += 1
        if detail is None:
            print(f"ok: {name}")
        else:
            failures.append((name, detail))
            print(f"invariant violated: {name}: {detail}")
    if ran == 0:
        raise ValidationError(f"no artifacts found to verify in {out}")
    if failures:
        return 1
    print(f"all {ran} checks passed")
    return 0


_COMMANDS = {
    "irrigate": _cmd_irrigate,
    "solve": _cmd_solve,
    "adjoint": _cmd_adjoint,
    "optimize": _cmd_optimize,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be at least 1", file=sys.stderr)
            return 1
        _apply_threads(args.threads)
    try:
        out = Path(args.out)
        if args.command == "verify":
            if args.config is None and (out / "config.txt").exists():
                args.config = out / "config.txt"
            parsed = _load_setup(args)
        else:
            out.mkdir(parents=True, exist_ok=True)
            parsed = _load_setup(args)
        return _COMMANDS[args.command](args, parsed, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
