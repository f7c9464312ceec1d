"""Command-line entry point: ``proxgne {gen,oracle,run,compare,sweep,check}``.

Exit codes: 0 success, 2 assumption failure (or usage error), 3 no
convergence within the iteration budget.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import DegenerateDraw, Disconnected, Infeasible, NotStronglyMonotone
from .oracle import feasibility_probe, solve_cached
from .stepsizes import make_aggregative_plan, make_gne_plan, mu_Fa

EXIT_OK, EXIT_ASSUMPTION, EXIT_NOT_CONVERGED = 0, 2, 3
ASSUMPTION_ERRORS = (DegenerateDraw, Disconnected, Infeasible, NotStronglyMonotone)

KIND_ALIASES = {"nash-cournot": "nash_cournot", "nash_cournot": "nash_cournot", "pev": "pev",
                "quadratic-ne": "quadratic_ne", "quadratic_ne": "quadratic_ne", "file": "file"}


def _add_instance_flags(p, seed_required=False):
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--kind", choices=sorted(KIND_ALIASES))
    p.add_argument("--instance", dest="instance_path", help="instance JSON (implies --kind file)")
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--n", "--N", dest="N", type=int, help="number of agents")
    p.add_argument("--m", type=int, help="number of markets")
    p.add_argument("--nbar", type=int, help="charging intervals")
    p.add_argument("--capacity-scale", dest="capacity_scale", type=float)
    p.add_argument("--cache-dir", dest="cache_dir")


def _add_run_flags(p, multi_alg=False):
    if multi_alg:
        p.add_argument("--alg", action="append", choices=["pppa", "pppa-ne", "fb-ne", "pppa-agg"])
    else:
        p.add_argument("--alg", choices=["pppa", "pppa-ne", "fb-ne", "pppa-agg"])
    p.add_argument("--accel", choices=["none", "overrelax", "inertia", "alternated-inertia"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-safe", dest="eta_safe", type=float)
    p.add_argument("--alpha-scale", dest="alpha_scale", type=float)
    p.add_argument("--eps0", type=float, help="inner accuracy at k=1 (0 = exact)")
    p.add_argument("--eps-power", dest="eps_power", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--step-scale", dest="step_scale", type=float)
    p.add_argument("--unconstrained", action="store_true", default=None)
    p.add_argument("--no-track-v", dest="track_v", action="store_false", default=None)
    p.add_argument("--potential", dest="use_potential", action="store_true", default=None)
    p.add_argument("--timing", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxgne", description="Distributed GNE seeking experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit an instance JSON")
    _add_instance_flags(p, seed_required=True)
    p.add_argument("-o", "--out", help="output path (stdout if omitted)")

    p = sub.add_parser("oracle", help="solve the centralized reference problem")
    _add_instance_flags(p)
    p.add_argument("--oracle-tol", dest="oracle_tol", type=float)
    p.add_argument("-o", "--out")

    p = sub.add_parser("run", help="run one experiment")
    _add_instance_flags(p)
    _add_run_flags(p)
    p.add_argument("--csv", dest="out_csv")
    p.add_argument("--json", dest="out_json")

    p = sub.add_parser("compare", help="paired runs on a shared instance")
    _add_instance_flags(p)
    _add_run_flags(p, multi_alg=True)
    p.add_argument("--out-dir", help="write one CSV/JSON pair per algorithm")

    p = sub.add_parser("sweep", help="grid of runs or step-size tables")
    _add_instance_flags(p)
    _add_run_flags(p)
    p.add_argument("--grid", action="append", default=[],
                   help="FIELD=v1,v2,... (repeatable); e.g. N=10,20,40 or gamma=1.3,1.6")
    p.add_argument("--table", choices=["runs", "step-bounds"], default="runs")

    p = sub.add_parser("check", help="run the assumption checks on an instance")
    _add_instance_flags(p)
    p.add_argument("--alpha-scale", dest="alpha_scale", type=float)
    return parser


def config_from_args(args) -> ex.RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    names = {f.name for f in fields(ex.RunConfig)}
    for name in names:
        v = getattr(args, name, None)
        if v is not None and not (name == "alg" and isinstance(v, list)):
            base[name] = v
    if getattr(args, "kind", None):
        base["kind"] = KIND_ALIASES[args.kind]
    if getattr(args, "instance_path", None):
        base["kind"] = "file"
    if base.get("kind") == "pev":
        base.setdefault("alg", "pppa-agg")
        if getattr(args, "N", None) is None:
            base.setdefault("N", 50)
    return ex.RunConfig.from_dict(base)


def _print_table(rows, out=None):
    if not rows:
        return
    w = csv.DictWriter(out or sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_gen(args):
    cfg = config_from_args(args)
    inst = ex.build_instance(cfg)
    text = json.dumps(inst.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_oracle(args):
    cfg = config_from_args(args)
    inst = ex.build_instance(cfg)
    sol = solve_cached(inst.game, cfg.oracle_tol, cfg.cache_dir)
    text = json.dumps(sol.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_run(args):
    cfg = config_from_args(args)
    res = ex.run_experiment(cfg)
    if not cfg.out_csv:
        sys.stdout.write(res.csv_text())
    s = res.summary
    print(f"# iterations={s['iterations']} converged={s['converged']} "
          f"dist_x={s['final'].get('dist_x')}", file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_compare(args):
    cfg = config_from_args(args)
    algs = args.alg or ["pppa", "fb-ne"]
    if any(a in ("pppa-ne", "fb-ne") for a in algs):
        cfg.unconstrained = True
    inst = ex.build_instance(cfg)
    rows = []
    all_ok = True
    for a in algs:
        c = ex.RunConfig(**{**asdict(cfg), "alg": a})
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            c.out_csv = str(Path(args.out_dir) / f"{a}.csv")
            c.out_json = str(Path(args.out_dir) / f"{a}.json")
        res = ex.run_experiment(c, instance=inst)
        all_ok &= res.converged
        rows.append({"alg": a, "iterations": res.summary["iterations"], "converged": res.converged,
                     **{f"iters_to_{k}": v for k, v in res.summary["iterations_to"].items()}})
    _print_table(rows)
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


def _parse_grid(specs):
    types = {f.name: f.type for f in fields(ex.RunConfig)}
    grid = {}
    for spec in specs:
        key, _, vals = spec.partition("=")
        if key not in types or not vals:
            raise SystemExit(f"bad --grid entry {spec!r}")
        conv = int if types[key] in ("int", int) else (float if types[key] in ("float", float) else str)
        grid[key] = [conv(v) for v in vals.split(",")]
    return grid


def cmd_sweep(args):
    cfg = config_from_args(args)
    grid = _parse_grid(args.grid)
    if args.table == "step-bounds":
        Ns = grid.get("N", [10, 20, 40])
        _print_table(ex.step_bound_table(Ns, seed=cfg.seed, m=cfg.m))
        return EXIT_OK
    rows = ex.sweep(cfg, grid)
    _print_table(rows)
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def check_instance(inst: ex.Instance, alpha_scale: float = 1.0) -> list[tuple[str, bool, str]]:
    """Assumption checks; returns (name, ok, detail) triples."""
    game, graph = inst.game, inst.graph
    out = []
    lam2 = float(graph._lambda2)
    out.append(("graph connected", lam2 > 1e-10, f"lambda2={lam2:.6g}"))
    try:
        c = game.constants()
        out.append(("strongly monotone", c.mu > 0, f"mu={c.mu:.6g} theta0={c.theta0:.6g} theta={c.theta:.6g}"))
    except NotStronglyMonotone as exc:
        out.append(("strongly monotone", False, str(exc)))
        return out
    try:
        feasibility_probe(game)
        out.append(("feasible set nonempty", True, "Dykstra probe"))
    except Infeasible as exc:
        out.append(("feasible set nonempty", False, str(exc)))
    if isinstance(game, ex.QuadraticAggregativeGame):
        plan = make_aggregative_plan(game, graph, alpha_scale=alpha_scale)
        out.append(("alpha within bound", plan.alpha <= plan.alpha_bound * (1 + 1e-12),
                    f"alpha={plan.alpha:.6g} bound={plan.alpha_bound:.6g}"))
    else:
        plan = make_gne_plan(game, graph, alpha_scale=alpha_scale)
        mf = mu_Fa(plan.alpha, c.mu, c.theta0, c.theta, lam2, game.num_agents)
        out.append(("restricted strong monotonicity", mf >= -1e-12, f"mu_Fa={mf:.6g}"))
    out.append(("step sizes positive", bool(np.all(plan.tau > 0) and np.all(plan.delta > 0)), ""))
    return out


def cmd_check(args):
    cfg = config_from_args(args)
    inst = ex.build_instance(cfg)
    results = check_instance(inst, cfg.alpha_scale)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ASSUMPTION


COMMANDS = {"gen": cmd_gen, "oracle": cmd_oracle, "run": cmd_run, "compare": cmd_compare,
            "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ASSUMPTION_ERRORS as exc:
        print(f"assumption check failed: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
