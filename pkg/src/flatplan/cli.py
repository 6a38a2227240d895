"""Command-line front end: plan, replan, benchmark, validate, edt-dump.

Exit codes: 0 success, 1 bad input, 2 infeasible endpoints, 3 no solution,
4 incompatible tree dump, 5 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import jsonschema
import numpy as np

from . import scenario as scn
from .crane import INPUT_NAMES, STATE_NAMES, flat_inputs_batch
from .errors import IncompatibleDump, InfeasibleEndpoints, NoSolutionFound
from .lqmt import FlatState, SteeringSolution, SteeringWeights, solution_at
from .planner import (
    PlannerConfig,
    PlanningContext,
    PlanResult,
    effective_workers,
    load_tree,
    plan,
    replan,
    save_tree,
)
from .sim import FlatTrajectory, validate_flat_trajectory
from .world import edt, rasterize

EXIT_OK, EXIT_INPUT, EXIT_ENDPOINTS, EXIT_NO_SOLUTION, EXIT_DUMP, EXIT_VALIDATION = range(6)

FLAT_NAMES = [f"{q}_{a}" for q in ("p", "v", "a", "j") for a in "xyz"]
TRAJECTORY_COLUMNS = ["t"] + FLAT_NAMES + list(STATE_NAMES) + list(INPUT_NAMES)
TABLE_COLUMNS = ["seed", "t_plan", "t_star", "J_star", "tree_size", "success"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# artifacts


def trajectory_table(edges: Sequence[SteeringSolution], scenario: scn.Scenario, step: float = 0.01) -> np.ndarray:
    """Rows of TRAJECTORY_COLUMNS sampled every ``step`` seconds (end included)."""
    traj = FlatTrajectory(edges)
    n = int(np.ceil(traj.duration / step - 1e-9)) if traj.duration > 0 else 0
    t = np.append(step * np.arange(n), traj.duration) if n else np.zeros(1)
    F = traj.evaluate(t)
    u, _, Z, _ = flat_inputs_batch(F, scenario.crane)
    return np.column_stack([t, F[:, :12], Z, u])


def write_trajectory_csv(path: Path, table: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in table:
            w.writerow([_fmt(v) for v in row])


def edges_to_dict(edges: Sequence[SteeringSolution]) -> Dict[str, Any]:
    return {
        "weights": list(edges[0].weights.r) if edges else [],
        "edges": [{"x0": e.x0.vec.tolist(), "x1": e.x1.vec.tolist(), "dt": e.dt_star} for e in edges],
    }


def edges_from_dict(d: Dict[str, Any]) -> List[SteeringSolution]:
    w = SteeringWeights(tuple(d["weights"]))
    return [solution_at(e["x0"], e["x1"], e["dt"], w) for e in d["edges"]]


def _stats_payload(res: PlanResult, config: PlannerConfig) -> Dict[str, Any]:
    s = res.stats
    keep = ("samples", "rejected_informed", "rejected_unreachable", "inserted", "rewires", "pruned", "edge_checks",
            "audits", "audit_failures", "first_solution_iteration", "connected_without_sampling")
    out = {k: s[k] for k in keep if k in s}
    out.update(
        J_star=res.total_cost,
        t_star=res.travel_time,
        tree_size=res.tree.size,
        edges=len(res.trajectory),
        seed=config.seed,
        workers=effective_workers(config),
        max_samples=config.max_samples,
        t_plan=config.t_plan,
        cost_log=[[int(i), float(c)] for i, c in s.get("cost_log", [])],
    )
    return out


def _timing_payload(stats: Dict[str, Any]) -> Dict[str, Any]:
    out = {"wall_time": stats.get("wall_time")}
    for k in ("cost_log_time", "replan_connect_time"):
        if k in stats:
            out[k] = stats[k]
    return out


def write_artifacts(out_dir: Path, res: PlanResult, scenario: scn.Scenario, config: PlannerConfig,
                    tree_out: Optional[Path], step: float, extra_timing: Optional[Dict[str, Any]] = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out_dir / "trajectory.csv", trajectory_table(res.trajectory, scenario, step))
    _write_json(out_dir / "trajectory.json", edges_to_dict(res.trajectory))
    _write_json(out_dir / "stats.json", _stats_payload(res, config))
    timing = _timing_payload(res.stats)
    timing.update(extra_timing or {})
    _write_json(out_dir / "timing.json", timing)
    save_tree(res.tree, tree_out or out_dir / "tree.json")


# ---------------------------------------------------------------------------
# commands


def _config(args, **overrides) -> PlannerConfig:
    kw = dict(
        t_plan=args.t_plan,
        seed=args.seed,
        workers=args.workers,
        max_samples=args.max_samples,
        audit_every=args.audit_every,
        prune=not args.no_prune,
        informed_prune=args.prune_rule == "informed",
    )
    kw.update(overrides)
    return PlannerConfig(**kw)


def cmd_plan(args) -> int:
    sc = scn.load(args.scenario)
    cfg = _config(args)
    out = Path(args.out_dir)
    try:
        res = plan(sc, cfg)
    except InfeasibleEndpoints as exc:
        print(f"infeasible endpoints: {exc}", file=sys.stderr)
        return EXIT_ENDPOINTS
    except NoSolutionFound as exc:
        out.mkdir(parents=True, exist_ok=True)
        save_tree(exc.tree, Path(args.tree_out) if args.tree_out else out / "tree.json")
        stats = {k: v for k, v in exc.stats.items() if k not in ("cost_log_time", "wall_time")}
        _write_json(out / "stats.json", stats)
        print("no solution within the planning budget", file=sys.stderr)
        return EXIT_NO_SOLUTION
    write_artifacts(out, res, sc, cfg, Path(args.tree_out) if args.tree_out else None, args.output_step)
    print(f"J*={res.total_cost:.4f} t*={res.travel_time:.3f}s |T|={res.tree.size} wall={res.stats['wall_time']:.2f}s")
    return EXIT_OK


def _random_targets(sc: scn.Scenario, ctx: PlanningContext, n: int, dev: float, seed: int) -> List[FlatState]:
    """Rest targets within +-dev per axis of the scenario target that are feasible."""
    rng = np.random.default_rng(seed)
    out: List[FlatState] = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 1000 * max(n, 1):
            raise InfeasibleEndpoints("could not draw enough feasible replanning targets")
        p = sc.target.p + rng.uniform(-dev, dev, 3)
        x = FlatState.rest(p)
        if sc.workspace.contains(p)[0] and ctx.state_ok(x):
            out.append(x)
    return out


def cmd_replan(args) -> int:
    sc = scn.load(args.scenario)
    try:
        tree = load_tree(args.tree_in)
    except IncompatibleDump as exc:
        print(f"incompatible tree dump: {exc}", file=sys.stderr)
        return EXIT_DUMP
    if tree.root_state != sc.start or tuple(tree.weights.r) != tuple(sc.weights.r):
        print("incompatible tree dump: root state or weights differ from the scenario", file=sys.stderr)
        return EXIT_DUMP
    cfg = _config(args, replan_budget=args.replan_budget)
    ctx = PlanningContext(sc, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.batch:
        targets = _random_targets(sc, ctx, args.batch, args.max_deviation, args.seed)
        rows = []
        for k, x in enumerate(targets):
            t0 = time.perf_counter()
            try:
                res = replan(tree, x, ctx)
                ok, direct = True, bool(res.stats["connected_without_sampling"])
                J, ts, tc = res.total_cost, res.travel_time, res.stats["replan_connect_time"]
            except NoSolutionFound as exc:
                ok, direct, J, ts = False, False, float("nan"), float("nan")
                tc = exc.stats.get("replan_connect_time", float("nan"))
            rows.append([k, *x.p.tolist(), ok, direct, tc, time.perf_counter() - t0, J, ts])
        with open(out / "replan_batch.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "target_x", "target_y", "target_z", "success", "connected_without_sampling",
                        "connect_time", "wall_time", "J_star", "t_star"])
            for r in rows:
                w.writerow([r[0]] + [_fmt(v) for v in r[1:4]] + [int(r[4]), int(r[5])] + [_fmt(v) for v in r[6:]])
        n_ok = sum(r[4] for r in rows)
        print(f"{n_ok}/{len(rows)} targets replanned; mean connect time "
              f"{np.nanmean([r[6] for r in rows]) * 1e3:.1f} ms")
        return EXIT_OK if n_ok == len(rows) else EXIT_NO_SOLUTION
    if args.new_target is None:
        print("replan needs --new-target or --batch", file=sys.stderr)
        return EXIT_INPUT
    target = FlatState.rest(args.new_target)
    try:
        res = replan(tree, target, ctx)
    except InfeasibleEndpoints as exc:
        print(f"infeasible endpoints: {exc}", file=sys.stderr)
        return EXIT_ENDPOINTS
    except NoSolutionFound as exc:
        save_tree(exc.tree, Path(args.tree_out) if args.tree_out else out / "tree.json")
        print("no solution within the planning budget", file=sys.stderr)
        return EXIT_NO_SOLUTION
    write_artifacts(out, res, sc, cfg, Path(args.tree_out) if args.tree_out else None, args.output_step,
                    {"replan_wall_time": res.stats["wall_time"]})
    print(f"J*={res.total_cost:.4f} t*={res.travel_time:.3f}s connect={res.stats['replan_connect_time'] * 1e3:.1f}ms")
    return EXIT_OK


def benchmark_rows(sc: scn.Scenario, budgets: Sequence[float], seeds: Sequence[int], base: PlannerConfig) -> List[list]:
    rows = []
    for seed in seeds:
        for b in budgets:
            cfg = PlannerConfig(**{**base.__dict__, "t_plan": b, "seed": seed})
            try:
                res = plan(sc, cfg)
                rows.append([seed, b, res.travel_time, res.total_cost, res.tree.size, 1])
            except NoSolutionFound as exc:
                rows.append([seed, b, float("nan"), float("inf"), exc.tree.size, 0])
    return rows


def cmd_benchmark(args) -> int:
    sc = scn.load(args.scenario)
    budgets = [b * args.scale for b in args.budgets]
    base = _config(args, t_plan=max(budgets))
    try:
        rows = benchmark_rows(sc, budgets, args.seeds, base)
    except InfeasibleEndpoints as exc:
        print(f"infeasible endpoints: {exc}", file=sys.stderr)
        return EXIT_ENDPOINTS
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "benchmark.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([r[0], _fmt(r[1]), _fmt(r[2]), _fmt(r[3]), r[4], r[5]])
    for r in rows:
        print(f"seed={r[0]} t_plan={r[1]:g}s t*={r[2]:.2f} J*={r[3]:.2f} |T|={r[4]}")
    return EXIT_OK if all(r[5] for r in rows) else EXIT_NO_SOLUTION


def cmd_validate(args) -> int:
    sc = scn.load(args.scenario)
    edges = edges_from_dict(json.loads(Path(args.trajectory).read_text(encoding="utf-8")))
    res = validate_flat_trajectory(edges, sc.crane, args.dt)
    if args.out:
        res.to_csv(args.out)
    print(f"max_state_error={res.max_state_error:.3e}")
    return EXIT_OK if res.max_state_error < args.validate_tol else EXIT_VALIDATION


def cmd_edt_dump(args) -> int:
    sc = scn.load(args.scenario)
    grid = rasterize(sc.obstacles, sc.workspace, sc.resolution)
    field = edt(grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, squared=field.squared, distance=field.distance, lo=field.lo, hi=field.hi,
                        resolution=field.resolution)
    if args.slice is not None:
        axis, index = args.slice
        plane = np.take(field.squared, int(index), axis=int(axis))
        np.savetxt(out.with_suffix(".slice.csv"), plane, fmt="%d", delimiter=",")
    print(f"wrote {out} dims={field.dims} occupied={int(grid.occupancy.sum())}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _planner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-plan", type=float, default=30.0, help="wall-clock planning budget in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="independent trees (capped by FLATPLAN_THREADS)")
    p.add_argument("--max-samples", type=int, default=None,
                   help="cap on drawn samples; makes a run reproducible bit for bit")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--tree-out", default=None)
    p.add_argument("--output-step", type=float, default=0.01, help="trajectory CSV time step in seconds")
    p.add_argument("--audit-every", type=int, default=0, help="tree audit period in iterations (0 = off)")
    p.add_argument("--no-prune", action="store_true", help="disable masking and deletion")
    p.add_argument("--prune-rule", choices=("informed", "plain"), default="plain",
                   help="mask by cost-to-come plus cost-to-go (informed) or by cost-to-come alone (plain)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flatplan", description="Flat-informed RRT* trajectory planning for a 3D gantry crane.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("plan", help="plan a trajectory for a scenario file")
    p.add_argument("scenario")
    _planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("replan", help="reuse a tree dump for new targets")
    p.add_argument("scenario")
    p.add_argument("--tree-in", required=True)
    p.add_argument("--new-target", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--batch", type=int, default=0, help="number of random targets around the scenario target")
    p.add_argument("--max-deviation", type=float, default=0.3, help="per-axis deviation of random targets, m")
    p.add_argument("--replan-budget", type=float, default=1.0, help="refinement time after a connection, s")
    _planner_flags(p)
    p.set_defaults(func=cmd_replan)

    p = sub.add_parser("benchmark", help="plan at several budgets and seeds")
    p.add_argument("scenario")
    p.add_argument("--budgets", type=float, nargs="+", default=[30.0, 50.0, 100.0, 200.0])
    p.add_argument("--scale", type=float, default=1.0, help="multiplier applied to every budget")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    _planner_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate", help="forward-simulate an emitted trajectory")
    p.add_argument("scenario")
    p.add_argument("trajectory", help="trajectory.json written by plan or replan")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--validate-tol", type=float, default=1e-4)
    p.add_argument("--out", default=None, help="optional simulation CSV")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("edt-dump", help="write the distance field of a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default="out/edt.npz")
    p.add_argument("--slice", type=int, nargs=2, metavar=("AXIS", "INDEX"), default=None,
                   help="also write one squared-distance plane as CSV")
    p.set_defaults(func=cmd_edt_dump)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
