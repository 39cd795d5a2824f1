"""Command-line entry point: run scenarios, execute experiment plans,
replay traces, inspect fields, and serve the live gateway."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engine as eng
from . import experiments as xp
from .scenarios import Scenario, list_builtin, load_builtin, parse_scenario
from .topology import FieldParseError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TASK_FAILED = 2


def _load_scenario(arg: str) -> Scenario:
    path = Path(arg)
    if path.exists():
        return parse_scenario(path.read_text(), name=path.stem)
    if arg in list_builtin():
        return load_builtin(arg)
    raise FileNotFoundError(f"no scenario file or builtin named {arg!r}")


def _common_overrides(args) -> dict:
    overrides: dict = {}
    if args.loss is not None:
        overrides["loss_prob"] = args.loss
    if getattr(args, "reservation", None):
        overrides["reservation_mode"] = args.reservation
    return overrides


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args.scenario)
    except (FileNotFoundError, FieldParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else int(scenario.params.get("seed", 0))
    result = eng.run(scenario, seed, mode_override=args.mode,
                     overrides=_common_overrides(args))
    out = Path(args.out) if args.out else Path(f"runs/{scenario.name}-{seed}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(eng.trace_to_jsonl(result.trace))
    mode = args.mode or "+".join(sorted({r.mode for r in scenario.robots})) or "none"
    row = result.metrics_row(scenario.name, mode,
                             float(scenario.params.get("p", 0)),
                             float(scenario.params.get("q", 0)))
    if args.format == "json":
        (out / "metrics.json").write_text(json.dumps(row, sort_keys=True, indent=2) + "\n")
    else:
        (out / "metrics.csv").write_text(xp.rows_to_csv([row]))
    if not args.quiet:
        state = "completed" if result.completed else "failed"
        print(f"{scenario.name} seed={seed}: {state}, steps={result.total_steps}, "
              f"sim_time={result.sim_time_ms} ms -> {out}")
    if result.violations:
        print(f"SAFETY VIOLATION: {result.violations}", file=sys.stderr)
        return EXIT_TASK_FAILED
    return EXIT_OK if result.completed else EXIT_TASK_FAILED


def cmd_plan(args) -> int:
    path = Path(args.plan)
    if not path.exists():
        print(f"error: no plan file {args.plan!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        plan = xp.parse_plan(path.read_text())
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    progress = None
    if not args.quiet:
        def progress(row):
            print(f"  {row['scenario']} q={row['q']:g} {row['mode']} "
                  f"seed={row['seed']}: steps={row['steps']} "
                  f"completed={row['completed']}")
    table = xp.run_plan(plan, progress=progress)
    out = Path(args.out) if args.out else Path("plan-out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(xp.rows_to_csv(table.rows))
    (out / "report.md").write_text(xp.render_report(table))
    if not args.quiet:
        print(f"wrote {out / 'runs.csv'} and {out / 'report.md'}")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        print(f"error: no trace file {args.trace!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        trace = eng.trace_from_jsonl(path.read_text())
        snapshot = eng.replay(trace, args.index if args.index >= 0
                              else len(trace) + args.index)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    json.dump(snapshot, sys.stdout, sort_keys=True, indent=2)
    print()
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        scenario = _load_scenario(args.scenario)
    except (FileNotFoundError, FieldParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    grid, ann = scenario.build_grid()
    print(f"scenario: {scenario.name}")
    print(f"cells: {len(grid)}  components: {len(grid.components())}")
    if ann.start is not None and ann.goal is not None:
        a, b = grid.cell_at(ann.start), grid.cell_at(ann.goal)
        print(f"S={ann.start} G={ann.goal} bfs={grid.bfs_distance(a, b)}")
    if ann.fail_cells:
        print(f"fail set: {ann.fail_cells}")
    for spec in scenario.robots:
        print(f"robot {spec.rid}: mode={spec.mode} start={spec.start} "
              f"goals={spec.goals}")
    print()
    for row in grid.to_rows(ann):
        print(row)
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        scenario = _load_scenario(args.scenario)
    except (FileNotFoundError, FieldParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        from .gateway import serve
    except ImportError as exc:
        print(f"error: gateway extras not installed ({exc}); "
              "pip install cellnav[serve]", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else int(scenario.params.get("seed", 0))
    try:
        serve(scenario, seed, host=args.host, port=args.port, speed=args.speed,
              snapshot_ms=args.snapshot_ms, overrides=_common_overrides(args),
              static_dir=args.static)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellnav",
        description="Cell-grid navigation simulator: self-stabilizing routing "
                    "plus reservation-guided robots.")
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run one scenario; write trace and metrics")
    run_p.add_argument("scenario", help="field/scenario file or builtin name")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--mode", choices=["afada", "selfnav"], default=None,
                       help="override every robot's mode")
    run_p.add_argument("--loss", type=float, default=None)
    run_p.add_argument("--reservation", choices=["single", "multi"], default=None)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--format", choices=["csv", "json"], default="csv")
    run_p.add_argument("--quiet", action="store_true")
    run_p.set_defaults(func=cmd_run)

    plan_p = sub.add_parser("plan", help="run an experiment plan; write CSV + report")
    plan_p.add_argument("plan")
    plan_p.add_argument("--out", default=None)
    plan_p.add_argument("--quiet", action="store_true")
    plan_p.set_defaults(func=cmd_plan)

    replay_p = sub.add_parser("replay", help="reconstruct state at a trace index")
    replay_p.add_argument("trace")
    replay_p.add_argument("--index", type=int, default=-1)
    replay_p.set_defaults(func=cmd_replay)

    inspect_p = sub.add_parser("inspect", help="print a scenario summary and layout")
    inspect_p.add_argument("scenario")
    inspect_p.set_defaults(func=cmd_inspect)

    serve_p = sub.add_parser("serve", help="serve the live gateway for the web UI")
    serve_p.add_argument("scenario")
    serve_p.add_argument("--seed", type=int, default=None)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8700)
    serve_p.add_argument("--speed", type=float, default=1.0,
                         help="simulated ms per real ms; 0 = paused")
    serve_p.add_argument("--snapshot-ms", type=int, default=200)
    serve_p.add_argument("--loss", type=float, default=None)
    serve_p.add_argument("--static", default=None,
                         help="directory with the built web UI to serve at /")
    serve_p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
