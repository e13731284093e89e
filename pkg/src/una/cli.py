"""Command-line front door: scenario runs, benchmarks, stage-isolated tools.

Exit codes: 0 clean, 1 simulation fault, 2 validation or usage error.
Every subcommand is deterministic under a fixed --seed; artifact files for
the same seed are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

from .arena import NoiseConfig, SimulationFault
from .central.benchmark import run_placement_benchmark, write_cdf_csv
from .central.service import CentralService, audit_network_separation
from .coverage import CoverageInstance, solve_central
from .geometry import Pose2D
from .mesh import MeshNetwork
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .sim import SimulationLoop
from . import ppm
from .vision import Calibration, locate_tags

DEFAULT_PORT = 8470


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("una") / "scenarios" / "case_study.json"))


def _load(path: str, seed: Optional[int]) -> Scenario:
    scenario = load_scenario(path, default_seed=0 if seed is None else seed)
    if seed is not None and scenario.seed != seed:
        # the flag wins over the file
        from dataclasses import replace
        scenario = replace(scenario, seed=seed)
    return scenario


def _write_run_artifacts(out: Path, loop: SimulationLoop, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(loop.metrics_header())
        for row in loop.metrics_rows():
            writer.writerow(row)
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for drone_id in loop.drone_ids:
        with open(traces / f"{drone_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(loop.station.trace_header())
            for row in loop.station.traces[drone_id]:
                writer.writerow(["" if v is None else v for v in row])
    loop.mesh.write_trace_csv(out / "mesh_trace.csv")


def _paced_run(loop: SimulationLoop, ticks: Optional[int]) -> dict:
    """Step in wall-clock time so connected clients see a live system."""
    tick_s = loop.scenario.arena.tick
    budget = loop.scenario.stop.ticks if ticks is None else ticks
    next_at = time.monotonic()
    try:
        for _ in range(budget):
            loop.step()
            next_at += tick_s
            delay = next_at - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    except KeyboardInterrupt:
        pass
    return loop.summary()


def cmd_run(args) -> int:
    try:
        scenario = _load(args.scenario, args.seed)
    except ScenarioError as exc:
        print(exc.format(args.scenario), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.ticks is not None:
        from dataclasses import replace
        scenario = replace(scenario, stop=replace(scenario.stop,
                                                  ticks=args.ticks))
    service = None
    if args.serve:
        static = Path(args.ui_dir) if args.ui_dir else None
        service = CentralService(port=args.port, static_dir=static)
        print(f"serving on port {service.port}", file=sys.stderr)
    loop = SimulationLoop(scenario, service=service,
                          metrics_limit=100_000 if args.serve else None)
    code = 0
    try:
        if args.serve:
            summary = _paced_run(loop, args.ticks)
        else:
            summary = loop.run()
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        summary = loop.summary()
        summary["fault"] = str(exc)
        code = 1
    finally:
        if service is not None:
            problems = audit_network_separation(loop.mesh, service)
            for problem in problems:
                print(f"audit: {problem}", file=sys.stderr)
            service.stop()
    if summary.get("faults") or summary.get("fault"):
        code = code or 1
    if args.out:
        _write_run_artifacts(Path(args.out), loop, summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return code


def cmd_serve(args) -> int:
    args.serve = True
    if args.scenario is None:
        args.scenario = str(bundled_scenario_path())
    if args.ticks is None:
        args.ticks = 10_000_000  # effectively until interrupted
    return cmd_run(args)


def cmd_bench_placement(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return 2
    noise = None
    if args.noise is not None:
        if args.noise < 0:
            print("error: --noise must be >= 0", file=sys.stderr)
            return 2
        base = NoiseConfig()
        scale = 0.0 if base.compass_std == 0 else args.noise / base.compass_std
        noise = NoiseConfig(compass_std=args.noise,
                            actuation_std=base.actuation_std * scale,
                            render_std=base.render_std * scale)
    goal = None
    if args.goal:
        try:
            x, y, *rest = (float(v) for v in args.goal.split(","))
        except ValueError:
            print("error: --goal expects x,y[,yaw]", file=sys.stderr)
            return 2
        goal = Pose2D(x, y, rest[0] if rest else 0.0)
    record = run_placement_benchmark(trials=args.trials, goal=goal,
                                     noise=noise, seed=args.seed or 0)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    write_cdf_csv(record, out / "placement_cdf.csv")
    doc = {
        "scenario_id": record.scenario_id,
        "goal": list(record.goal),
        "seed": record.seed,
        "config_digest": record.config_digest,
        "trials": [{
            "trial": t.trial, "start": list(t.start),
            "final_fix": None if t.final_fix is None else list(t.final_fix),
            "error_m": t.error_m, "ticks": t.ticks, "timed_out": t.timed_out,
        } for t in record.trials],
    }
    with open(out / "placement_record.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    timeouts = sum(t.timed_out for t in record.trials)
    errors = record.errors()
    print(json.dumps({
        "trials": len(record.trials), "timeouts": timeouts,
        "max_error_m": max(errors) if errors else None,
        "out": str(out / "placement_cdf.csv"),
    }, indent=2))
    return 0


def cmd_vision(args) -> int:
    try:
        frame = ppm.decode(Path(args.frame).read_bytes())
        cal = Calibration.from_json(Path(args.cal).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = locate_tags(frame, cal, timestamp=args.time)
    doc = {
        "timestamp": args.time,
        "detections": [{
            "tag": d.tag,
            "pixel": [d.pixel_centroid[0], d.pixel_centroid[1]],
            "world": [d.world_position[0], d.world_position[1]],
            "area": d.area,
        } for d in sorted(result.detections, key=lambda d: d.tag)],
        "missing": sorted(result.missing),
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_cover(args) -> int:
    try:
        instance = CoverageInstance.from_json(Path(args.instance).read_text())
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    directive = solve_central(instance)
    print(directive.to_json())
    return 0


def cmd_mesh(args) -> int:
    try:
        scenario = _load(args.scenario, args.seed)
    except ScenarioError as exc:
        print(exc.format(args.scenario), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    positions = {d.id: (d.pose.x, d.pose.y) for d in scenario.drones}
    mesh = MeshNetwork(sorted(positions), link=scenario.link,
                       aodv=scenario.aodv, positions=positions)
    nodes = mesh.node_ids()
    handles = [(a, b, mesh.send_data(a, b, f"probe-{a}-{b}"))
               for a in nodes for b in nodes if a != b]
    ticks = args.ticks if args.ticks is not None else 200
    for _ in range(ticks):
        mesh.tick()
    routes = {}
    for a, b, handle in handles:
        table = mesh.route_table(a)
        entry = table.get(b)
        routes[f"{a}->{b}"] = {
            "status": handle.status.name,
            "next_hop": entry.next_hop if entry else None,
            "hop_count": entry.hop_count if entry else None,
        }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        mesh.write_trace_csv(out / "mesh_trace.csv")
    print(json.dumps({"nodes": nodes, "routes": routes}, indent=2,
                     sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="una", description="simulated multi-drone coverage testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("--ticks", type=int, default=None,
                       help="override the tick budget")

    run_p = sub.add_parser("run", help="run a scenario end to end")
    common(run_p)
    run_p.add_argument("--serve", action="store_true",
                       help="open the control service while running")
    run_p.add_argument("--port", type=int,
                       default=int(os.environ.get("UNA_PORT", DEFAULT_PORT)))
    run_p.add_argument("--ui-dir", default=None,
                       help="static files served at / (admin UI build)")
    run_p.add_argument("--headless", action="store_true", default=True,
                       help="no display output (default)")
    run_p.set_defaults(func=cmd_run)

    serve_p = sub.add_parser("serve", help="serve the bundled scenario live")
    common(serve_p, scenario_required=False)
    serve_p.add_argument("--port", type=int,
                         default=int(os.environ.get("UNA_PORT", DEFAULT_PORT)))
    serve_p.add_argument("--ui-dir", default=None)
    serve_p.add_argument("--headless", action="store_true", default=True)
    serve_p.set_defaults(func=cmd_serve)

    bench_p = sub.add_parser("bench-placement",
                             help="placement-error benchmark and CDF")
    bench_p.add_argument("--trials", type=int, default=14)
    bench_p.add_argument("--noise", type=float, default=None,
                         help="compass noise std in radians; scales the rest")
    bench_p.add_argument("--goal", default=None, help="x,y[,yaw]")
    bench_p.add_argument("--seed", type=int, default=None)
    bench_p.add_argument("--out", default=None)
    bench_p.set_defaults(func=cmd_bench_placement)

    vision_p = sub.add_parser("vision", help="run detection on one frame")
    vision_p.add_argument("--frame", required=True, help="PPM (P6) image")
    vision_p.add_argument("--cal", required=True, help="calibration JSON")
    vision_p.add_argument("--time", type=float, default=0.0)
    vision_p.set_defaults(func=cmd_vision)

    cover_p = sub.add_parser("cover", help="solve one coverage instance")
    cover_p.add_argument("--instance", required=True,
                         help="coverage instance JSON")
    cover_p.set_defaults(func=cmd_cover)

    mesh_p = sub.add_parser("mesh", help="probe mesh routes for a scenario")
    common(mesh_p)
    mesh_p.set_defaults(func=cmd_mesh)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
