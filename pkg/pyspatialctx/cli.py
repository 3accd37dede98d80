#
# Copyright (C) 2025 Kris Kirby
#
# This file is part of PySpatialCtx.
#
# PySpatialCtx is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

"""
Command-line driver. Every subcommand works on a context bundle directory.

Exit codes: 0 success, 1 domain or I/O error (``<ErrorName>: <message>`` on
stderr), 2 usage error. Results go to stdout, as JSON with ``--json``.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import IcpParams, NavigationConfig, OptimizerConfig, RenderConfig
from .context import LabeledPointCloud, SpatialContext, require_valid, resolve_instance, validate
from .demo import DEMOS, write_demo
from .ergonomics import optimize_poses
from .errors import SessionAborted, SpatialContextError
from .layout import plan_layout, write_layout_json
from .navigation import build_occupancy, instance_anchor, plan_path
from .projection import canonical_cameras, export_views
from .protocol import (HttpEndpoint, ScriptedStub, apply_edits, parse_edit_commands, parse_hypergraph,
                       parse_portrait, run_session, serialize_readout)
from .scene_io import load_bundle, load_cameras, load_cloud, load_meshes, save_bundle

logger = logging.getLogger(__name__)


def _read(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _save(args, context: SpatialContext):
    out = args.output or args.bundle
    save_bundle(context, out)
    return out


# --- Subcommands ---

def cmd_init(args):
    cloud = load_cloud(args.cloud)
    cloud = LabeledPointCloud(cloud.positions, cloud.colors, cloud.labels, args.unit_scale)
    graph = parse_hypergraph(_read(args.graph))
    portrait = parse_portrait(_read(args.portrait))
    context = require_valid(SpatialContext(portrait, cloud, graph))
    save_bundle(context, args.output)
    _emit(args, {"bundle": args.output, "points": len(cloud), "nodes": len(graph.nodes),
                 "edges": len(graph.edges)},
          f"wrote {args.output}: {len(cloud)} points, {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return 0


def cmd_validate(args):
    report = validate(load_bundle(args.bundle))
    _emit(args, {"ok": report.ok, "findings": [{"kind": f.kind, "message": f.message}
                                                for f in report.findings]}, str(report))
    return 0 if report.ok else 1


def cmd_project(args):
    context = load_bundle(args.bundle)
    render = RenderConfig(width=args.resolution, height=args.resolution, splat_radius=args.splat_radius)
    cameras = []
    if args.views in ("canonical", "all"):
        cameras.extend(canonical_cameras(context.cloud, render.width, render.height))
    if args.views in ("input", "all"):
        cameras.extend(load_cameras(args.bundle))
    written = export_views(context.cloud, cameras, args.output, render)
    _emit(args, {"files": written}, "\n".join(written))
    return 0


def cmd_readout(args):
    doc = serialize_readout(load_bundle(args.bundle), args.views)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(doc.text())
    _emit(args, {"readout": args.output, "views": list(doc.view_refs)}, f"wrote {args.output}")
    return 0


def cmd_plan_layout(args):
    context = load_bundle(args.bundle)
    params = IcpParams(max_iterations=args.max_iterations, rel_tolerance=args.rel_tolerance,
                       subsample_mesh=args.subsample_mesh, subsample_target=args.subsample_target,
                       with_scale=not args.rigid, seed=args.seed, trim_fraction=args.trim_fraction,
                       resample_each_iteration=args.resample,
                       full_orientation_search=args.full_orientation)
    meshes = load_meshes(args.meshes) if args.meshes else None
    context, report = plan_layout(context, meshes, params)
    out = _save(args, context)
    payload = {
        "bundle": out,
        "instances": {str(label): {"objective": r.objective, "iterations": r.iterations,
                                   "converged": r.converged, "chamfer": r.chamfer}
                      for label, r in sorted(report.results.items())},
        "failures": {str(label): str(err) for label, err in sorted(report.failures.items())},
    }
    _emit(args, payload, report.summary() or "no meshes to align")
    for label, err in sorted(report.failures.items()):
        print(f"PlanningError: {err}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_adjust(args):
    context = load_bundle(args.bundle)
    config = OptimizerConfig(rotation_dofs=args.rotation, max_iterations=args.max_iterations,
                             step_size=args.step_size, grad_tolerance=args.grad_tolerance,
                             contact_samples=args.contact_samples, seed=args.seed,
                             translation_axes=args.translation_axes,
                             soft_min_temperature=args.soft_min)
    context, trace = optimize_poses(context, config)
    out = _save(args, context)
    if args.trace:
        trace.write_csv(args.trace)
    energies = trace.energies
    _emit(args, {"bundle": out, "reason": trace.reason, "iterations": trace.iterations,
                 "initial_energy": energies[0], "final_energy": energies[-1]},
          f"{trace.reason} after {trace.iterations} iteration(s): "
          f"energy {energies[0]:.6g} -> {energies[-1]:.6g}")
    return 0


def cmd_edit(args):
    context = load_bundle(args.bundle)
    commands = parse_edit_commands(_read(args.commands))
    base_dir = os.path.dirname(os.path.abspath(args.commands))
    context = apply_edits(context, commands, base_dir)
    out = _save(args, context)
    _emit(args, {"bundle": out, "applied": len(commands)}, f"applied {len(commands)} command(s)")
    return 0


def cmd_session(args):
    context = load_bundle(args.bundle)
    if args.script:
        endpoint = ScriptedStub.from_file(args.script)
        base_dir = os.path.dirname(os.path.abspath(args.script))
    else:
        endpoint = HttpEndpoint(args.agent_url, timeout=args.timeout)
        base_dir = os.path.abspath(args.bundle)
    try:
        context, transcript = run_session(endpoint, context, args.max_rounds, args.views, base_dir)
    except SessionAborted as exc:
        if args.transcript:
            exc.transcript.write(args.transcript)
        raise
    out = _save(args, context)
    if args.transcript:
        transcript.write(args.transcript)
    rounds = transcript.count("response")
    _emit(args, {"bundle": out, "rounds": rounds}, f"session finished after {rounds} round(s)")
    return 0


def cmd_path(args):
    context = load_bundle(args.bundle)
    start_id = resolve_instance(context, args.start)
    goal_id = resolve_instance(context, args.goal)
    grid = build_occupancy(context, args.resolution, tuple(args.band) if args.band else None,
                           args.inflate, NavigationConfig(), exclude=(start_id, goal_id))
    if args.pgm:
        grid.write_pgm(args.pgm)
    path = plan_path(grid, instance_anchor(context, start_id), instance_anchor(context, goal_id))
    if args.output:
        path.write_json(args.output)
    _emit(args, path.to_json(), f"path of {len(path.waypoints)} waypoint(s), length {path.length:.4f}")
    return 0


def cmd_export_layout(args):
    context = load_bundle(args.bundle)
    write_layout_json(context.poses, args.output)
    _emit(args, {"layout": args.output, "poses": len(context.poses)},
          f"wrote {len(context.poses)} pose(s) to {args.output}")
    return 0


def cmd_demo(args):
    context = write_demo(args.name, args.output)
    _emit(args, {"bundle": args.output, "points": len(context.cloud)},
          f"wrote demo {args.name} to {args.output}")
    return 0


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyspatialctx",
                                     description="Spatial context engine: labeled clouds, scene "
                                                 "hypergraphs, layout planning and pose optimization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for per-iteration detail (stderr)")
    parser.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("init", help="create a bundle from a cloud, a graph and a portrait")
    p.add_argument("--cloud", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--portrait", required=True)
    p.add_argument("--unit-scale", type=float, default=1.0, help="meters per scene unit")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("validate", help="check the context invariants of a bundle")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("project", help="render point maps")
    p.add_argument("bundle")
    p.add_argument("--views", choices=("canonical", "input", "all"), default="canonical")
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--splat-radius", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("readout", help="write the readout document")
    p.add_argument("bundle")
    p.add_argument("--views", help="render canonical views into this directory")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_readout)

    icp = IcpParams()
    p = sub.add_parser("plan-layout", help="align meshes to their instance segments")
    p.add_argument("bundle")
    p.add_argument("--meshes", help="directory of <id>.obj meshes (default: the bundle's)")
    p.add_argument("--max-iterations", type=int, default=icp.max_iterations)
    p.add_argument("--rel-tolerance", type=float, default=icp.rel_tolerance)
    p.add_argument("--subsample-mesh", type=int, default=icp.subsample_mesh)
    p.add_argument("--subsample-target", type=int, default=icp.subsample_target)
    p.add_argument("--trim-fraction", type=float, default=icp.trim_fraction)
    p.add_argument("--rigid", action="store_true", help="do not estimate scale")
    p.add_argument("--resample", action="store_true", help="fresh subsample every iteration")
    p.add_argument("--full-orientation", action="store_true", help="try all 24 axis assignments")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="output bundle (default: in place)")
    p.set_defaults(func=cmd_plan_layout)

    opt = OptimizerConfig()
    p = sub.add_parser("adjust", help="optimize instance poses against the hypergraph")
    p.add_argument("bundle")
    p.add_argument("--rotation", choices=("yaw", "full", "none"), default=opt.rotation_dofs)
    p.add_argument("--max-iterations", type=int, default=opt.max_iterations)
    p.add_argument("--step-size", type=float, default=opt.step_size)
    p.add_argument("--grad-tolerance", type=float, default=opt.grad_tolerance)
    p.add_argument("--contact-samples", type=int, default=opt.contact_samples)
    p.add_argument("--translation-axes", default=opt.translation_axes)
    p.add_argument("--soft-min", type=float, default=opt.soft_min_temperature,
                   help="soft-min temperature of the contact loss (0 = hard min)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write the energy trace as CSV")
    p.add_argument("-o", "--output", help="output bundle (default: in place)")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("edit", help="apply an edit command batch")
    p.add_argument("bundle")
    p.add_argument("--commands", required=True)
    p.add_argument("-o", "--output", help="output bundle (default: in place)")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("session", help="run a readout/update session")
    p.add_argument("bundle")
    agent = p.add_mutually_exclusive_group(required=True)
    agent.add_argument("--script", help="scripted responses separated by '---' lines")
    agent.add_argument("--agent-url", help="external agent endpoint (HTTP POST)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--views", help="render per-round views into this directory")
    p.add_argument("--transcript", help="write the session transcript here")
    p.add_argument("-o", "--output", help="output bundle (default: in place)")
    p.set_defaults(func=cmd_session)

    nav = NavigationConfig()
    p = sub.add_parser("path", help="plan a collision-free path between two instances")
    p.add_argument("bundle")
    p.add_argument("--from", dest="start", required=True, help="instance name or id")
    p.add_argument("--to", dest="goal", required=True, help="instance name or id")
    p.add_argument("--resolution", type=float, default=nav.resolution)
    p.add_argument("--inflate", type=float, default=nav.inflate)
    p.add_argument("--band", type=float, nargs=2, metavar=("MIN_Y", "MAX_Y"))
    p.add_argument("--pgm", help="write the occupancy grid as PGM")
    p.add_argument("-o", "--output", help="write the path as JSON")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("export-layout", help="write the bundle poses as layout JSON")
    p.add_argument("bundle")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_layout)

    p = sub.add_parser("demo", help="write a synthetic demo bundle")
    p.add_argument("name", choices=sorted(DEMOS))
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpatialContextError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # config objects reject out-of-range flag values
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
