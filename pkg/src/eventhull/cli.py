"""Command-line interface.

Subcommands: simulate, label, carve, extract, refine, evaluate, run,
compare. Exit codes: 0 success, 2 config/argument error,
3 reconstruction failed (no enclosed cavity), 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ace, carving, meshing, pipeline
from .errors import DomainError, NumericalAbortError, ParseError, ReconstructionFailedError
from .events import read_events, write_events
from .geometry import load_trajectory, save_trajectory
from .simulator import save_mask_pgm, render_masks


def _add_common_grid_flags(p):
    p.add_argument("--grid-dim", type=int, default=128)
    p.add_argument("--eps-v-percentile", type=float, default=90.0)
    p.add_argument("--eps-free", type=float, default=0.0)


def cmd_simulate(args):
    surface, intr, manifest = pipeline.load_scene(args.scene)
    traj, stream = pipeline.simulate_scene(manifest, surface, intr)
    os.makedirs(args.output_dir, exist_ok=True)
    ext = "csv" if args.format == "csv" else "bin"
    write_events(stream, os.path.join(args.output_dir, f"events.{ext}"), args.format)
    save_trajectory(traj, os.path.join(args.output_dir, "trajectory.txt"))
    if args.masks:
        for i, (_, mask) in enumerate(render_masks(surface, traj, intr, args.masks)):
            save_mask_pgm(mask, os.path.join(args.output_dir, f"mask_{i:03d}.pgm"))
    with open(os.path.join(args.output_dir, "scene.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"wrote {len(stream)} events to {args.output_dir}")


def cmd_label(args):
    surface, intr, _ = pipeline.load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    stream = read_events(args.events, args.format, sensor=intr)
    labeled = ace.label_events(stream, traj, intr, surface, tol_px=args.tol_px)
    write_events(labeled, args.output, args.format)
    n_ace = int(np.count_nonzero(labeled.label == 1))
    print(f"labeled {n_ace}/{len(labeled)} events as ACE")


def cmd_carve(args):
    surface, intr, _ = pipeline.load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    stream = read_events(args.events, args.format, sensor=intr)
    vol = carving.volume_for_scene(surface, args.grid_dim)
    carving.carve_event_stream(vol, stream, traj, intr, use_labels=not args.all_events)
    carving.save_volume(vol, args.output)
    print(f"carved {vol.ops} rays into {args.output}")


def cmd_extract(args):
    vol = carving.load_volume(args.volume)
    grid = carving.extract_occupancy(vol, eps_free=args.eps_free)
    mesh = meshing.marching_cubes(grid)
    meshing.save_mesh(mesh, args.output)
    print(f"extracted mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")


def cmd_refine(args):
    mesh = meshing.load_mesh(args.mesh)
    vol = carving.load_volume(args.volume)
    eps_v = max(1.0, carving.nonzero_percentile(vol, args.eps_v_percentile))
    surf = carving.extract_high_confidence(vol, eps_v)
    diam = float(np.linalg.norm(mesh.vertices.max(0) - mesh.vertices.min(0)))
    cfg = meshing.RefineConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        eps_d=args.eps_d if args.eps_d else 3.0 * vol.voxel_size,
        iters=args.refine_iters,
        step_size=args.step_size if args.step_size else 1e-3 * diam,
    )
    refined, trace = meshing.refine_mesh(mesh, surf.points, cfg)
    meshing.save_mesh(refined, args.output)
    print(f"refined for {len(trace)} steps, loss {trace[0]:.3e} -> {trace[-1]:.3e}")


def cmd_evaluate(args):
    surface, _, _ = pipeline.load_scene(args.scene)
    mesh = meshing.load_mesh(args.mesh)
    cd, nc = pipeline.evaluate_mesh(mesh, surface, args.n_samples, args.knn, args.seed)
    result = {
        "chamfer_mm": cd * 1e3,
        "normal_cos": nc,
        "n_samples": args.n_samples,
        "k": args.knn,
    }
    print(f"chamfer={cd * 1e3:.4f}e-3 m  normal_cos={nc:.4f}")
    if args.output:
        with open(args.output, "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)


def _config_from_args(args) -> pipeline.RunConfig:
    d = pipeline.parse_config_file(args.config) if args.config else {}
    for key in ("method", "scene", "events", "trajectory", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    for key in ("grid_dim", "eps_v_percentile", "eps_free", "refine_iters", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    return pipeline.config_from_dict(d)


def cmd_run(args):
    cfg = _config_from_args(args)
    report = pipeline.run_pipeline(cfg)
    print(report.to_json())


def cmd_compare(args):
    base = pipeline.parse_config_file(args.config) if args.config else {}
    if args.scene:
        base["scene"] = args.scene
    cfgs = []
    for method in args.methods.split(","):
        d = dict(base)
        d["method"] = method.strip()
        if d.get("output_dir"):
            d["output_dir"] = os.path.join(d["output_dir"], method.strip())
        cfgs.append(pipeline.config_from_dict(d))
    reports = pipeline.compare_methods(cfgs)
    table = pipeline.comparison_table(reports, fmt=args.table_format)
    print(table)
    if args.output:
        with open(args.output, "w") as f:
            f.write(table + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="eventhull",
        description="Event-based continuous visual hull reconstruction",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate events/trajectory/masks from a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--masks", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("label", help="label events with the geometric ACE oracle")
    p.add_argument("--events", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--tol-px", type=float, default=ace.DEFAULT_TOL_PX)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("carve", help="carve an event stream into a volume")
    p.add_argument("--events", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--all-events", action="store_true")
    _add_common_grid_flags(p)
    p.set_defaults(func=cmd_carve)

    p = sub.add_parser("extract", help="occupancy + marching cubes from a volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--eps-free", type=float, default=0.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("refine", help="refine a mesh against high-confidence points")
    p.add_argument("--mesh", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.1)
    p.add_argument("--eps-d", type=float, default=None)
    p.add_argument("--refine-iters", type=int, default=200)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--eps-v-percentile", type=float, default=90.0)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="chamfer + normal consistency vs scene")
    p.add_argument("--mesh", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--knn", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--scene", default=None)
    p.add_argument("--events", default=None)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--grid-dim", dest="grid_dim", type=int, default=None)
    p.add_argument("--eps-v-percentile", dest="eps_v_percentile", type=float, default=None)
    p.add_argument("--eps-free", dest="eps_free", type=float, default=None)
    p.add_argument("--refine-iters", dest="refine_iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several methods on one scene")
    p.add_argument("--config", default=None)
    p.add_argument("--scene", default=None)
    p.add_argument("--methods", default="evac3d,mask-12,mask-24")
    p.add_argument("--output", default=None)
    p.add_argument("--table-format", choices=("markdown", "csv"), default="markdown")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (DomainError, ParseError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ReconstructionFailedError as e:
        print(f"reconstruction failed: {e}", file=sys.stderr)
        return 3
    except (NumericalAbortError, OverflowError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
