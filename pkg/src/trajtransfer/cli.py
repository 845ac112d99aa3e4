"""Command-line interface: transfer, synth, eval, and plot subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import metrics, plan, synth
from .config import PipelineConfig, load_config, make_config, parse_flat_text
from .pipeline import PipelineError, run_transfer
from .scene_io import (
    FormatError,
    Trajectory,
    load_scene,
    load_trajectory,
    save_scene,
    save_trajectory,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3
EXIT_PLANNING = 4


class InputError(ValueError):
    pass


def _load_config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        overrides.update(parse_flat_text(item))
    try:
        if args.config:
            return load_config(args.config, overrides)
        return make_config(overrides)
    except (OSError, ValueError) as exc:
        raise InputError(f"config: {exc}") from exc


def _load_inputs(paths: dict) -> dict:
    loaded = {}
    for name, (path, loader) in paths.items():
        try:
            loaded[name] = loader(path)
        except FileNotFoundError as exc:
            raise InputError(f"{name}: file not found: {path}") from exc
        except (FormatError, ValueError) as exc:
            raise InputError(f"{name}: {exc}") from exc
    return loaded


def _write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def _alternative_path(out: str, rank: int) -> str:
    p = Path(out)
    return str(p.with_suffix(f".top{rank}{p.suffix}"))


def cmd_transfer(args) -> int:
    cfg = _load_config(args)
    data = _load_inputs({
        "target": (args.target, load_scene),
        "reference": (args.reference, load_scene),
        "trajectory": (args.trajectory, load_trajectory),
    })
    if args.mode == "waypoint" and data["trajectory"].waypoint_indices is None:
        raise InputError("trajectory has no waypoint_indices; waypoint mode needs them")
    try:
        result = run_transfer(
            data["target"], data["reference"], data["trajectory"],
            cfg, mode=args.mode, top_n=args.top,
        )
    except plan.PlanningError as exc:
        print(f"planning failure: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except (PipelineError, ValueError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    save_trajectory(result.trajectory, args.out)
    for rank, alt in enumerate(result.alternatives, start=2):
        save_trajectory(alt, _alternative_path(args.out, rank))
    if args.report:
        _write_report(result.report, args.report)
    for stage, ms in result.timings.items():
        print(f"timing {stage}: {ms:.1f} ms")
    print(f"wrote {args.out}")
    return EXIT_OK


def _make_synth_spec(args) -> synth.SynthSpec:
    values = {}
    if args.spec:
        try:
            with open(args.spec, "r", encoding="utf-8") as fh:
                values = parse_flat_text(fh.read())
        except (OSError, ValueError) as exc:
            raise InputError(f"spec: {exc}") from exc
    for item in args.set or []:
        values.update(parse_flat_text(item))
    known = {f.name for f in fields(synth.SynthSpec)}
    unknown = set(values) - known
    if unknown:
        raise InputError(f"unknown synth spec keys: {sorted(unknown)}")
    return replace(synth.SynthSpec(), **values)


def cmd_synth(args) -> int:
    spec = _make_synth_spec(args)
    try:
        pair = synth.generate_pair(spec)
    except synth.PlacementError as exc:
        print(f"generation failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except plan.PlanningError as exc:
        print(f"planning failure: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(pair.scene_tgt, out / "target.atts")
    save_scene(pair.scene_ref, out / "reference.atts")
    save_trajectory(pair.src_trajectory, out / "source.attt")
    save_trajectory(pair.gt_trajectory_ref, out / "gt.attt")

    src_wp = pair.src_trajectory.waypoints()
    gt_wp = pair.gt_map(src_wp)
    lines = [f"{k} = {v}" for k, v in pair.params.items()]
    lines.append("global_linear = " + ",".join(repr(v) for v in pair.global_linear.ravel()))
    for k, off in enumerate(pair.cluster_offsets):
        lines.append(f"cluster_offset_{k} = " + ",".join(repr(v) for v in off))
    for i, (s, g) in enumerate(zip(src_wp, gt_wp)):
        lines.append(f"waypoint_{i}_src = " + ",".join(repr(v) for v in s))
        lines.append(f"waypoint_{i}_gt = " + ",".join(repr(v) for v in g))
    (out / "ground_truth.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote bundle to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = _load_inputs({
        "pred": (args.pred, load_trajectory),
        "target": (args.target, load_scene),
        "reference": (args.reference, load_scene),
    })
    gts = []
    for path in args.gt:
        gts.append(_load_inputs({"gt": (path, load_trajectory)})["gt"])
    src = None
    if args.source:
        src = _load_inputs({"source": (args.source, load_trajectory)})["source"]
    try:
        report = metrics.evaluate(
            data["pred"], gts,
            scene_tgt=data["target"],
            scene_ref=data["reference"],
            src_traj=src,
        )
    except ValueError as exc:
        print(f"evaluation failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    _write_report(report.as_dict(), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_scenes

    scenes = [_load_inputs({"scene": (p, load_scene)})["scene"] for p in args.scene or []]
    trajs = [
        _load_inputs({"trajectory": (p, load_trajectory)})["trajectory"]
        for p in args.trajectory or []
    ]
    if not scenes and not trajs:
        raise InputError("nothing to plot: give --scene and/or --trajectory")
    plot_scenes(scenes, trajs, args.out, labels=args.scene)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtransfer",
        description="Transfer motion trajectories between 3D point-cloud scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer", help="run the full transfer pipeline")
    p.add_argument("--target", required=True, help="target scene (.atts)")
    p.add_argument("--reference", required=True, help="reference scene (.atts)")
    p.add_argument("--trajectory", required=True, help="source trajectory (.attt)")
    p.add_argument("--mode", choices=("dense", "waypoint"), default="dense")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config value")
    p.add_argument("--out", required=True, help="output trajectory (.attt)")
    p.add_argument("--report", help="structured run report (JSON text)")
    p.add_argument("--top", type=int, default=1,
                   help="emit N alternative trajectories from the beam")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("synth", help="generate a synthetic scene pair bundle")
    p.add_argument("--spec", help="flat key=value synth spec file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a transferred trajectory")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", action="append", required=True,
                   help="ground-truth trajectory; repeat for multiple")
    p.add_argument("--target", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--source", help="source trajectory for feature/length metrics")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="top-down scene/trajectory image")
    p.add_argument("--scene", action="append")
    p.add_argument("--trajectory", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except synth.PlacementError as exc:
        print(f"generation failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
