"""Command line interface.

Subcommands: synth (render a dataset), segment (one frame to regions),
pipeline (full map), eval (metrics vs ground truth), bench (timings).
Exit codes: 0 success, 2 input-format error, 3 pipeline contract
violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import ContractViolation, PipelineConfig, PlanarMap
from .dataio import (
    InputFormatError,
    read_scene_spec,
    write_ground_truth,
    write_manifest,
    write_map,
    write_pgm,
)
from .evaluation import evaluate
from .pipeline import bench, run_pipeline
from .segmentation import segment_frame
from .synth import render_depth

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONTRACT = 3


def _load_config(path) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ValueError("config JSON must be an object")
        return cfg.with_overrides(overrides)
    except (OSError, ValueError) as e:
        raise InputFormatError(f"bad config {path}: {e}") from e


def _cmd_synth(args) -> int:
    spec = read_scene_spec(args.scene_spec)
    out = Path(args.out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for k, pose in enumerate(spec.poses):
        depth = render_depth(spec.scene, spec.intrinsics, pose, spec.noise, rng)
        rel = f"frames/frame_{k:04d}.pgm"
        write_pgm(out / rel, depth)
        entries.append((rel, pose))
    write_manifest(out / "manifest.json", spec.intrinsics, entries)
    write_ground_truth(out / "ground_truth.json", spec.scene)
    print(f"wrote {len(entries)} frames to {out}")
    return EXIT_OK


def _cmd_segment(args) -> int:
    from .dataio import load_sequence
    from .pipeline import region_to_world

    intr, frames = load_sequence(args.manifest)
    if not 0 <= args.frame < len(frames):
        raise InputFormatError(f"frame index {args.frame} outside 0..{len(frames) - 1}")
    cfg = _load_config(args.config)
    depth, pose = frames[args.frame]
    regions = [region_to_world(r, pose) for r in segment_frame(depth, intr, cfg)]
    pmap = PlanarMap(regions, [[] for _ in regions])
    write_map(args.out, pmap)
    print(f"frame {args.frame}: {len(regions)} regions -> {args.out}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    pmap = run_pipeline(args.manifest, cfg, args.out)
    npoly = sum(len(p) for p in pmap.polygons)
    print(f"{len(pmap.regions)} regions, {npoly} convex polygons -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = evaluate(args.map, args.ground_truth)
    text = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    report = bench(args.manifest, cfg, args.reps)
    text = report.csv_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="polyterrain",
        description="Convex-polygon terrain maps from depth image sequences",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset from a scene spec")
    s.add_argument("scene_spec")
    s.add_argument("--out", dest="out_dir", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("segment", help="segment a single frame into regions JSON")
    s.add_argument("manifest")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_segment)

    s = sub.add_parser("pipeline", help="build the full planar map from a manifest")
    s.add_argument("manifest")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_pipeline)

    s = sub.add_parser("eval", help="compare a map against ground truth")
    s.add_argument("map")
    s.add_argument("ground_truth")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("bench", help="per-frame stage timings (CSV)")
    s.add_argument("manifest")
    s.add_argument("--config", default=None)
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputFormatError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ContractViolation as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
