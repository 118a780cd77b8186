"""Frame-sequence orchestration: segment, merge into the map, approximate.

Frames are processed strictly in manifest order (merging is stateful);
convex approximation runs once on the final map. The bench entry point
times the three stages per frame over repeated runs.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import CameraPose, PipelineConfig, PlanarMap, PlanarRegion
from .dataio import load_sequence, write_map
from .merging import merge_planes
from .polytope import approximate_region
from .segmentation import segment_frame


def region_to_world(region: PlanarRegion, pose: CameraPose) -> PlanarRegion:
    """Rigidly move a camera-frame region into the world frame."""
    R = pose.matrix()
    t = pose.translation
    return PlanarRegion(
        contour=region.contour @ R.T + t,
        holes=tuple(h @ R.T + t for h in region.holes),
        n_points=region.n_points,
        centroid=R @ region.centroid + t,
        normal=R @ region.normal,
        mse=region.mse,
    )


def build_map(intr, frames, cfg: PipelineConfig):
    """Segment every frame and fuse the world-frame regions into one list."""
    regions: list = []
    for depth, pose in frames:
        found = segment_frame(depth, intr, cfg)
        world = [region_to_world(r, pose) for r in found]
        regions = merge_planes(regions, world, cfg)
    return regions


def run_pipeline(manifest_path, cfg: PipelineConfig, out_path=None) -> PlanarMap:
    """Full pipeline over a dataset manifest; optionally writes the map JSON."""
    intr, frames = load_sequence(manifest_path)
    regions = build_map(intr, frames, cfg)
    polygons = [approximate_region(r, cfg) for r in regions]
    pmap = PlanarMap(regions, polygons)
    if out_path is not None:
        write_map(out_path, pmap)
    return pmap


@dataclass
class BenchRow:
    frame: int
    planes: int
    seg_ms: float
    merge_ms: float
    approx_ms: float
    total_ms: float
    rep_totals_ms: list = field(default_factory=list)


@dataclass
class BenchReport:
    repetitions: int
    rows: list = field(default_factory=list)

    def csv_text(self) -> str:
        header = "frame,planes,seg_ms,merge_ms,approx_ms,total_ms"
        header += "".join(f",total_ms_rep{k + 1}" for k in range(self.repetitions))
        lines = [header]
        for r in self.rows:
            cells = [
                str(r.frame),
                str(r.planes),
                f"{r.seg_ms:.3f}",
                f"{r.merge_ms:.3f}",
                f"{r.approx_ms:.3f}",
                f"{r.total_ms:.3f}",
            ]
            cells += [f"{t:.3f}" for t in r.rep_totals_ms]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def bench(manifest_path, cfg: PipelineConfig, repetitions: int = 5) -> BenchReport:
    """Median per-frame stage timings over repeated serial runs.

    One untimed warmup pass runs first so compiled kernels and caches do
    not contaminate the medians. Per frame and repetition, the map is
    rebuilt from scratch in frame order; approximation is timed against
    the map state after that frame's merge.
    """
    intr, frames = load_sequence(manifest_path)
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    _kernels.warmup()
    if frames:
        build_map(intr, frames[:1], cfg)  # warm every stage end to end

    samples = [[] for _ in frames]  # per frame: list of (seg, merge, approx, planes)
    for _ in range(repetitions):
        regions: list = []
        for fi, (depth, pose) in enumerate(frames):
            t0 = time.perf_counter()
            found = segment_frame(depth, intr, cfg)
            t1 = time.perf_counter()
            world = [region_to_world(r, pose) for r in found]
            regions = merge_planes(regions, world, cfg)
            t2 = time.perf_counter()
            for r in regions:
                approximate_region(r, cfg)
            t3 = time.perf_counter()
            samples[fi].append(
                ((t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3, len(regions))
            )

    report = BenchReport(repetitions=repetitions)
    for fi, reps in enumerate(samples):
        seg = statistics.median(r[0] for r in reps)
        mer = statistics.median(r[1] for r in reps)
        app = statistics.median(r[2] for r in reps)
        totals = [r[0] + r[1] + r[2] for r in reps]
        report.rows.append(
            BenchRow(
                frame=fi,
                planes=reps[-1][3],
                seg_ms=seg,
                merge_ms=mer,
                approx_ms=app,
                total_ms=statistics.median(totals),
                rep_totals_ms=totals,
            )
        )
    return report
