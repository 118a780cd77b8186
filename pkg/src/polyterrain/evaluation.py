"""Accuracy metrics of a predicted map against ground-truth planes.

Each predicted region is greedily matched to the ground-truth plane that
maximizes IoU after orthogonal projection onto that plane. Reported per
match: the angle between unit normals (sign-insensitive), the plane bias
difference along the ground-truth normal, and the IoU itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PlanarMap, PlanarRegion
from .dataio import InputFormatError, read_ground_truth, read_map
from .merging import PlaneFrame2D
from .raster import fill_loops
from .synth import GroundTruthPlane, Scene

IOU_RESOLUTION = 0.002  # raster pitch for polygon overlap, meters
MAX_MATCH_ANGLE_DEG = 45.0  # pairs beyond this never match


def project_onto_plane(points: np.ndarray, normal: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Orthogonal projection of 3D points onto the plane (normal, origin)."""
    pts = np.asarray(points, dtype=np.float64)
    off = (pts - origin) @ normal
    return pts - off[:, None] * normal


def masks_iou(loops_a, loops_b, resolution: float = IOU_RESOLUTION) -> float:
    """IoU of two loop sets in one 2D frame, by cell-center rasterization."""
    allpts = np.concatenate([np.asarray(l) for l in loops_a + loops_b])
    res = resolution
    row0 = int(math.floor(allpts[:, 1].min() / res)) - 1
    col0 = int(math.floor(allpts[:, 0].min() / res)) - 1
    rows = int(math.ceil(allpts[:, 1].max() / res)) - row0 + 1
    cols = int(math.ceil(allpts[:, 0].max() / res)) - col0 + 1
    a = fill_loops(loops_a, res, row0, col0, rows, cols)
    b = fill_loops(loops_b, res, row0, col0, rows, cols)
    union = int((a | b).sum())
    if union == 0:
        return 0.0
    return int((a & b).sum()) / union


def region_gt_iou(region: PlanarRegion, gt: GroundTruthPlane, resolution: float = IOU_RESOLUTION) -> float:
    """IoU after projecting the region onto the ground-truth plane."""
    origin = gt.centroid
    frame = PlaneFrame2D.for_plane(gt.normal, origin, resolution)
    loops_r = [frame.to_plane(project_onto_plane(region.contour, gt.normal, origin))]
    for h in region.holes:
        loops_r.append(frame.to_plane(project_onto_plane(h, gt.normal, origin)))
    loops_g = [frame.to_plane(gt.boundary)]
    return masks_iou(loops_r, loops_g, resolution)


@dataclass
class MatchResult:
    gt_id: str
    region_index: int
    alpha_deg: float
    delta_b_mm: float
    iou: float


@dataclass
class EvalReport:
    matches: list = field(default_factory=list)
    mean_alpha_deg: float = 0.0
    mean_delta_b_mm: float = 0.0
    mean_iou: float = 0.0
    unmatched_ground_truth: int = 0
    unmatched_predictions: int = 0

    def to_json(self) -> dict:
        return {
            "matches": [
                {
                    "gt_id": m.gt_id,
                    "region_index": m.region_index,
                    "alpha_deg": m.alpha_deg,
                    "delta_b_mm": m.delta_b_mm,
                    "iou": m.iou,
                }
                for m in self.matches
            ],
            "mean_alpha_deg": self.mean_alpha_deg,
            "mean_delta_b_mm": self.mean_delta_b_mm,
            "mean_iou": self.mean_iou,
            "unmatched_ground_truth": self.unmatched_ground_truth,
            "unmatched_predictions": self.unmatched_predictions,
        }


def _alpha_deg(n1: np.ndarray, n2: np.ndarray) -> float:
    return math.degrees(math.acos(min(1.0, abs(float(n1 @ n2)))))


def evaluate_map(pmap: PlanarMap, scene: Scene, resolution: float = IOU_RESOLUTION) -> EvalReport:
    """Greedy best-IoU matching of predicted regions to ground-truth planes."""
    if not scene.planes:
        raise InputFormatError("ground truth contains no planes")
    regions = pmap.regions
    pairs = []
    for gi, gt in enumerate(scene.planes):
        for ri, region in enumerate(regions):
            if _alpha_deg(region.normal, gt.normal) > MAX_MATCH_ANGLE_DEG:
                continue
            iou = region_gt_iou(region, gt, resolution)
            if iou > 1e-9:
                pairs.append((iou, gi, ri))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_gt, used_r = set(), set()
    report = EvalReport()
    for iou, gi, ri in pairs:
        if gi in used_gt or ri in used_r:
            continue
        used_gt.add(gi)
        used_r.add(ri)
        gt = scene.planes[gi]
        region = regions[ri]
        report.matches.append(
            MatchResult(
                gt_id=gt.id,
                region_index=ri,
                alpha_deg=_alpha_deg(region.normal, gt.normal),
                delta_b_mm=abs(gt.bias - float(gt.normal @ region.centroid)) * 1000.0,
                iou=iou,
            )
        )
    if report.matches:
        report.mean_alpha_deg = float(np.mean([m.alpha_deg for m in report.matches]))
        report.mean_delta_b_mm = float(np.mean([m.delta_b_mm for m in report.matches]))
        report.mean_iou = float(np.mean([m.iou for m in report.matches]))
    report.unmatched_ground_truth = len(scene.planes) - len(used_gt)
    report.unmatched_predictions = len(regions) - len(used_r)
    return report


def evaluate(map_path, ground_truth_path, resolution: float = IOU_RESOLUTION) -> EvalReport:
    """File-level entry point: map JSON vs ground-truth JSON."""
    pmap = read_map(map_path)
    scene = read_ground_truth(ground_truth_path)
    return evaluate_map(pmap, scene, resolution)
