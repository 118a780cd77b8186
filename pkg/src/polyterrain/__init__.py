"""polyterrain: convex-polygon terrain maps from depth image sequences.

Depth frames with known camera poses go through per-frame plane
segmentation, cross-frame plane merging, contour simplification with a
foot-size safety guard, and convex partitioning, yielding a world-frame
map of planar regions ready for legged-robot foothold planning.
"""

from .core import (
    CameraIntrinsics,
    CameraPose,
    ContractViolation,
    ConvexPolygon,
    DepthImage,
    OrganizedCloud,
    PipelineConfig,
    PlanarMap,
    PlanarRegion,
    plane_bias,
    transform_point,
)
from .evaluation import EvalReport, evaluate, evaluate_map
from .merging import PlaneFrame2D, PlaneMask, is_coplanar, merge_parameters, merge_planes
from .pipeline import BenchReport, bench, build_map, region_to_world, run_pipeline
from .polytope import approximate_region, convex_partition, simplify_contour
from .segmentation import segment_frame
from .synth import GroundTruthPlane, NoiseModel, Scene, make_staircase, render_depth

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "ContractViolation",
    "ConvexPolygon",
    "DepthImage",
    "OrganizedCloud",
    "PipelineConfig",
    "PlanarMap",
    "PlanarRegion",
    "plane_bias",
    "transform_point",
    "EvalReport",
    "evaluate",
    "evaluate_map",
    "PlaneFrame2D",
    "PlaneMask",
    "is_coplanar",
    "merge_parameters",
    "merge_planes",
    "BenchReport",
    "bench",
    "build_map",
    "region_to_world",
    "run_pipeline",
    "approximate_region",
    "convex_partition",
    "simplify_contour",
    "segment_frame",
    "GroundTruthPlane",
    "NoiseModel",
    "Scene",
    "make_staircase",
    "render_depth",
    "__version__",
]
