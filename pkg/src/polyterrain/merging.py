"""Fusing planar regions observed in different frames.

Two regions merge when their planes agree within preset tolerances and
their footprints touch. Parameters fuse in closed form (point counts add,
centroids average by weight, normals blend in spherical coordinates with
inverse-MSE weights); footprints are rasterized as binary masks in the
merged plane's own 2D frame, OR-ed together, and the union boundary is
traced back into the world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ContractViolation, PipelineConfig, PlanarRegion, plane_bias
from .raster import fill_loops, points_in_loops, shoelace_area, trace_cell_edges

# MSE floor so exact (noise-free) fits do not divide by zero when weighting
MSE_FLOOR = 1e-12


class DegenerateProjectionError(ValueError):
    """A region projected to (near) zero area in the merge frame."""


@dataclass(frozen=True)
class PlaneFrame2D:
    """Orthonormal 2D chart on a plane; z axis equals the plane normal."""

    origin: np.ndarray
    axis_x: np.ndarray
    axis_y: np.ndarray
    normal: np.ndarray
    resolution: float

    def __post_init__(self):
        for name in ("origin", "axis_x", "axis_y", "normal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        basis = np.stack([self.axis_x, self.axis_y, self.normal])
        if np.abs(basis @ basis.T - np.eye(3)).max() > 1e-9:
            raise ValueError("axes and normal must form an orthonormal triad")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def for_plane(cls, normal, origin, resolution) -> "PlaneFrame2D":
        """Deterministic frame: x axis is the world x axis projected onto
        the plane (world y when degenerate), y completes the right-handed
        triad, so identical planes always rasterize identically."""
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        ax = np.array([1.0, 0.0, 0.0]) - n[0] * n
        if np.linalg.norm(ax) < 1e-6:
            ax = np.array([0.0, 1.0, 0.0]) - n[1] * n
        ax = ax / np.linalg.norm(ax)
        return cls(np.asarray(origin, dtype=np.float64), ax, np.cross(n, ax), n, float(resolution))

    def to_plane(self, pts: np.ndarray) -> np.ndarray:
        rel = np.asarray(pts, dtype=np.float64) - self.origin
        return np.stack([rel @ self.axis_x, rel @ self.axis_y], axis=-1)

    def to_world(self, pts2: np.ndarray) -> np.ndarray:
        pts2 = np.asarray(pts2, dtype=np.float64)
        return (
            self.origin
            + pts2[..., 0, None] * self.axis_x
            + pts2[..., 1, None] * self.axis_y
        )

    def matches(self, other: "PlaneFrame2D") -> bool:
        return (
            abs(self.resolution - other.resolution) <= 1e-12
            and np.allclose(self.origin, other.origin, atol=1e-9)
            and np.allclose(self.axis_x, other.axis_x, atol=1e-9)
            and np.allclose(self.axis_y, other.axis_y, atol=1e-9)
            and np.allclose(self.normal, other.normal, atol=1e-9)
        )


@dataclass
class PlaneMask:
    """Binary occupancy of a region on a PlaneFrame2D grid.

    Cell (i, j) covers x in [(j+offset[1])*res, ...] and y likewise, so
    masks with different windows on the same frame stay comparable.
    """

    bits: np.ndarray  # (rows, cols) bool
    frame: PlaneFrame2D
    offset: tuple  # (row0, col0)

    @property
    def cell_count(self) -> int:
        return int(self.bits.sum())


def is_coplanar(a: PlanarRegion, b: PlanarRegion, cfg: PipelineConfig) -> bool:
    """Same-plane gate: normal alignment and bias agreement within thresholds."""
    align = 1.0 - abs(float(a.normal @ b.normal))
    if align >= cfg.tau_theta:
        return False
    return abs(a.bias - b.bias) < cfg.tau_b


class MergedParameters(NamedTuple):
    n_points: int
    centroid: np.ndarray
    normal: np.ndarray
    mse: float


def _wrap_pi(x: float) -> float:
    """Wrap into (-pi, pi]."""
    y = math.fmod(x + math.pi, 2.0 * math.pi)
    if y <= 0.0:
        y += 2.0 * math.pi
    return y - math.pi


def merge_parameters(parts, cfg: PipelineConfig = None) -> MergedParameters:
    """Closed-form fusion of coplanar region summaries.

    Point counts add; the centroid is the count-weighted mean; the fused
    MSE is the inverse of summed inverse MSEs (floored at 1e-12 m^2); and
    normals fuse as inverse-MSE-weighted means of their spherical angles,
    with azimuths unwrapped around the first part to dodge the +-pi seam.
    """
    parts = list(parts)
    if not parts:
        raise ContractViolation("merge_parameters needs at least one region")
    if cfg is not None:
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                if not is_coplanar(parts[i], parts[j], cfg):
                    raise ContractViolation(f"regions {i} and {j} are not coplanar")
    n_total = sum(p.n_points for p in parts)
    centroid = sum(p.centroid * p.n_points for p in parts) / n_total
    inv = np.array([1.0 / max(p.mse, MSE_FLOOR) for p in parts])
    mse = 1.0 / inv.sum()
    theta = np.array([math.acos(min(1.0, max(-1.0, p.normal[2]))) for p in parts])
    phi = np.array([math.atan2(p.normal[1], p.normal[0]) for p in parts])
    phi = np.array([phi[0] + _wrap_pi(p - phi[0]) for p in phi])
    theta_m = mse * float(inv @ theta)
    phi_m = mse * float(inv @ phi)
    normal = np.array(
        [
            math.sin(theta_m) * math.cos(phi_m),
            math.sin(theta_m) * math.sin(phi_m),
            math.cos(theta_m),
        ]
    )
    return MergedParameters(int(n_total), centroid, normal, float(mse))


def rasterize(region: PlanarRegion, frame: PlaneFrame2D) -> PlaneMask:
    """Project the region's loops into `frame` and fill them cell-by-cell.

    Cells whose centers fall inside the outer loop but outside the holes
    are set; one empty guard cell is kept on every side so connectivity
    dilation and boundary tracing never clip.
    """
    res = frame.resolution
    loops = [frame.to_plane(region.contour)] + [frame.to_plane(h) for h in region.holes]
    outer = loops[0]
    row0 = int(math.floor(outer[:, 1].min() / res)) - 1
    col0 = int(math.floor(outer[:, 0].min() / res)) - 1
    rows = int(math.ceil(outer[:, 1].max() / res)) - row0 + 1
    cols = int(math.ceil(outer[:, 0].max() / res)) - col0 + 1
    bits = fill_loops(loops, res, row0, col0, rows, cols)
    if not bits.any():
        raise DegenerateProjectionError("region rasterized to an empty mask")
    return PlaneMask(bits, frame, (row0, col0))


def _common_window(m1: PlaneMask, m2: PlaneMask):
    r0 = min(m1.offset[0], m2.offset[0])
    c0 = min(m1.offset[1], m2.offset[1])
    r1 = max(m1.offset[0] + m1.bits.shape[0], m2.offset[0] + m2.bits.shape[0])
    c1 = max(m1.offset[1] + m1.bits.shape[1], m2.offset[1] + m2.bits.shape[1])
    return r0, c0, r1 - r0, c1 - c0


def _paste(bits, window, mask: PlaneMask):
    r0, c0 = window[0], window[1]
    i = mask.offset[0] - r0
    j = mask.offset[1] - c0
    bits[i : i + mask.bits.shape[0], j : j + mask.bits.shape[1]] |= mask.bits


def _require_same_frame(m1: PlaneMask, m2: PlaneMask):
    if not m1.frame.matches(m2.frame):
        raise ContractViolation("plane masks live in different frames")


def _dilate8(bits: np.ndarray) -> np.ndarray:
    p = np.pad(bits, 1)
    out = np.zeros_like(bits)
    for di in (0, 1, 2):
        for dj in (0, 1, 2):
            out |= p[di : di + bits.shape[0], dj : dj + bits.shape[1]]
    return out


def masks_connected(m1: PlaneMask, m2: PlaneMask) -> bool:
    """Overlap or one-cell adjacency between two masks on one frame."""
    _require_same_frame(m1, m2)
    r0, c0, rows, cols = _common_window(m1, m2)
    a = np.zeros((rows, cols), dtype=bool)
    b = np.zeros((rows, cols), dtype=bool)
    _paste(a, (r0, c0), m1)
    _paste(b, (r0, c0), m2)
    return bool((_dilate8(a) & b).any())


def mask_union(m1: PlaneMask, m2: PlaneMask) -> PlaneMask:
    """Cell-wise OR on the combined window."""
    _require_same_frame(m1, m2)
    r0, c0, rows, cols = _common_window(m1, m2)
    bits = np.zeros((rows, cols), dtype=bool)
    _paste(bits, (r0, c0), m1)
    _paste(bits, (r0, c0), m2)
    return PlaneMask(bits, m1.frame, (r0, c0))


def mask_boundary_2d(mask: PlaneMask):
    """Boundary loops of a mask in plane coordinates (meters).

    Loops run along cell edges, so a full 2x2 mask at resolution r comes
    back as the enclosing square of side 2r. Outer loops are counter-
    clockwise, holes clockwise.
    """
    outers, holes = trace_cell_edges(mask.bits)
    res = mask.frame.resolution
    shift = np.array([mask.offset[1], mask.offset[0]], dtype=np.float64)

    def lift(loop):
        return (loop + shift) * res

    return [lift(o) for o in outers], [lift(h) for h in holes]


def inv_rasterize(mask: PlaneMask):
    """World-frame boundary loops of a mask: (outer, holes).

    The largest outer loop wins (a union of connected masks has exactly
    one); holes inside it come along. All output vertices lie exactly on
    the mask's plane because they are built in the plane frame.
    """
    if not mask.bits.any():
        raise ValueError("cannot trace an empty mask")
    outers, holes = mask_boundary_2d(mask)
    outer = max(outers, key=shoelace_area)
    kept = [h for h in holes if points_in_loops(h[:1], [outer])[0]]
    return mask.frame.to_world(outer), tuple(mask.frame.to_world(h) for h in kept)


def merge_planes(historical, incoming, cfg: PipelineConfig):
    """Fold newly extracted regions into the historical map.

    Each new region scans the historical list; a coplanar, footprint-
    connected match fuses parameters, unions the two rasterized masks, and
    the re-traced merged region replaces the historical entry and keeps
    scanning (so one new observation can stitch several historical pieces
    together). Regions that never merge are appended unchanged.
    """
    hist = list(historical)
    for new_region in incoming:
        current = new_region
        merged_slot = None
        i = 0
        while i < len(hist):
            if merged_slot is not None and i == merged_slot:
                i += 1
                continue
            h = hist[i]
            if is_coplanar(current, h, cfg):
                params = merge_parameters([current, h])
                frame = PlaneFrame2D.for_plane(
                    params.normal, params.centroid, cfg.raster_resolution
                )
                try:
                    mask_n = rasterize(current, frame)
                    mask_h = rasterize(h, frame)
                except DegenerateProjectionError:
                    i += 1
                    continue
                if masks_connected(mask_n, mask_h):
                    outer, holes = inv_rasterize(mask_union(mask_n, mask_h))
                    current = PlanarRegion(
                        contour=outer,
                        holes=holes,
                        n_points=params.n_points,
                        centroid=params.centroid,
                        normal=params.normal,
                        mse=params.mse,
                    )
                    hist[i] = current
                    if merged_slot is not None:
                        del hist[merged_slot]
                        if merged_slot < i:
                            i -= 1
                    merged_slot = i
            i += 1
        if merged_slot is None:
            hist.append(current)
    return hist
