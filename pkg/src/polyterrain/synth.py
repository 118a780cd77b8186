"""Synthetic depth rendering with exact planar ground truth.

Every downstream accuracy metric is checked against scenes built here:
the renderer casts pixel rays against ground-truth polygons, so the true
plane parameters and boundaries are known by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CameraIntrinsics, CameraPose, DepthImage, quat_from_matrix
from .raster import points_in_loops


@dataclass(frozen=True)
class GroundTruthPlane:
    """A world-frame plane patch: unit normal plus its boundary polygon."""

    id: str
    normal: np.ndarray
    boundary: np.ndarray  # (N, 3) ordered loop on the plane

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        b = np.asarray(self.boundary, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 3 or len(b) < 3:
            raise ValueError("boundary must be an (N>=3, 3) loop")
        bias = float(n @ b[0])
        off = np.abs(b @ n - bias)
        if off.max() > 1e-9:
            raise ValueError(f"boundary of plane {self.id!r} off-plane by {off.max():.2e} m")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "boundary", b)

    @property
    def bias(self) -> float:
        return float(self.normal @ self.boundary[0])

    @property
    def centroid(self) -> np.ndarray:
        return self.boundary.mean(axis=0)


@dataclass
class Scene:
    planes: list = field(default_factory=list)


@dataclass(frozen=True)
class NoiseModel:
    """Depth noise: Gaussian std that grows with the square of range.

    sigma(z) = sigma_at_2m * (z / 2m)^2, applied to the z-depth, then
    quantized to multiples of `quantization` millimeters (0 = keep exact
    float depths).
    """

    sigma_at_2m: float = 0.008
    quantization: float = 1.0

    def __post_init__(self):
        if self.sigma_at_2m < 0 or self.quantization < 0:
            raise ValueError("noise parameters must be non-negative")

    def sigma(self, z: np.ndarray) -> np.ndarray:
        return self.sigma_at_2m * (z / 2.0) ** 2


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose whose camera looks from `eye` toward `target` (+z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = fwd / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("view direction parallel to up vector")
    x = x / nx
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return CameraPose(eye, quat_from_matrix(R))


def make_staircase(steps: int, rise: float, run: float, width: float) -> Scene:
    """Staircase ascending +x: `steps` horizontal treads and vertical risers.

    Tread k sits at height k*rise over x in [(k-1)*run, k*run]; riser k is
    the vertical face below tread k's leading edge. Risers face -x, treads
    face +z.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    if min(rise, run, width) <= 0:
        raise ValueError("stair dimensions must be positive")
    planes = []
    hw = width / 2.0
    for k in range(1, steps + 1):
        x0, x1 = (k - 1) * run, k * run
        z0, z1 = (k - 1) * rise, k * rise
        planes.append(
            GroundTruthPlane(
                id=f"riser_{k}",
                normal=np.array([-1.0, 0.0, 0.0]),
                boundary=np.array(
                    [[x0, -hw, z0], [x0, hw, z0], [x0, hw, z1], [x0, -hw, z1]]
                ),
            )
        )
        planes.append(
            GroundTruthPlane(
                id=f"tread_{k}",
                normal=np.array([0.0, 0.0, 1.0]),
                boundary=np.array(
                    [[x0, -hw, z1], [x1, -hw, z1], [x1, hw, z1], [x0, hw, z1]]
                ),
            )
        )
    return Scene(planes)


def make_tile_wall(nx: int, ny: int, tile: float, gap_depth: float, distance: float) -> Scene:
    """Grid of nx*ny square tiles facing -x, each offset in depth.

    Neighboring tiles alternate between two depths so the segmenter sees
    nx*ny distinct planes; used for plane-count scaling benchmarks.
    """
    planes = []
    for iy in range(ny):
        for iz in range(nx):
            x = distance + (0.0 if (iy + iz) % 2 == 0 else gap_depth)
            y0 = (iy - ny / 2.0) * tile
            z0 = (iz - nx / 2.0) * tile
            planes.append(
                GroundTruthPlane(
                    id=f"tile_{iy}_{iz}",
                    normal=np.array([-1.0, 0.0, 0.0]),
                    boundary=np.array(
                        [
                            [x, y0, z0],
                            [x, y0 + tile, z0],
                            [x, y0 + tile, z0 + tile],
                            [x, y0, z0 + tile],
                        ]
                    ),
                )
            )
    return Scene(planes)


def _plane_frame_axes(normal: np.ndarray):
    ref = np.array([1.0, 0.0, 0.0])
    ax = ref - (ref @ normal) * normal
    if np.linalg.norm(ax) < 1e-6:
        ref = np.array([0.0, 1.0, 0.0])
        ax = ref - (ref @ normal) * normal
    ax = ax / np.linalg.norm(ax)
    return ax, np.cross(normal, ax)


def render_depth(
    scene: Scene,
    intr: CameraIntrinsics,
    pose: CameraPose,
    noise: NoiseModel = NoiseModel(0.0, 0.0),
    rng: np.random.Generator | None = None,
) -> DepthImage:
    """Ray-cast the scene through every pixel center and z-buffer the hits.

    Stores z-depth (distance along the optical axis), not ray range,
    which matches how the segmenter back-projects pixels. Pixels with no
    hit are 0/invalid.
    """
    if not scene.planes:
        raise ValueError("scene has no planes")
    H, W = intr.height, intr.width
    u = np.arange(W, dtype=np.float64)
    v = np.arange(H, dtype=np.float64)
    xn = (u - intr.cx) / intr.f  # ray x/z
    yn = (v - intr.cy) / intr.f  # ray y/z
    XN, YN = np.meshgrid(xn, yn)

    R = pose.matrix()
    t = pose.translation
    zbuf = np.full((H, W), np.inf)

    for plane in scene.planes:
        n_cam = R.T @ plane.normal
        b_cam = plane.bias - float(plane.normal @ t)
        denom = n_cam[0] * XN + n_cam[1] * YN + n_cam[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = b_cam / denom
        hit = np.isfinite(z) & (z > 1e-6)
        if not hit.any():
            continue
        # project hit points into the plane's own 2D frame for the inside test
        ax, ay = _plane_frame_axes(plane.normal)
        zs = z[hit]
        pc = np.stack([XN[hit] * zs, YN[hit] * zs, zs], axis=1)
        pw = pc @ R.T + t
        rel = pw - plane.boundary[0]
        pts2 = np.stack([rel @ ax, rel @ ay], axis=1)
        rel_b = plane.boundary - plane.boundary[0]
        loop2 = np.stack([rel_b @ ax, rel_b @ ay], axis=1)
        inside = points_in_loops(pts2, [loop2])
        zcand = np.full(zs.shape, np.inf)
        zcand[inside] = zs[inside]
        sub = zbuf[hit]
        zbuf[hit] = np.minimum(sub, zcand)

    depth_m = np.where(np.isfinite(zbuf), zbuf, 0.0)
    valid = depth_m > 0
    if noise.sigma_at_2m > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        sig = noise.sigma(depth_m[valid])
        depth_m[valid] += rng.normal(0.0, 1.0, size=sig.shape) * sig

    mm = depth_m * 1000.0
    if noise.quantization > 0:
        mm[valid] = np.round(mm[valid] / noise.quantization) * noise.quantization
    mm[~valid] = 0.0
    # out-of-range sensor readings are dropped as invalid
    mm[(mm <= 0) | (mm > 65535)] = 0.0
    return DepthImage(W, H, mm)
