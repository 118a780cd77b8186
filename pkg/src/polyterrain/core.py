"""Shared geometric types, configuration, and frame transforms.

Conventions used throughout the package:

* Camera frame: +z forward along the optical axis, +x right, +y down.
* Quaternions are [w, x, y, z] and map camera-frame vectors into the
  world frame (world-from-camera).
* Lengths are meters internally; depth images carry millimeters because
  that is what the sensor files store.
* Plane normals are oriented toward the camera at first observation and
  keep that sign for the rest of their life in the world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class ContractViolation(Exception):
    """An internal pipeline precondition was broken by the caller."""


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model with square pixels and no distortion."""

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (0 < self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside (0, {self.width})")
        if not (0 < self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside (0, {self.height})")


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion [w, x, y, z]."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] of a proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera rigid transform."""

    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion [w, x, y, z]

    def __post_init__(self):
        object.__setattr__(self, "translation", _vec3(self.translation))
        q = np.asarray(self.rotation, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n} deviates from 1 by more than 1e-9")
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def inverse(self) -> "CameraPose":
        R = self.matrix()
        q = quat_from_matrix(R.T)
        return CameraPose(-R.T @ self.translation, q)


def transform_point(pose: CameraPose, p) -> np.ndarray:
    """Map a camera-frame point into the world frame."""
    return pose.matrix() @ _vec3(p) + pose.translation


def transform_points(pose: CameraPose, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`transform_point` for an (N, 3) array."""
    return np.asarray(pts, dtype=np.float64) @ pose.matrix().T + pose.translation


def plane_bias(normal, centroid) -> float:
    """Offset of the plane through `centroid` along its unit `normal`."""
    return float(np.dot(_vec3(normal), _vec3(centroid)))


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth grid in millimeters; 0 marks an invalid pixel."""

    width: int
    height: int
    data: np.ndarray  # (height, width) float64, mm

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (self.height, self.width):
            raise ValueError(
                f"depth data shape {d.shape} does not match {self.height}x{self.width}"
            )
        valid = d > 0
        if np.any(d < 0) or np.any(d[valid] > 65535):
            raise ValueError("valid depths must lie in (0, 65535] mm")
        object.__setattr__(self, "data", d)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.data > 0


@dataclass(frozen=True)
class OrganizedCloud:
    """Per-pixel 3D back-projection of a depth image, camera frame, meters.

    Grid adjacency of the source image is preserved: points[v, u] is the
    back-projection of pixel (u, v). Invalid pixels carry (0, 0, 0) and a
    cleared bit in `valid`.
    """

    width: int
    height: int
    points: np.ndarray  # (height, width, 3)
    valid: np.ndarray  # (height, width) bool

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if p.shape != (self.height, self.width, 3) or v.shape != (self.height, self.width):
            raise ValueError("organized cloud arrays do not match declared size")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "valid", v)


def _check_loop_on_plane(loop: np.ndarray, normal: np.ndarray, bias: float, tol: float, what: str):
    if loop.ndim != 2 or loop.shape[1] != 3 or loop.shape[0] < 3:
        raise ValueError(f"{what} must be an (N>=3, 3) vertex loop, got shape {loop.shape}")
    off = np.abs(loop @ normal - bias)
    if off.max() > tol:
        raise ValueError(f"{what} vertex off plane by {off.max():.3e} m (tol {tol:g})")


@dataclass(frozen=True)
class PlanarRegion:
    """One planar region: boundary loops plus the fitted plane summary.

    `contour` is the outer boundary loop; `holes` are inner loops. All
    vertices lie on the plane defined by `normal` and `centroid`, in
    whatever frame the region currently lives in (camera frame right
    after segmentation, world frame once stored in the map).
    """

    contour: np.ndarray  # (N, 3)
    n_points: int
    centroid: np.ndarray  # (3,)
    normal: np.ndarray  # unit (3,)
    mse: float
    holes: tuple = ()

    def __post_init__(self):
        c = _vec3(self.centroid)
        n = _vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("region normal must be unit length within 1e-9")
        if self.mse < 0:
            raise ValueError("mse must be non-negative")
        if self.n_points < 1:
            raise ValueError("a region needs at least one supporting point")
        contour = np.asarray(self.contour, dtype=np.float64)
        b = float(n @ c)
        _check_loop_on_plane(contour, n, b, 1e-6, "contour")
        holes = tuple(np.asarray(h, dtype=np.float64) for h in self.holes)
        for h in holes:
            _check_loop_on_plane(h, n, b, 1e-6, "hole")
        object.__setattr__(self, "contour", contour)
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "holes", holes)
        object.__setattr__(self, "mse", float(self.mse))
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def bias(self) -> float:
        return plane_bias(self.normal, self.centroid)


def _projected_turns(vertices: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Signed turn at every vertex, seen from +normal."""
    prev = np.roll(vertices, 1, axis=0)
    nxt = np.roll(vertices, -1, axis=0)
    return np.cross(vertices - prev, nxt - vertices) @ normal


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex planar loop, counterclockwise when viewed from +normal."""

    normal: np.ndarray
    vertices: np.ndarray  # (N, 3)

    def __post_init__(self):
        n = _vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("polygon normal must be unit length")
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 vertices")
        b = float(n @ v.mean(axis=0))
        off = np.abs(v @ n - b)
        if off.max() > 1e-6:
            raise ValueError(f"polygon not coplanar: max offset {off.max():.3e} m")
        turns = _projected_turns(v, n)
        scale = float(np.abs(v - v.mean(axis=0)).max()) or 1.0
        if turns.min() < -1e-9 * scale * scale:
            raise ValueError("polygon is not convex/counterclockwise from +normal")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "vertices", v)


@dataclass
class PlanarMap:
    """Global collection of planar regions with their convex partitions."""

    regions: list = field(default_factory=list)
    polygons: list = field(default_factory=list)  # list of lists of ConvexPolygon

    def __post_init__(self):
        if len(self.polygons) != len(self.regions):
            raise ValueError("polygons must have one entry (a list) per region")
        for region, polys in zip(self.regions, self.polygons):
            for p in polys:
                if np.linalg.norm(p.normal - region.normal) > 1e-9:
                    raise ValueError("polygon normal differs from its region's normal")


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable thresholds for the whole pipeline.

    cell_size           pixels per side of a segmentation cell
    seed_mse_max        plane-fit MSE bound for planar/seed cells, m^2
    discontinuity_max   max adjacent-pixel depth jump inside a seed cell, m
    tau_theta           coplanarity tolerance on 1 - |n1.n2|
    tau_b               coplanarity tolerance on plane bias difference, m
    raster_resolution   plane-mask cell edge, m
    epsilon             contour simplification area threshold, m^2
    foot_diameter       robot foot diameter guarding concave cuts, m
    refine_dist_max     point-plane distance bound during pixel refinement, m
    """

    cell_size: int = 20
    seed_mse_max: float = 2.5e-5
    discontinuity_max: float = 0.05
    tau_theta: float = 1.0 - math.cos(math.radians(5.0))
    tau_b: float = 0.02
    raster_resolution: float = 0.01
    epsilon: float = 9e-4
    foot_diameter: float = 0.1
    refine_dist_max: float = 0.05

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ValueError(f"config field {name} must be strictly positive")

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        unknown = set(overrides) - set(self.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return replace(self, **overrides)
