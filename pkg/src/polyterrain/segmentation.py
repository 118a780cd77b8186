"""Single-frame plane extraction from an organized depth image.

The frame is cut into square pixel cells; each cell gets a PCA plane fit
from exact first/second moments. Low-error cells seed region growing over
the 4-connected cell grid, ordered by a histogram of cell normals, and
cell-level boundaries are then refined per pixel. Region contours are
traced in image space and back-projected onto each region's plane, so
every emitted vertex satisfies the region's plane equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from . import _kernels
from .core import CameraIntrinsics, DepthImage, OrganizedCloud, PipelineConfig, PlanarRegion
from .raster import points_in_loops, shoelace_area

# cells below this fill never take part in growing
MIN_CELL_POINTS = 6
# grown regions smaller than this many cells are discarded as speckle
MIN_REGION_CELLS = 4
# sphere histogram binning for growth ordering
POLAR_BINS = 6  # 30 degree bands
AZIMUTH_BINS = 8  # 45 degree sectors


class RankDeficientCellError(ValueError):
    """Cell points are coincident/collinear; no unique plane exists."""


class EmptyRegionError(ValueError):
    """A region mask contained no pixels."""


class GrazingRayError(ValueError):
    """A contour pixel's ray runs (nearly) parallel to the region plane."""


def build_organized_cloud(depth: DepthImage, intr: CameraIntrinsics) -> OrganizedCloud:
    """Back-project every valid pixel through the pinhole model."""
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise ValueError(
            f"depth {depth.width}x{depth.height} does not match intrinsics "
            f"{intr.width}x{intr.height}"
        )
    # invalid pixels carry depth 0, so their coordinates are zero for free;
    # plane-major layout keeps the three writes contiguous, the (H, W, 3)
    # view costs nothing
    z = depth.data * 1e-3
    valid = depth.data > 0
    u = np.arange(depth.width, dtype=np.float64)
    v = np.arange(depth.height, dtype=np.float64)
    xn = (u - intr.cx) / intr.f
    yn = (v - intr.cy) / intr.f
    planes = np.empty((3, depth.height, depth.width))
    np.multiply(z, xn[None, :], out=planes[0])
    np.multiply(z, yn[:, None], out=planes[1])
    planes[2] = z
    return OrganizedCloud(depth.width, depth.height, planes.transpose(1, 2, 0), valid)


def orient_toward_camera(normal: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Flip `normal` so it points from `point` toward the camera origin.

    Planes through the origin get a deterministic canonical sign instead.
    """
    b = float(normal @ point)
    if b > 1e-12:
        return -normal
    if b >= -1e-12:
        for k in (2, 0, 1):
            if normal[k] > 1e-12:
                return -normal
            if normal[k] < -1e-12:
                break
    return normal


def fit_cell_plane(points):
    """Least-squares plane through a point cluster.

    Returns (normal, mean, mse): the unit normal is the smallest-eigenvalue
    eigenvector of the centered scatter matrix, oriented toward the camera
    origin; mse is the mean squared point-plane residual. Raises
    RankDeficientCellError when the cluster has no unique plane.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    k = len(pts)
    if k < 3:
        raise RankDeficientCellError(f"need at least 3 points, got {k}")
    mean = pts.mean(axis=0)
    q = pts - mean
    scatter = q.T @ q
    w, vecs = np.linalg.eigh(scatter)
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise RankDeficientCellError("points are collinear or coincident")
    normal = orient_toward_camera(vecs[:, 0], mean)
    mse = max(float(w[0]), 0.0) / k
    return normal, mean, mse


@dataclass(frozen=True)
class Cell:
    row: int
    col: int
    count: int
    mean: np.ndarray | None
    normal: np.ndarray | None
    mse: float | None
    planar: bool


@dataclass
class CellGrid:
    """Per-cell statistics for one frame; arrays indexed [row, col]."""

    rows: int
    cols: int
    cell_size: int
    count: np.ndarray
    sums: np.ndarray  # (R, C, 3) coordinate sums
    mean: np.ndarray  # (R, C, 3)
    scatter: np.ndarray  # (R, C, 6) centered, order xx xy xz yy yz zz
    normal: np.ndarray  # (R, C, 3), zeros where not planar
    mse: np.ndarray  # (R, C), inf where not planar
    jump: np.ndarray  # (R, C) max internal depth step, m
    full: np.ndarray  # (R, C) bool, every pixel valid
    planar: np.ndarray  # (R, C) bool

    def cell(self, row: int, col: int) -> Cell:
        p = bool(self.planar[row, col])
        return Cell(
            row,
            col,
            int(self.count[row, col]),
            self.mean[row, col].copy() if self.count[row, col] else None,
            self.normal[row, col].copy() if p else None,
            float(self.mse[row, col]) if p else None,
            p,
        )


def _scatter_matrix(flat6: np.ndarray) -> np.ndarray:
    """Expand (..., 6) packed symmetric entries into (..., 3, 3)."""
    out = np.empty(flat6.shape[:-1] + (3, 3))
    out[..., 0, 0] = flat6[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = flat6[..., 1]
    out[..., 0, 2] = out[..., 2, 0] = flat6[..., 2]
    out[..., 1, 1] = flat6[..., 3]
    out[..., 1, 2] = out[..., 2, 1] = flat6[..., 4]
    out[..., 2, 2] = flat6[..., 5]
    return out


def _eig3_batch(S6: np.ndarray):
    """Closed-form eigen-solve of packed symmetric 3x3 matrices.

    Returns (eigenvector of the smallest eigenvalue (K, 3), eigenvalues
    ascending (K, 3), ok (K,)). Used for the per-cell fits where speed
    matters; emitted regions are re-solved with LAPACK for full precision.
    """
    a00, a01, a02, a11, a12, a22 = (S6[:, k] for k in range(6))
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    ok = p2 > 0
    p = np.sqrt(np.maximum(p2, 1e-300) / 6.0)
    b00 = (a00 - q) / p
    b01 = a01 / p
    b02 = a02 / p
    b11 = (a11 - q) / p
    b12 = a12 / p
    b22 = (a22 - q) / p
    detb = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    phi = np.arccos(np.clip(detb / 2.0, -1.0, 1.0)) / 3.0
    lam_hi = q + 2.0 * p * np.cos(phi)
    lam_lo = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    lam_mid = 3.0 * q - lam_hi - lam_lo

    m00 = a00 - lam_lo
    m11 = a11 - lam_lo
    m22 = a22 - lam_lo
    cands = np.stack(
        [
            np.stack([a01 * a12 - a02 * m11, a02 * a01 - m00 * a12, m00 * m11 - a01 * a01], -1),
            np.stack([a01 * m22 - a02 * a12, a02 * a02 - m00 * m22, m00 * a12 - a01 * a02], -1),
            np.stack([m11 * m22 - a12 * a12, a12 * a02 - a01 * m22, a01 * a12 - m11 * a02], -1),
        ],
        axis=1,
    )  # (K, 3 candidates, 3)
    norms = np.sum(cands * cands, axis=2)
    pick = np.argmax(norms, axis=1)
    rows = np.arange(len(S6))
    vec = cands[rows, pick]
    bn = norms[rows, pick]
    scale = np.abs(a00) + np.abs(a11) + np.abs(a22) + 2 * (np.abs(a01) + np.abs(a02) + np.abs(a12))
    ok &= bn > (1e-14 * scale) ** 2
    vec = vec / np.sqrt(np.maximum(bn, 1e-300))[:, None]
    lams = np.stack([lam_lo, lam_mid, lam_hi], axis=1)
    return vec, lams, ok


def fit_cells(depth: DepthImage, intr: CameraIntrinsics, cfg: PipelineConfig) -> CellGrid:
    """Plane-fit every full cell of the frame."""
    count, ssum, mean, scat, jump, full = _kernels.cell_stats(
        depth.data, intr.f, intr.cx, intr.cy, cfg.cell_size
    )
    R, C = count.shape
    normal = np.zeros((R, C, 3))
    mse = np.full((R, C), np.inf)
    planar = np.zeros((R, C), dtype=bool)
    enough = count >= MIN_CELL_POINTS
    if enough.any():
        n, w, solved = _eig3_batch(scat[enough])
        nondeg = solved & (w[:, 1] > 1e-12 * np.maximum(w[:, 2], 1e-300))
        m = mean[enough]
        flip = np.einsum("ij,ij->i", n, m) > 0
        n[flip] = -n[flip]
        cell_mse = np.maximum(w[:, 0], 0.0) / count[enough]
        ok = nondeg & (cell_mse <= cfg.seed_mse_max)
        idx = np.nonzero(enough)
        normal[idx[0][ok], idx[1][ok]] = n[ok]
        mse[idx[0][ok], idx[1][ok]] = cell_mse[ok]
        planar[idx[0][ok], idx[1][ok]] = True
    return CellGrid(
        R, C, cfg.cell_size, count, ssum, mean, scat, normal, mse, jump, full.astype(bool), planar
    )


def select_seeds(cells: CellGrid, cfg: PipelineConfig) -> np.ndarray:
    """Seed cells ordered for growing: planar, fully valid, no depth jump.

    Ordering follows the histogram of planar cell normals on the sphere
    (30 deg polar x 45 deg azimuth bins): seeds of more populous bins come
    first; within a bin lower fit MSE wins, then row-major position.
    Returns an (K, 2) array of (row, col).
    """
    seedable = cells.planar & cells.full & (cells.jump < cfg.discontinuity_max)
    if not cells.planar.any():
        return np.zeros((0, 2), dtype=np.int64)
    n = cells.normal[cells.planar]
    theta = np.arccos(np.clip(n[:, 2], -1.0, 1.0))
    phi = np.arctan2(n[:, 1], n[:, 0])
    pol = np.minimum((theta / (math.pi / POLAR_BINS)).astype(np.int64), POLAR_BINS - 1)
    az = ((phi + math.pi) / (2 * math.pi / AZIMUTH_BINS)).astype(np.int64) % AZIMUTH_BINS
    bins = pol * AZIMUTH_BINS + az
    population = np.bincount(bins, minlength=POLAR_BINS * AZIMUTH_BINS)

    rows, cols = np.nonzero(seedable)
    if len(rows) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    ns = cells.normal[rows, cols]
    ts = np.arccos(np.clip(ns[:, 2], -1.0, 1.0))
    ps = np.arctan2(ns[:, 1], ns[:, 0])
    pol_s = np.minimum((ts / (math.pi / POLAR_BINS)).astype(np.int64), POLAR_BINS - 1)
    az_s = ((ps + math.pi) / (2 * math.pi / AZIMUTH_BINS)).astype(np.int64) % AZIMUTH_BINS
    bin_s = pol_s * AZIMUTH_BINS + az_s
    order = np.lexsort((cols, rows, cells.mse[rows, cols], bin_s, -population[bin_s]))
    return np.stack([rows[order], cols[order]], axis=1).astype(np.int64)


def grow_regions(cells: CellGrid, seeds: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Grow planar regions over the cell grid; returns the cell label grid.

    A neighbor joins when its normal stays within the angle budget implied
    by tau_theta and its mean lies within tau_b of the growing plane; the
    plane is refit from exact merged moments after every admission.
    """
    seeds = np.ascontiguousarray(np.asarray(seeds, dtype=np.int64).reshape(-1, 2))
    labels, _ = _kernels.grow(
        cells.planar.astype(np.uint8),
        cells.normal,
        cells.mean,
        cells.count,
        cells.sums,
        cells.scatter,
        seeds,
        cfg.tau_theta,
        cfg.tau_b,
        MIN_REGION_CELLS,
    )
    return labels


@dataclass(frozen=True)
class SegmentLabelImage:
    """Pixel labels for one frame: -1 unlabeled, else dense region ids."""

    width: int
    height: int
    labels: np.ndarray  # (height, width) int32
    n_regions: int


def _region_plane_params(counts, sums, scatters):
    """Exact plane parameters from per-region aggregated moments."""
    M = len(counts)
    normals = np.zeros((M, 3))
    biases = np.zeros(M)
    mses = np.full(M, np.inf)
    good = np.zeros(M, dtype=bool)
    for r in range(M):
        if counts[r] < 3:
            continue
        S = _scatter_matrix(scatters[r])
        w, vecs = np.linalg.eigh(S)
        if w[1] <= 1e-12 * max(w[2], 1e-300):
            continue
        mean = sums[r] / counts[r]
        n = orient_toward_camera(vecs[:, 0], mean)
        normals[r] = n
        biases[r] = n @ mean
        mses[r] = max(w[0], 0.0) / counts[r]
        good[r] = True
    return normals, biases, mses, good


def _aggregate_cell_stats(cells: CellGrid, cell_labels: np.ndarray, n_regions: int):
    """Combine per-cell moments into exact per-region moments."""
    counts = np.zeros(n_regions, dtype=np.int64)
    sums = np.zeros((n_regions, 3))
    lab = cell_labels.ravel()
    sel = lab >= 0
    labs = lab[sel]
    counts += np.bincount(labs, weights=cells.count.ravel()[sel], minlength=n_regions).astype(
        np.int64
    )
    for k in range(3):
        sums[:, k] = np.bincount(
            labs, weights=cells.sums.reshape(-1, 3)[sel, k], minlength=n_regions
        )
    means = np.zeros_like(sums)
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz, None]
    # total centered scatter = sum of cell scatters + spread of cell means
    scatters = np.zeros((n_regions, 6))
    cmean = cells.mean.reshape(-1, 3)[sel]
    ccount = cells.count.ravel()[sel].astype(np.float64)
    d = cmean - means[labs]
    prods = np.stack(
        [
            d[:, 0] * d[:, 0],
            d[:, 0] * d[:, 1],
            d[:, 0] * d[:, 2],
            d[:, 1] * d[:, 1],
            d[:, 1] * d[:, 2],
            d[:, 2] * d[:, 2],
        ],
        axis=1,
    )
    cscat = cells.scatter.reshape(-1, 6)[sel]
    for k in range(6):
        scatters[:, k] = np.bincount(
            labs, weights=cscat[:, k] + ccount * prods[:, k], minlength=n_regions
        )
    return counts, sums, scatters


def refine_boundaries(
    cell_labels: np.ndarray, cloud: OrganizedCloud, cfg: PipelineConfig, cells: CellGrid = None
) -> SegmentLabelImage:
    """Pixel-level relabeling along the cell-label boundary band.

    Interior pixels keep their cell's label; pixels within one cell of a
    label change join the adjacent region with the nearest plane, subject
    to the refine_dist_max distance bound (which is also enforced for
    interior pixels so every labeled point is near its plane). Labels are
    re-numbered densely over regions that kept at least one pixel.
    """
    seg, _, _, _ = _refine_full(cell_labels, cloud, cfg, cells)
    return seg


def _refine_full(cell_labels, cloud, cfg, cells=None):
    """refine_boundaries plus the per-region pixel counts and sums."""
    cell_labels = np.asarray(cell_labels, dtype=np.int32)
    n_in = int(cell_labels.max()) + 1 if cell_labels.size and cell_labels.max() >= 0 else 0
    if n_in == 0:
        empty = SegmentLabelImage(
            cloud.width, cloud.height, np.full((cloud.height, cloud.width), -1, np.int32), 0
        )
        return empty, np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 4), np.int64)
    if cells is not None:
        counts, sums, scatters = _aggregate_cell_stats(cells, cell_labels, n_in)
    else:
        counts, sums, scatters = _pixel_stats_by_cell_labels(cell_labels, cloud, n_in)
    normals, biases, _, good = _region_plane_params(counts, sums, scatters)
    # regions whose aggregate fit degenerated cannot claim pixels
    biases = np.where(good, biases, np.inf)
    labels, pix_counts, pix_sums, pix_bbox = _kernels.refine(
        cloud.points,
        cloud.valid.astype(np.uint8),
        cell_labels,
        normals,
        biases,
        cells.cell_size if cells is not None else _infer_cell_size(cell_labels, cloud),
        cfg.refine_dist_max,
    )
    # refinement can strip a small region down to a speckle; regions that
    # keep less than half their minimum cell budget of pixels are dropped
    cell = cells.cell_size if cells is not None else _infer_cell_size(cell_labels, cloud)
    min_pixels = MIN_REGION_CELLS * cell * cell // 2
    present = np.nonzero(pix_counts >= max(min_pixels, 3))[0]
    remap = np.full(n_in + 1, -1, np.int32)
    remap[present] = np.arange(len(present), dtype=np.int32)
    out = remap[labels]  # labels of -1 hit the sentinel slot and stay -1
    seg = SegmentLabelImage(cloud.width, cloud.height, out, len(present))
    return seg, pix_counts[present], pix_sums[present], pix_bbox[present]


def _infer_cell_size(cell_labels: np.ndarray, cloud: OrganizedCloud) -> int:
    R, C = cell_labels.shape
    size_r = cloud.height // R
    size_c = cloud.width // C
    if size_r != size_c:
        raise ValueError("cell grid does not evenly tile the image")
    return size_r


def _pixel_stats_by_cell_labels(cell_labels: np.ndarray, cloud: OrganizedCloud, n: int):
    """Reference path: per-region moments straight from cell pixels."""
    cell = _infer_cell_size(cell_labels, cloud)
    R, C = cell_labels.shape
    pix = np.full((cloud.height, cloud.width), -1, np.int32)
    up = np.kron(cell_labels, np.ones((cell, cell), dtype=np.int32))
    pix[: R * cell, : C * cell] = up
    pix[~cloud.valid] = -1
    return _moments_by_label(pix, cloud, n)


def _moments_by_label(labels: np.ndarray, cloud: OrganizedCloud, n: int):
    lab = labels.ravel()
    sel = lab >= 0
    labs = lab[sel]
    pts = cloud.points.reshape(-1, 3)[sel]
    counts = np.bincount(labs, minlength=n).astype(np.int64)
    sums = np.stack([np.bincount(labs, weights=pts[:, k], minlength=n) for k in range(3)], axis=1)
    means = np.zeros_like(sums)
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz, None]
    d = pts - means[labs]
    scatters = np.stack(
        [
            np.bincount(labs, weights=d[:, 0] * d[:, 0], minlength=n),
            np.bincount(labs, weights=d[:, 0] * d[:, 1], minlength=n),
            np.bincount(labs, weights=d[:, 0] * d[:, 2], minlength=n),
            np.bincount(labs, weights=d[:, 1] * d[:, 1], minlength=n),
            np.bincount(labs, weights=d[:, 1] * d[:, 2], minlength=n),
            np.bincount(labs, weights=d[:, 2] * d[:, 2], minlength=n),
        ],
        axis=1,
    )
    return counts, sums, scatters


def extract_contour(mask: np.ndarray):
    """Boundary loops of a binary image via border following.

    Returns (outers, holes): integer (K, 2) arrays of (u, v) pixel
    coordinates on 8-connected foreground. Outer loops run counter-
    clockwise in image coordinates, holes clockwise; refilling the loops
    (even-odd, plus the loop pixels themselves) reproduces the mask.
    """
    m = np.asarray(mask)
    if m.dtype != np.uint8:
        m = m.astype(bool).astype(np.uint8)
    padded = cv2.copyMakeBorder(m, 1, 1, 1, 1, cv2.BORDER_CONSTANT, value=0)
    cnts, hier = cv2.findContours(padded, cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE, offset=(-1, -1))
    if hier is None:
        raise EmptyRegionError("mask has no foreground pixels")
    outers, holes = [], []
    for c, h in zip(cnts, hier[0]):
        pts = c.reshape(-1, 2).astype(np.int64)
        area = shoelace_area(pts) if len(pts) >= 3 else 0.0
        if h[3] == -1:
            if area > 0:
                pts = pts[::-1]
            outers.append(pts)
        else:
            if area < 0:
                pts = pts[::-1]
            holes.append(pts)
    return outers, holes


def backproject_contour(vertices_img, plane, intr: CameraIntrinsics, drop_grazing: bool = False):
    """Lift 2D contour pixels onto a 3D plane through the pinhole model.

    `plane` is (normal, point_on_plane). Each pixel ray is intersected
    with the plane, so outputs satisfy the plane equation exactly (up to
    float error). Rays within 1e-9 of parallel raise GrazingRayError, or
    are dropped when drop_grazing is set.
    """
    normal, point = plane
    normal = np.asarray(normal, dtype=np.float64)
    b = float(normal @ np.asarray(point, dtype=np.float64))
    pts = np.asarray(vertices_img, dtype=np.float64).reshape(-1, 2)
    xn = (pts[:, 0] - intr.cx) / intr.f
    yn = (pts[:, 1] - intr.cy) / intr.f
    denom = normal[0] * xn + normal[1] * yn + normal[2]
    bad = np.abs(denom) < 1e-9
    if bad.any() and not drop_grazing:
        raise GrazingRayError(f"{int(bad.sum())} contour rays graze the plane")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = b / denom
    keep = ~bad & (z > 0)
    if not drop_grazing:
        keep = ~bad
    z = z[keep]
    return np.stack([z * xn[keep], z * yn[keep], z], axis=1)


def segment_frame(
    depth: DepthImage, intr: CameraIntrinsics, cfg: PipelineConfig, return_labels: bool = False
):
    """Full single-frame extraction; regions are in the camera frame."""
    cloud = build_organized_cloud(depth, intr)
    cells = fit_cells(depth, intr, cfg)
    seeds = select_seeds(cells, cfg)
    cell_labels = grow_regions(cells, seeds, cfg)
    seg, counts, sums, bboxes = _refine_full(cell_labels, cloud, cfg, cells=cells)

    regions = []
    if seg.n_regions:
        means = sums / counts[:, None]
        scatters = _kernels.region_scatters(cloud.points, seg.labels, means)
        normals, biases, mses, good = _region_plane_params(counts, sums, scatters)
        for r in range(seg.n_regions):
            if not good[r]:
                continue
            region = _region_from_mask(
                seg.labels, r, bboxes[r], normals[r], means[r], int(counts[r]), float(mses[r]), intr
            )
            if region is not None:
                regions.append(region)
    if return_labels:
        return regions, seg
    return regions


def _region_from_mask(labels, r, bbox, normal, centroid, n_points, mse, intr):
    v0, v1, u0, u1 = (int(b) for b in bbox)
    crop = labels[v0 : v1 + 1, u0 : u1 + 1]
    mask = cv2.compare(crop, r, cv2.CMP_EQ)  # uint8 0/255, C-speed
    try:
        outers, holes = extract_contour(mask)
    except EmptyRegionError:
        return None
    shift = np.array([u0, v0], dtype=np.int64)
    outers = [o + shift for o in outers]
    holes = [h + shift for h in holes]
    best = max(outers, key=lambda o: abs(shoelace_area(o)) if len(o) >= 3 else 0.0)
    if len(best) < 3:
        return None
    my_holes = [h for h in holes if len(h) >= 3 and points_in_loops(h[:1].astype(float), [best])[0]]
    plane = (normal, centroid)
    contour3 = backproject_contour(best, plane, intr, drop_grazing=True)
    if len(contour3) < 3:
        return None
    holes3 = []
    for h in my_holes:
        h3 = backproject_contour(h, plane, intr, drop_grazing=True)
        if len(h3) >= 3:
            holes3.append(h3)
    return PlanarRegion(
        contour=contour3,
        holes=tuple(holes3),
        n_points=n_points,
        centroid=centroid,
        normal=normal,
        mse=mse,
    )
