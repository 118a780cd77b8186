"""Contour simplification and convex partitioning of planar regions.

Simplification greedily removes the vertex whose elimination triangle has
the smallest area (min-heap order, ties by original index), stopping once
the smallest error exceeds the threshold. Removing a vertex that is
concave for the solid dilates the region, so such vertices fall only when
the elimination triangle's inscribed circle is smaller than the robot
foot; otherwise they are preserved forever. The simplified loop is then
split into convex pieces by extending the incoming edge at each concave
vertex to its first boundary intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ContractViolation, ConvexPolygon, PipelineConfig, PlanarRegion
from .raster import points_in_loops, shoelace_area


def triangle_error(v_prev, v, v_next) -> float:
    """Area of the elimination triangle for the middle vertex."""
    ax, ay = v_prev
    bx, by = v
    cx, cy = v_next
    return abs((bx - ax) * (cy - by) - (by - ay) * (cx - bx)) * 0.5


def inscribed_circle_diameter(v_prev, v, v_next) -> float:
    """Incircle diameter 2*area/semiperimeter; 0 for degenerate triangles."""
    ax, ay = v_prev
    bx, by = v
    cx, cy = v_next
    area2 = abs((bx - ax) * (cy - by) - (by - ay) * (cx - bx))
    per = math.hypot(bx - ax, by - ay) + math.hypot(cx - bx, cy - by) + math.hypot(
        ax - cx, ay - cy
    )
    if per <= 0.0:
        return 0.0
    return 2.0 * area2 / per


def is_convex_vertex(v_prev, v, v_next, orientation: int = 1) -> bool:
    """Whether the turn at `v` matches the loop orientation (+1 = CCW).

    A zero cross product (collinear) counts as convex, so straight-line
    vertices are always removable at zero error.
    """
    ax, ay = v_prev
    bx, by = v
    cx, cy = v_next
    cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
    return cross * orientation >= 0.0


@dataclass
class SimplifyLog:
    """Removal record used by safety audits and complexity checks."""

    removed_indices: np.ndarray  # original vertex indices, removal order
    triangles: np.ndarray  # (K, 3, 2) elimination triangles at removal time
    concave: np.ndarray  # (K,) bool: removal dilated the solid
    incircle: np.ndarray  # (K,) incircle diameters (0 where convex)
    preserved: np.ndarray  # (N,) bool: guard kept the vertex forever
    heap_pushes: int
    heap_pops: int


def simplify_contour(
    contour: np.ndarray,
    epsilon: float,
    foot_diameter: float,
    orientation: int = 1,
    return_log: bool = False,
):
    """Min-heap greedy vertex elimination with the foot-size guard.

    `orientation` declares which winding keeps the solid on the left
    (+1 CCW, -1 CW): vertices turning with that winding are convex for
    the solid and removable unconditionally; opposite turns are concave
    and removable only when their elimination triangle's incircle
    diameter is below `foot_diameter`, else they are preserved forever.
    Hole loops are simplified by passing the orientation of the *solid*
    rather than of the hole itself, which inverts the roles and keeps
    hole edits conservative. The result is a subsequence of the input
    and never has fewer than 3 vertices.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ContractViolation(f"simplify needs an (N>=3, 2) loop, got {pts.shape}")
    work = pts
    pre = None
    if not return_log and len(pts) > 64:
        # exactly collinear vertices cost zero error and are always convex,
        # so the greedy loop removes them all first regardless of order;
        # dropping them up front is output-identical and much cheaper
        prev = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
        cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (
            pts[:, 1] - prev[:, 1]
        ) * (nxt[:, 0] - pts[:, 0])
        pre = cross != 0.0
        if pre.sum() >= 3:
            work = pts[pre]
        else:
            pre = None
    alive, preserved, rem_idx, rem_tri, rem_concave, rem_d, nrem, pushes, pops = (
        _kernels.simplify_loop(
            np.ascontiguousarray(work[:, 0]),
            np.ascontiguousarray(work[:, 1]),
            float(epsilon),
            float(foot_diameter),
            float(orientation),
        )
    )
    out = work[alive.astype(bool)]
    if not return_log:
        return out
    log = SimplifyLog(
        removed_indices=rem_idx[:nrem].copy(),
        triangles=rem_tri[:nrem].reshape(-1, 3, 2).copy(),
        concave=rem_concave[:nrem].astype(bool),
        incircle=rem_d[:nrem].copy(),
        preserved=preserved.astype(bool),
        heap_pushes=int(pushes),
        heap_pops=int(pops),
    )
    return out, log


# ---------------------------------------------------------------------------
# Convex partition


def _loop_scale(pts: np.ndarray) -> float:
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(max(span[0], span[1], 1e-30))


def _is_simple_small(pts, eps: float) -> bool:
    """Loop-based simplicity test; beats array overhead for short loops."""
    n = len(pts)
    x = pts[:, 0].tolist()
    y = pts[:, 1].tolist()
    for i in range(n - 2):
        p1x, p1y = x[i], y[i]
        p2x, p2y = x[i + 1], y[i + 1]
        e1x, e1y = p2x - p1x, p2y - p1y
        for j in range(i + 2, n if i > 0 else n - 1):
            q1x, q1y = x[j], y[j]
            jn = j + 1 if j + 1 < n else 0
            q2x, q2y = x[jn], y[jn]
            d1 = e1x * (q1y - p1y) - e1y * (q1x - p1x)
            d2 = e1x * (q2y - p1y) - e1y * (q2x - p1x)
            if (d1 > eps and d2 > eps) or (d1 < -eps and d2 < -eps):
                continue
            e2x, e2y = q2x - q1x, q2y - q1y
            d3 = e2x * (p1y - q1y) - e2y * (p1x - q1x)
            d4 = e2x * (p2y - q1y) - e2y * (p2x - q1x)
            if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
                (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
            ):
                return False
            if abs(d1) <= eps and abs(d2) <= eps:
                L = e1x * e1x + e1y * e1y
                if L > 0:
                    t1 = ((q1x - p1x) * e1x + (q1y - p1y) * e1y) / L
                    t2 = ((q2x - p1x) * e1x + (q2y - p1y) * e1y) / L
                    lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
                    if min(hi, 1.0) - max(lo, 0.0) > 1e-9:
                        return False
    return True


def polygon_is_simple(pts: np.ndarray, tol: float = 1e-12) -> bool:
    """No proper edge crossings or collinear overlaps (vertex touches pass)."""
    n = len(pts)
    if n < 4:
        return True
    a = pts
    b = np.roll(pts, -1, axis=0)
    scale = _loop_scale(pts)
    eps = tol * scale * scale
    if n <= 40:
        return _is_simple_small(pts, eps)
    ii, jj = np.triu_indices(n, k=2)
    adjacent = (ii == 0) & (jj == n - 1)
    ii, jj = ii[~adjacent], jj[~adjacent]
    p1, p2 = a[ii], b[ii]
    q1, q2 = a[jj], b[jj]
    e1 = p2 - p1
    e2 = q2 - q1
    d1 = e1[:, 0] * (q1[:, 1] - p1[:, 1]) - e1[:, 1] * (q1[:, 0] - p1[:, 0])
    d2 = e1[:, 0] * (q2[:, 1] - p1[:, 1]) - e1[:, 1] * (q2[:, 0] - p1[:, 0])
    d3 = e2[:, 0] * (p1[:, 1] - q1[:, 1]) - e2[:, 1] * (p1[:, 0] - q1[:, 0])
    d4 = e2[:, 0] * (p2[:, 1] - q1[:, 1]) - e2[:, 1] * (p2[:, 0] - q1[:, 0])
    crossing = (((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps))) & (
        ((d3 > eps) & (d4 < -eps)) | ((d3 < -eps) & (d4 > eps))
    )
    if crossing.any():
        return False
    col = (np.abs(d1) <= eps) & (np.abs(d2) <= eps)
    if col.any():
        L = np.sum(e1[col] * e1[col], axis=1)
        good = L > 0
        t1 = np.sum((q1[col] - p1[col]) * e1[col], axis=1) / np.maximum(L, 1e-300)
        t2 = np.sum((q2[col] - p1[col]) * e1[col], axis=1) / np.maximum(L, 1e-300)
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        if np.any(good & ((np.minimum(hi, 1.0) - np.maximum(lo, 0.0)) > 1e-9)):
            return False
    return True


def _turns(pts: np.ndarray) -> np.ndarray:
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    return (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (
        nxt[:, 0] - pts[:, 0]
    )


def _dedup(pts: np.ndarray, scale: float) -> np.ndarray:
    if len(pts) == 0:
        return pts
    tol = 1e-12 * scale
    gaps = np.hypot(*(pts - np.roll(pts, 1, axis=0)).T)
    if (gaps > tol).all():
        return pts
    keep = [0]
    for i in range(1, len(pts)):
        if math.hypot(*(pts[i] - pts[keep[-1]])) > tol:
            keep.append(i)
    while len(keep) > 1 and math.hypot(*(pts[keep[-1]] - pts[keep[0]])) <= tol:
        keep.pop()
    return pts[keep]


def _first_ray_hit(pts: np.ndarray, k: int, scale: float):
    """First boundary intersection of the ray extending edge (k-1, k).

    Returns (point, snapped_vertex_index_or_-1, edge_index). Edges
    incident to vertex k are excluded; hits within 1e-9*scale of an
    existing vertex snap to it.
    """
    n = len(pts)
    vk = pts[k]
    d = vk - pts[(k - 1) % n]
    d = d / math.hypot(d[0], d[1])
    a = pts
    b = np.roll(pts, -1, axis=0)
    e = b - a
    rel = a - vk
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    t_num = rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]
    s_num = rel[:, 0] * d[1] - rel[:, 1] * d[0]
    eps = 1e-12 * scale
    incident = np.zeros(n, dtype=bool)
    incident[(k - 1) % n] = True
    incident[k] = True

    best_t = np.inf
    best_j = -1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        s = s_num / denom
    ok = (
        (~incident)
        & (np.abs(denom) > eps)
        & (t > 1e-9 * scale)
        & (s >= -1e-12)
        & (s <= 1 + 1e-12)
    )
    if ok.any():
        idx = np.nonzero(ok)[0]
        jbest = idx[np.argmin(t[idx])]
        best_t = float(t[jbest])
        best_j = int(jbest)
    # collinear overlapping edges: nearest endpoint ahead on the ray
    par = (~incident) & (np.abs(denom) <= eps) & (np.abs(s_num) <= eps)
    for j in np.nonzero(par)[0]:
        for endpoint in (a[j], b[j]):
            te = float((endpoint - vk) @ d)
            if 1e-9 * scale < te < best_t:
                best_t = te
                best_j = int(j)
    if best_j < 0:
        raise ContractViolation("split ray found no boundary intersection")
    hit = vk + best_t * d
    snap = 1e-9 * scale
    for vid in (best_j, (best_j + 1) % n):
        if math.hypot(*(pts[vid] - hit)) <= snap:
            return pts[vid].copy(), vid, best_j
    return hit, -1, best_j


def convex_partition(contour: np.ndarray):
    """Split a simple polygon into convex pieces at concave vertices.

    Each concave vertex is resolved by extending its incoming edge to the
    first boundary intersection and cutting there, always picking the
    lowest-index concave vertex first. A polygon with q concave vertices
    yields at most q+1 pieces; exceeding that raises ContractViolation, as
    does a self-intersecting input.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ContractViolation(f"partition needs an (N>=3, 2) loop, got {pts.shape}")
    scale = _loop_scale(pts)
    pts = _dedup(pts, scale)
    if len(pts) < 3:
        raise ContractViolation("polygon degenerate after removing duplicate vertices")
    if shoelace_area(pts) < 0:
        pts = pts[::-1]
    if not polygon_is_simple(pts):
        raise ContractViolation("non-simple polygon")

    budget = [int(np.sum(_turns(pts) < -1e-12 * scale * scale))]
    out: list = []
    _partition_recurse(pts, scale, out, budget)
    return out


def _partition_recurse(pts: np.ndarray, scale: float, out: list, budget: list):
    pts = _dedup(pts, scale)
    if len(pts) < 3 or abs(shoelace_area(pts)) <= (1e-12 * scale) ** 2:
        return
    concave = np.nonzero(_turns(pts) < -1e-12 * scale * scale)[0]
    if len(concave) == 0:
        out.append(pts)
        return
    if budget[0] <= 0:
        raise ContractViolation("convex partition exceeded its split budget")
    budget[0] -= 1
    k = int(concave[0])
    n = len(pts)
    hit, snapped, j = _first_ray_hit(pts, k, scale)
    if snapped >= 0:
        left = [pts[(k + t) % n] for t in range((snapped - k) % n + 1)]
        right = [pts[(snapped + t) % n] for t in range((k - snapped) % n + 1)]
    else:
        left = [pts[(k + t) % n] for t in range((j - k) % n + 1)] + [hit]
        right = [hit] + [pts[(j + 1 + t) % n] for t in range((k - j - 1) % n + 1)]
    _partition_recurse(np.asarray(left), scale, out, budget)
    _partition_recurse(np.asarray(right), scale, out, budget)


# ---------------------------------------------------------------------------
# Hole elimination


def _ray_hit_loops(origin, direction, loops, scale):
    """Nearest boundary hit of an axis-aligned ray over several loops.

    Returns (loop_index, edge_index, t) or None.
    """
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = direction
    best = None
    for li, loop in enumerate(loops):
        a = loop
        b = np.roll(loop, -1, axis=0)
        e = b - a
        rel = a - np.array([ox, oy])
        denom = dx * e[:, 1] - dy * e[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
            s = (rel[:, 0] * dy - rel[:, 1] * dx) / denom
        ok = (
            (np.abs(denom) > 1e-12 * scale)
            & (t > 1e-9 * scale)
            & (s >= -1e-12)
            & (s <= 1 + 1e-12)
        )
        if ok.any():
            idx = np.nonzero(ok)[0]
            jm = idx[np.argmin(t[idx])]
            if best is None or t[jm] < best[2]:
                best = (li, int(jm), float(t[jm]))
    return best


def _extreme_vertex(hole: np.ndarray, direction) -> int:
    """Vertex most advanced along `direction` (lowest index on ties).

    A ray cast from this vertex along `direction` leaves the hole
    immediately: the entire loop lies on its far side.
    """
    key = hole[:, 0] * direction[0] + hole[:, 1] * direction[1]
    best = key.max()
    return int(np.nonzero(key == best)[0][0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = (p2[0] - p1[0]) * (q1[1] - p1[1]) - (p2[1] - p1[1]) * (q1[0] - p1[0])
    d2 = (p2[0] - p1[0]) * (q2[1] - p1[1]) - (p2[1] - p1[1]) * (q2[0] - p1[0])
    d3 = (q2[0] - q1[0]) * (p1[1] - q1[1]) - (q2[1] - q1[1]) * (p1[0] - q1[0])
    d4 = (q2[0] - q1[0]) * (p2[1] - q1[1]) - (q2[1] - q1[1]) * (p2[0] - q1[0])
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _arc(loop: np.ndarray, i: int, j: int):
    """Vertices from index i to j inclusive, walking forward with wrap."""
    m = len(loop)
    return [loop[(i + t) % m] for t in range((j - i) % m + 1)]


def _stitch(poly, hole, rv, A, jr, lv, B, jl):
    """Two simple pieces from bridges hole[rv]->A and hole[lv]->B on `poly`."""
    n = len(poly)

    def outer_path(start_pt, start_edge, end_pt, end_edge):
        if start_edge == end_edge:
            e = poly[(start_edge + 1) % n] - poly[start_edge]
            ts = float((start_pt - poly[start_edge]) @ e)
            te = float((end_pt - poly[start_edge]) @ e)
            if te >= ts:
                return [start_pt, end_pt]
            # wraps all the way around the outer loop
            mids = _arc(poly, (start_edge + 1) % n, start_edge)
            return [start_pt] + mids + [end_pt]
        mids = _arc(poly, (start_edge + 1) % n, end_edge)
        return [start_pt] + mids + [end_pt]

    piece1 = outer_path(A, jr, B, jl) + _arc(hole, lv, rv)
    piece2 = outer_path(B, jl, A, jr) + _arc(hole, rv, lv)
    return np.asarray(piece1), np.asarray(piece2)


def _double_bridge_split(poly: np.ndarray, hole: np.ndarray, other_holes):
    """Split poly (CCW) along two bridges through `hole` (CW), or None if boxed in."""
    scale = _loop_scale(poly)
    rv = _extreme_vertex(hole, 0, largest=True)
    hit_r = _ray_hit_loops(hole[rv], (1.0, 0.0), [poly], scale)
    if hit_r is None:
        raise ContractViolation("hole ray missed the enclosing boundary")
    _, jr, tr = hit_r
    A = hole[rv] + np.array([tr, 0.0])

    loops = [poly] + list(other_holes)
    for lv, direction in (
        (_extreme_vertex(hole, 0, largest=False), (-1.0, 0.0)),
        (_extreme_vertex(hole, 1, largest=True), (0.0, 1.0)),
        (_extreme_vertex(hole, 1, largest=False), (0.0, -1.0)),
    ):
        if lv == rv:
            continue
        hit = _ray_hit_loops(hole[lv], direction, loops, scale)
        if hit is None or hit[0] != 0:
            continue  # blocked by another hole; try the next direction
        _, jl, tl = hit
        B = hole[lv] + tl * np.asarray(direction)
        p1, p2 = _stitch(poly, hole, rv, A, jr, lv, B, jl)
        p1 = _dedup(p1, scale)
        p2 = _dedup(p2, scale)
        if len(p1) >= 3 and len(p2) >= 3 and shoelace_area(p1) > 0 and shoelace_area(p2) > 0:
            return p1, p2
    return None


def _hull_cw(points: np.ndarray) -> np.ndarray:
    """Convex hull as a clockwise loop (hole orientation)."""
    pts = np.unique(points, axis=0)
    if len(pts) < 3:
        return pts

    def build(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2 and (
                (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])
            ) <= 0:
                out.pop()
            out.append((p[0], p[1]))
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    hull = np.asarray(lower[:-1] + upper[:-1])  # counterclockwise
    return hull[::-1]


def remove_holes(outer: np.ndarray, holes):
    """Cut a polygon with holes into simple hole-free polygons.

    The rightmost hole is attached to its enclosing boundary with two
    axis-aligned bridges, splitting the piece in two; remaining holes get
    pushed into whichever piece contains them. A hole boxed in by other
    holes on every axis is conservatively merged with its blocker into one
    convex-hull hole (claiming the gap as non-walkable) and retried.
    """
    outer = np.asarray(outer, dtype=np.float64)
    stack = [(outer, [np.asarray(h, dtype=np.float64) for h in holes])]
    result = []
    guard = 8 * (len(holes) + 2)
    while stack:
        guard -= 1
        if guard < 0:
            raise ContractViolation("hole removal failed to converge")
        poly, hs = stack.pop()
        hs = [h for h in hs if len(h) >= 3]
        if not hs:
            result.append(poly)
            continue
        hidx = int(np.argmax([h[:, 0].max() for h in hs]))
        hole = hs[hidx]
        rest = [h for t, h in enumerate(hs) if t != hidx]
        pieces = _double_bridge_split(poly, hole, rest)
        if pieces is None:
            if not rest:
                raise ContractViolation("hole bridging failed with no blocking holes")
            scale = _loop_scale(poly)
            lv = _extreme_vertex(hole, 0, largest=False)
            hit = _ray_hit_loops(hole[lv], (-1.0, 0.0), rest, scale)
            bidx = hit[0] if hit is not None else 0
            merged = _hull_cw(np.concatenate([hole, rest[bidx]]))
            rest = [h for t, h in enumerate(rest) if t != bidx]
            stack.append((poly, rest + [merged]))
            continue
        p1, p2 = pieces
        h1, h2 = [], []
        for h in rest:
            if points_in_loops(h[:1], [p1])[0]:
                h1.append(h)
            else:
                h2.append(h)
        stack.append((p1, h1))
        stack.append((p2, h2))
    return result


# ---------------------------------------------------------------------------
# Region-level composition


def clean_loop(pts: np.ndarray, scale: float) -> np.ndarray:
    """Drop duplicate vertices and zero-width spurs (a->b->a backtracks)."""
    pts = _dedup(np.asarray(pts, dtype=np.float64), scale)
    tol = 1e-12 * scale
    while len(pts) >= 3:
        gaps = np.hypot(*(np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)).T)
        spurs = np.nonzero(gaps <= tol)[0]
        if len(spurs) == 0:
            return pts
        pts = _dedup(np.delete(pts, spurs[0], axis=0), scale)
    return pts


def approximate_region(region: PlanarRegion, cfg: PipelineConfig) -> list:
    """Project, simplify, de-hole, and convex-partition one region.

    Returns the region's list of ConvexPolygon pieces. Contours traced
    from pixel masks can self-touch; when the direct path trips the
    simplicity check, the region is re-rasterized in its own plane frame
    and rebuilt from the clean cell boundary, keeping unsimplified loops
    wherever simplification would break them.
    """
    from .merging import PlaneFrame2D, mask_boundary_2d, rasterize

    frame = PlaneFrame2D.for_plane(region.normal, region.centroid, cfg.raster_resolution)
    outer2 = frame.to_plane(region.contour)
    holes2 = [frame.to_plane(h) for h in region.holes]
    try:
        return _approximate_loops(outer2, holes2, region, frame, cfg)
    except ContractViolation:
        mask = rasterize(region, frame)
        outers, holes = mask_boundary_2d(mask)
        if not outers:
            return []
        outer2 = max(outers, key=lambda o: abs(shoelace_area(o)))
        holes2 = [h for h in holes if points_in_loops(h[:1], [outer2])[0]]
        return _approximate_loops(outer2, holes2, region, frame, cfg, lenient=True)


def _simplify_checked(loop, cfg, lenient):
    """Simplify; in lenient mode fall back to the input when the result
    self-intersects (vertex removal can rarely fold a loop over itself)."""
    out = simplify_contour(loop, cfg.epsilon, cfg.foot_diameter, orientation=1)
    if lenient and not polygon_is_simple(out):
        return loop
    return out


def _approximate_loops(outer2, holes2, region, frame, cfg, lenient=False):
    scale = _loop_scale(outer2) if len(outer2) else 1.0
    outer2 = clean_loop(outer2, scale)
    if len(outer2) < 3:
        return []
    if shoelace_area(outer2) < 0:
        outer2 = outer2[::-1]
    simp_outer = _simplify_checked(outer2, cfg, lenient)
    tiny = (1e-9 * scale) ** 2
    simp_holes = []
    for h in holes2:
        h = clean_loop(h, scale)
        if len(h) < 3 or abs(shoelace_area(h)) <= tiny:
            continue
        if shoelace_area(h) > 0:
            h = h[::-1]  # holes run clockwise
        # orientation of the solid, not the hole: inverts convex/concave roles
        hs = _simplify_checked(h, cfg, lenient)
        if len(hs) >= 3 and abs(shoelace_area(hs)) > tiny:
            simp_holes.append(hs)
    polys = []
    for piece_outer, piece_holes in _renest(simp_outer, simp_holes):
        for piece in remove_holes(piece_outer, piece_holes):
            for part in convex_partition(piece):
                part = _dedup(part, scale)
                if len(part) < 3:
                    continue
                if abs(shoelace_area(part)) < cfg.raster_resolution**2:
                    continue
                polys.append(ConvexPolygon(region.normal, frame.to_world(part)))
    return polys


def _renest(outer, holes):
    """Restore strict hole nesting after independent simplification.

    Holes that stayed fully inside the outer loop pass through untouched;
    holes that drifted fully outside are dropped (their area is already
    excluded); holes crossing the boundary are subtracted from the outer
    polygon exactly, which may split it. Returns [(outer, holes), ...].
    """
    if not holes:
        return [(outer, [])]
    a = outer
    b = np.roll(outer, -1, axis=0)
    elo = np.minimum(a, b)
    ehi = np.maximum(a, b)
    interior, crossing = [], []
    for h in holes:
        hlo = h.min(axis=0)
        hhi = h.max(axis=0)
        clear = (
            (ehi[:, 0] < hlo[0])
            | (elo[:, 0] > hhi[0])
            | (ehi[:, 1] < hlo[1])
            | (elo[:, 1] > hhi[1])
        ).all()
        if clear:
            if points_in_loops(h[:1], [outer])[0]:
                interior.append(h)
            continue  # fully outside: already not part of the region
        crossing.append(h)
    if not crossing:
        return [(outer, interior)]
    pieces = _subtract_loops(outer, crossing)
    out = []
    for piece_outer, rings in pieces:
        mine = [h for h in interior if points_in_loops(h[:1], [piece_outer])[0]]
        out.append((piece_outer, mine + rings))
    return out


def _subtract_loops(outer, blobs):
    """Shapely-backed polygon difference for boundary-crossing holes.

    Returns [(ccw_exterior, [cw_rings]), ...]; rings appear when a
    subtraction leaves an island of hole fully enclosed after all.
    """
    from shapely.geometry import Polygon
    from shapely import make_valid, unary_union

    region = make_valid(Polygon(outer))
    cut = unary_union([make_valid(Polygon(h)) for h in blobs])
    diff = region.difference(cut)
    pieces = []
    geoms = getattr(diff, "geoms", [diff])
    for geom in geoms:
        if geom.geom_type != "Polygon" or geom.area <= 0:
            continue
        ext = np.asarray(geom.exterior.coords)[:-1]
        if len(ext) < 3:
            continue
        if shoelace_area(ext) < 0:
            ext = ext[::-1]
        rings = []
        for ring in geom.interiors:
            xy = np.asarray(ring.coords)[:-1]
            if len(xy) >= 3:
                if shoelace_area(xy) > 0:
                    xy = xy[::-1]
                rings.append(xy)
        pieces.append((ext, rings))
    return pieces
