"""2D grid geometry shared by merging, evaluation, and the renderer.

Grid convention: cell (i, j) of a mask with integer offset (row0, col0)
covers x in [(j+col0)*res, (j+col0+1)*res) and y likewise with rows. The
cell-center parity fill and the cell-edge boundary tracer below are near
inverses of each other, which keeps rasterize -> trace round trips tight.
"""

from __future__ import annotations

import numpy as np


def shoelace_area(loop: np.ndarray) -> float:
    """Signed area of a closed 2D loop (positive = counterclockwise)."""
    p = np.asarray(loop, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _edges_of(loops) -> np.ndarray:
    """Stack every loop's edges into an (E, 4) array of x1,y1,x2,y2."""
    segs = []
    for loop in loops:
        p = np.asarray(loop, dtype=np.float64)
        if len(p) < 2:
            continue
        q = np.roll(p, -1, axis=0)
        segs.append(np.concatenate([p, q], axis=1))
    if not segs:
        return np.zeros((0, 4))
    return np.concatenate(segs, axis=0)


def fill_loops(
    loops, resolution: float, row0: int, col0: int, rows: int, cols: int
) -> np.ndarray:
    """Even-odd fill of polygon loops onto a grid window, cell-center rule.

    A cell is set when its center lies inside an odd number of loops, so
    holes passed alongside the outer loop are carved out automatically.
    Crossings use the standard half-open rule, so shared loop vertices are
    never double counted.
    """
    out = np.zeros((rows, cols), dtype=bool)
    edges = _edges_of(loops)
    if len(edges) == 0:
        return out
    x1, y1, x2, y2 = edges.T
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if len(x1) == 0:
        return out

    ylo = np.minimum(y1, y2)
    yhi = np.maximum(y1, y2)
    # global row indices whose center (i + 0.5) * res lies in [ylo, yhi)
    i_first = np.ceil(ylo / resolution - 0.5).astype(np.int64)
    i_end = np.ceil(yhi / resolution - 0.5).astype(np.int64)
    i_first = np.maximum(i_first, row0)
    i_end = np.minimum(i_end, row0 + rows)
    counts = np.maximum(i_end - i_first, 0)
    total = int(counts.sum())
    if total == 0:
        return out

    edge_id = np.repeat(np.arange(len(counts)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    i_global = np.arange(total) - np.repeat(starts, counts) + i_first[edge_id]
    yc = (i_global + 0.5) * resolution
    t = (yc - y1[edge_id]) / (y2[edge_id] - y1[edge_id])
    xc = x1[edge_id] + t * (x2[edge_id] - x1[edge_id])
    # first column whose center is strictly right of the crossing
    j_flip = np.floor(xc / resolution - 0.5).astype(np.int64) + 1 - col0
    j_flip = np.clip(j_flip, 0, cols)
    flips = np.zeros((rows, cols + 1), dtype=np.int64)
    np.add.at(flips, (i_global - row0, j_flip), 1)
    parity = np.cumsum(flips[:, :cols], axis=1) % 2
    return parity.astype(bool)


def points_in_loops(points: np.ndarray, loops) -> np.ndarray:
    """Even-odd inside test for a batch of 2D points.

    Points exactly on an edge land on whichever side the half-open
    crossing rule puts them; callers that care handle edges themselves.
    """
    pts = np.asarray(points, dtype=np.float64)
    edges = _edges_of(loops)
    if len(edges) == 0:
        return np.zeros(len(pts), dtype=bool)
    x1, y1, x2, y2 = edges.T
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if len(x1) == 0:
        return np.zeros(len(pts), dtype=bool)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    spans = (py >= np.minimum(y1, y2)) & (py < np.maximum(y1, y2))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (py - y1) / (y2 - y1)
        xc = x1 + t * (x2 - x1)
    crossings = np.sum(spans & (xc > px), axis=1)
    return (crossings % 2) == 1


# Directions for the cell-edge walker: 0=+x, 1=+y, 2=-x, 3=-y.
_DX = (1, 0, -1, 0)
_DY = (0, 1, 0, -1)


def trace_cell_edges(mask: np.ndarray):
    """Boundary loops of a cell mask, walked along cell edges.

    Returns (outers, holes): lists of (K, 2) arrays of corner coordinates
    in cell units, x = column, y = row, collinear runs collapsed. Outer
    loops are counterclockwise (solid kept on the left), holes clockwise.
    At checkerboard pinch corners the walk takes the sharpest left turn,
    which splits the pinch into separate simple loops.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return [], []
    pad = np.pad(m, 1)
    solid = pad[1:-1, 1:-1]

    # directed boundary edges keyed by start corner
    start: dict = {}

    def add(xs, ys, d):
        for x, y in zip(xs, ys):
            start.setdefault((int(x), int(y)), []).append(d)

    i, j = np.nonzero(solid & ~pad[0:-2, 1:-1])  # nothing below: +x along bottom
    add(j, i, 0)
    i, j = np.nonzero(solid & ~pad[1:-1, 2:])  # nothing right: +y along right
    add(j + 1, i, 1)
    i, j = np.nonzero(solid & ~pad[2:, 1:-1])  # nothing above: -x along top
    add(j + 1, i + 1, 2)
    i, j = np.nonzero(solid & ~pad[1:-1, 0:-2])  # nothing left: -y along left
    add(j, i + 1, 3)

    outers, holes = [], []
    for corner in sorted(start):
        while corner in start:
            d = min(start[corner])
            for loop in _split_at_repeats(_walk(start, corner, d)):
                if shoelace_area(loop) > 0:
                    outers.append(loop)
                else:
                    holes.append(loop)
    return outers, holes


def _split_at_repeats(loop: np.ndarray):
    """Split a loop that touches itself at a corner into simple loops.

    A region that meets itself diagonally traces as a figure-8; cutting
    at the repeated corner yields two loops that still keep the solid on
    the same side.
    """
    pts = [tuple(p) for p in loop]
    seen: dict = {}
    for k, p in enumerate(pts):
        if p in seen:
            i = seen[p]
            inner = np.asarray(pts[i:k], dtype=np.float64)
            rest = np.asarray(pts[:i] + pts[k:], dtype=np.float64)
            return _split_at_repeats(inner) + _split_at_repeats(rest)
        seen[p] = k
    return [loop if isinstance(loop, np.ndarray) else np.asarray(pts, dtype=np.float64)]


def _walk(start: dict, corner, d) -> np.ndarray:
    pts = [corner]
    x, y = corner
    while True:
        lst = start[(x, y)]
        lst.remove(d)
        if not lst:
            del start[(x, y)]
        x, y = x + _DX[d], y + _DY[d]
        if (x, y) == corner:
            break
        outs = start[(x, y)]
        for turn in (1, 0, 3):  # sharpest left first; reversing is impossible
            cand = (d + turn) % 4
            if cand in outs:
                if cand != d:
                    pts.append((x, y))
                d = cand
                break
        else:
            raise AssertionError("boundary chain broke mid-walk")
    return np.asarray(pts, dtype=np.float64)
