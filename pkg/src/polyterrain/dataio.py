"""File formats: 16-bit PGM depth frames, JSON manifests, maps, ground truth.

All loaders raise :class:`InputFormatError` subclasses carrying the
offending path or field, so the CLI can report them and exit with the
input-error status code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    CameraIntrinsics,
    CameraPose,
    ConvexPolygon,
    DepthImage,
    PlanarMap,
    PlanarRegion,
)
from .synth import GroundTruthPlane, NoiseModel, Scene, make_staircase, make_tile_wall


class InputFormatError(Exception):
    """Malformed or inconsistent input data."""


class MissingFileError(InputFormatError):
    def __init__(self, path):
        super().__init__(f"missing depth file: {path}")
        self.path = str(path)


class ManifestFormatError(InputFormatError):
    def __init__(self, path, field, detail):
        super().__init__(f"{path}: bad manifest field {field!r}: {detail}")
        self.field = field


class DimensionMismatchError(InputFormatError):
    def __init__(self, path, got, expected):
        super().__init__(
            f"{path}: depth image is {got[0]}x{got[1]} but intrinsics say "
            f"{expected[0]}x{expected[1]}"
        )
        self.path = str(path)


# ---------------------------------------------------------------------------
# PGM (P5, 16-bit big-endian, millimeters, 0 = invalid)


def write_pgm(path, depth: DepthImage) -> None:
    data = np.round(depth.data).astype(np.uint16)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii"))
        fh.write(data.astype(">u2").tobytes())


def read_pgm(path) -> DepthImage:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    # header: magic, width, height, maxval, separated by whitespace/comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise InputFormatError(f"{path}: truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        if raw[pos : pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise InputFormatError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 65535:
        raise InputFormatError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    expected = width * height * 2
    body = raw[pos : pos + expected]
    if len(body) != expected:
        raise InputFormatError(f"{path}: PGM payload truncated")
    data = np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.float64)
    return DepthImage(width, height, data)


# ---------------------------------------------------------------------------
# Manifest: {"intrinsics": {...}, "frames": [{"depth": path, "pose": {...}}]}


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"missing file: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise InputFormatError(f"{path}: invalid JSON: {e}") from e


def _require(obj: dict, field: str, path) -> object:
    if field not in obj:
        raise ManifestFormatError(path, field, "missing")
    return obj[field]


def _parse_intrinsics(obj: dict, path) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            f=float(_require(obj, "f", path)),
            cx=float(_require(obj, "cx", path)),
            cy=float(_require(obj, "cy", path)),
            width=int(_require(obj, "width", path)),
            height=int(_require(obj, "height", path)),
        )
    except (TypeError, ValueError) as e:
        raise ManifestFormatError(path, "intrinsics", str(e)) from e


def _parse_pose(obj: dict, path) -> CameraPose:
    try:
        t = np.asarray(_require(obj, "t", path), dtype=np.float64)
        q = np.asarray(_require(obj, "q", path), dtype=np.float64)
        return CameraPose(t, q)
    except (TypeError, ValueError) as e:
        raise ManifestFormatError(path, "pose", str(e)) from e


def load_sequence(manifest_path):
    """Read a dataset manifest: returns (intrinsics, [(DepthImage, CameraPose)]).

    Frames come back in manifest order. Depth paths are resolved relative
    to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    doc = _load_json(manifest_path)
    if not isinstance(doc, dict):
        raise ManifestFormatError(manifest_path, "<root>", "expected a JSON object")
    intr = _parse_intrinsics(_require(doc, "intrinsics", manifest_path), manifest_path)
    frames_field = _require(doc, "frames", manifest_path)
    if not isinstance(frames_field, list):
        raise ManifestFormatError(manifest_path, "frames", "expected a list")
    frames = []
    for k, entry in enumerate(frames_field):
        if not isinstance(entry, dict):
            raise ManifestFormatError(manifest_path, f"frames[{k}]", "expected an object")
        rel = _require(entry, "depth", manifest_path)
        depth_path = manifest_path.parent / rel
        depth = read_pgm(depth_path)
        if (depth.width, depth.height) != (intr.width, intr.height):
            raise DimensionMismatchError(
                depth_path, (depth.width, depth.height), (intr.width, intr.height)
            )
        pose = _parse_pose(_require(entry, "pose", manifest_path), manifest_path)
        frames.append((depth, pose))
    return intr, frames


def write_manifest(path, intr: CameraIntrinsics, frame_entries) -> None:
    doc = {
        "intrinsics": {
            "f": intr.f,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "frames": [
            {"depth": rel, "pose": {"t": list(map(float, pose.translation)),
                                    "q": list(map(float, pose.rotation))}}
            for rel, pose in frame_entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Ground truth: {"planes": [{"id", "normal", "boundary"}]}


def write_ground_truth(path, scene: Scene) -> None:
    doc = {
        "planes": [
            {
                "id": p.id,
                "normal": [float(x) for x in p.normal],
                "boundary": [[float(x) for x in v] for v in p.boundary],
            }
            for p in scene.planes
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_ground_truth(path) -> Scene:
    doc = _load_json(path)
    planes_field = _require(doc, "planes", path)
    planes = []
    for k, entry in enumerate(planes_field):
        try:
            planes.append(
                GroundTruthPlane(
                    id=str(_require(entry, "id", path)),
                    normal=np.asarray(entry["normal"], dtype=np.float64),
                    boundary=np.asarray(entry["boundary"], dtype=np.float64),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestFormatError(path, f"planes[{k}]", str(e)) from e
    return Scene(planes)


# ---------------------------------------------------------------------------
# Map JSON


def _loop_to_json(loop: np.ndarray):
    return [[float(x) for x in v] for v in loop]


def map_to_json(pmap: PlanarMap) -> dict:
    regions = []
    for region, polys in zip(pmap.regions, pmap.polygons):
        regions.append(
            {
                "normal": [float(x) for x in region.normal],
                "centroid": [float(x) for x in region.centroid],
                "mse": float(region.mse),
                "n_points": int(region.n_points),
                "contour": _loop_to_json(region.contour),
                "holes": [_loop_to_json(h) for h in region.holes],
                "polygons": [{"vertices": _loop_to_json(p.vertices)} for p in polys],
            }
        )
    return {"regions": regions}


def write_map(path, pmap: PlanarMap) -> None:
    with open(path, "w") as fh:
        json.dump(map_to_json(pmap), fh, indent=2)
        fh.write("\n")


def read_map(path) -> PlanarMap:
    doc = _load_json(path)
    regions, polygons = [], []
    for k, entry in enumerate(_require(doc, "regions", path)):
        try:
            region = PlanarRegion(
                contour=np.asarray(entry["contour"], dtype=np.float64),
                holes=tuple(np.asarray(h, dtype=np.float64) for h in entry.get("holes", [])),
                n_points=int(entry["n_points"]),
                centroid=np.asarray(entry["centroid"], dtype=np.float64),
                normal=np.asarray(entry["normal"], dtype=np.float64),
                mse=float(entry["mse"]),
            )
            polys = [
                ConvexPolygon(region.normal, np.asarray(p["vertices"], dtype=np.float64))
                for p in entry.get("polygons", [])
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestFormatError(path, f"regions[{k}]", str(e)) from e
        regions.append(region)
        polygons.append(polys)
    return PlanarMap(regions, polygons)


# ---------------------------------------------------------------------------
# Scene specs for the synth subcommand


@dataclass
class SceneSpec:
    scene: Scene
    intrinsics: CameraIntrinsics
    noise: NoiseModel
    poses: list
    seed: int


def read_scene_spec(path) -> SceneSpec:
    from .synth import look_at  # local import keeps module load light

    doc = _load_json(path)
    intr = _parse_intrinsics(_require(doc, "intrinsics", path), path)
    noise_obj = doc.get("noise", {})
    noise = NoiseModel(
        sigma_at_2m=float(noise_obj.get("sigma_at_2m", 0.0)),
        quantization=float(noise_obj.get("quantization", 1.0)),
    )
    scene_obj = _require(doc, "scene", path)
    if "staircase" in scene_obj:
        s = scene_obj["staircase"]
        scene = make_staircase(
            int(s["steps"]), float(s["rise"]), float(s["run"]), float(s["width"])
        )
    elif "tile_wall" in scene_obj:
        s = scene_obj["tile_wall"]
        scene = make_tile_wall(
            int(s["nx"]), int(s["ny"]), float(s["tile"]),
            float(s["gap_depth"]), float(s["distance"]),
        )
    elif "planes" in scene_obj:
        scene = Scene(
            [
                GroundTruthPlane(
                    id=str(p.get("id", i)),
                    normal=np.asarray(p["normal"], dtype=np.float64),
                    boundary=np.asarray(p["boundary"], dtype=np.float64),
                )
                for i, p in enumerate(scene_obj["planes"])
            ]
        )
    else:
        raise ManifestFormatError(path, "scene", "need staircase, tile_wall, or planes")
    poses = []
    for k, p in enumerate(_require(doc, "poses", path)):
        if "eye" in p:
            poses.append(look_at(p["eye"], p["target"], p.get("up", (0, 0, 1))))
        else:
            poses.append(_parse_pose(p, path))
    return SceneSpec(scene, intr, noise, poses, int(doc.get("seed", 0)))
