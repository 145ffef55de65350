"""Frames, scenes and their on-disk formats.

Point files hold little-endian float32 records ``(x, y, z, intensity, ring)``.
Manifests, map metadata and polygon layers are JSON with ``format_version: 1``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import DataIntegrityError, FormatError, SchemaError
from .geometry import CoordFrame, OrientedBox, PointCloud, Pose, compose_pose, transform_cloud
from .maps import Layer, PolygonLayerMap, RasterMap

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
RECORD_DTYPE = np.dtype("<f4")
RECORD_FIELDS = 5
RECORD_BYTES = RECORD_FIELDS * RECORD_DTYPE.itemsize

_SCENE_KEYS = {"format_version", "scene_id", "map", "frames"}
_FRAME_KEYS = {"timestamp_us", "lidar_file", "ego_pose", "sensor_calib", "boxes"}
_BOX_KEYS = {"track_id", "category", "center", "size_wlh", "yaw", "velocity"}


@dataclass(frozen=True, eq=False)
class Frame:
    """One LiDAR sweep: sensor-local cloud, poses and global-frame boxes."""

    timestamp: int
    cloud: PointCloud
    ego_pose: Pose | None
    sensor_calib: Pose | None
    boxes: tuple[OrientedBox, ...] = ()
    lidar_file: str | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [b.track_id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise DataIntegrityError(f"duplicate track ids in frame at t={self.timestamp}")

    @property
    def sensor_to_global(self) -> Pose:
        if self.ego_pose is None or self.sensor_calib is None:
            raise DataIntegrityError(f"frame at t={self.timestamp} lacks ego pose or sensor calibration")
        return compose_pose(self.ego_pose, self.sensor_calib)

    @cached_property
    def global_cloud(self) -> PointCloud:
        return transform_cloud(self.cloud, self.sensor_to_global, "to_global")

    def with_changes(self, **changes: Any) -> Frame:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Scene:
    """Ordered frames S_0..S_K plus an optional map reference."""

    id: str
    frames: tuple[Frame, ...]
    map_ref: Mapping[str, Any] | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)
    base_dir: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise DataIntegrityError(f"scene {self.id!r} has no frames")
        stamps = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise DataIntegrityError(f"scene {self.id!r}: timestamps not strictly increasing")
        if len(stamps) > 2:
            gaps = np.diff(stamps)
            mean = gaps.mean()
            if np.any(np.abs(gaps - mean) > 0.1 * mean):
                log.warning("scene %s: frame spacing varies by more than 10%%", self.id)

    @property
    def frame_dt(self) -> float | None:
        """Mean seconds between frames; None for single-frame scenes."""
        if len(self.frames) < 2:
            return None
        span = self.frames[-1].timestamp - self.frames[0].timestamp
        return span / (len(self.frames) - 1) / 1e6

    def with_frames(self, frames: Iterable[Frame]) -> Scene:
        return replace(self, frames=tuple(frames))

    def map_path(self, key: str) -> Path | None:
        if not self.map_ref or key not in self.map_ref:
            return None
        path = Path(self.map_ref[key])
        return path if path.is_absolute() or self.base_dir is None else self.base_dir / path


# --- point clouds -----------------------------------------------------------

def cloud_to_bytes(cloud: PointCloud) -> bytes:
    records = np.empty((len(cloud), RECORD_FIELDS), dtype=RECORD_DTYPE)
    records[:, :3] = cloud.xyz
    records[:, 3] = cloud.intensity
    records[:, 4] = cloud.ring
    return records.tobytes()


def cloud_from_bytes(data: bytes, frame: CoordFrame = CoordFrame.LOCAL) -> PointCloud:
    if len(data) % RECORD_BYTES:
        raise FormatError(
            f"length {len(data)} is not a multiple of {RECORD_BYTES}",
            offset=(len(data) // RECORD_BYTES) * RECORD_BYTES,
        )
    records = np.frombuffer(data, dtype=RECORD_DTYPE).reshape(-1, RECORD_FIELDS)
    return PointCloud(records[:, :3], records[:, 3], records[:, 4], frame)


def read_cloud(path: str | os.PathLike, frame: CoordFrame = CoordFrame.LOCAL) -> PointCloud:
    return cloud_from_bytes(Path(path).read_bytes(), frame)


def write_cloud(cloud: PointCloud, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cloud_to_bytes(cloud))


# --- manifests --------------------------------------------------------------

def _vector(obj: Mapping[str, Any], key: str, n: int, where: str) -> list[float]:
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, list) or len(value) != n:
        raise SchemaError(f"{where}: field {key!r} must be a list of {n} numbers")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: field {key!r} is not numeric") from exc
    if not all(math.isfinite(v) for v in out):
        raise SchemaError(f"{where}: field {key!r} has non-finite values")
    return out


def _parse_pose(obj: Any, where: str) -> Pose:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: pose must be an object")
    t = _vector(obj, "translation", 3, where)
    q = _vector(obj, "rotation_wxyz", 4, where)
    if math.sqrt(sum(v * v for v in q)) < 1e-12:
        raise SchemaError(f"{where}: quaternion has zero norm")
    return Pose(t, q)


def _pose_json(pose: Pose) -> dict[str, Any]:
    return {"translation": pose.translation.tolist(), "rotation_wxyz": pose.rotation.tolist()}


def parse_box(obj: Any, where: str) -> OrientedBox:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: box must be an object")
    for key in ("track_id", "category", "yaw"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    try:
        return OrientedBox(
            center=_vector(obj, "center", 3, where),
            size=_vector(obj, "size_wlh", 3, where),
            yaw=float(obj["yaw"]),
            velocity=_vector(obj, "velocity", 2, where),
            category=str(obj["category"]),
            track_id=str(obj["track_id"]),
            attributes={k: v for k, v in obj.items() if k not in _BOX_KEYS},
        )
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def box_json(box: OrientedBox) -> dict[str, Any]:
    out = dict(box.attributes)
    out.update(
        track_id=box.track_id,
        category=box.category,
        center=list(box.center),
        size_wlh=list(box.size),
        yaw=box.yaw,
        velocity=list(box.velocity),
    )
    return out


def manifest_from_json(doc: Any, base_dir: Path | None = None, load_clouds: bool = True) -> Scene:
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported format_version {doc.get('format_version')!r}")
    for key in ("scene_id", "frames"):
        if key not in doc:
            raise SchemaError(f"manifest: missing field {key!r}")
    if not isinstance(doc["frames"], list) or not doc["frames"]:
        raise SchemaError("manifest: 'frames' must be a non-empty list")
    frames = []
    for idx, fobj in enumerate(doc["frames"]):
        where = f"frame {idx}"
        if not isinstance(fobj, dict):
            raise SchemaError(f"{where}: must be an object")
        for key in _FRAME_KEYS:
            if key not in fobj:
                raise SchemaError(f"{where}: missing field {key!r}")
        if not isinstance(fobj["timestamp_us"], int):
            raise SchemaError(f"{where}: 'timestamp_us' must be an integer")
        boxes = [parse_box(b, f"{where} box {j}") for j, b in enumerate(fobj["boxes"])]
        lidar_file = str(fobj["lidar_file"])
        if load_clouds:
            cloud_path = Path(lidar_file) if base_dir is None else base_dir / lidar_file
            cloud = read_cloud(cloud_path)
        else:
            cloud = PointCloud.empty()
        frames.append(
            Frame(
                timestamp=fobj["timestamp_us"],
                cloud=cloud,
                ego_pose=_parse_pose(fobj["ego_pose"], f"{where} ego_pose"),
                sensor_calib=_parse_pose(fobj["sensor_calib"], f"{where} sensor_calib"),
                boxes=tuple(boxes),
                lidar_file=lidar_file,
                extra={k: v for k, v in fobj.items() if k not in _FRAME_KEYS},
            )
        )
    return Scene(
        id=str(doc["scene_id"]),
        frames=tuple(frames),
        map_ref=doc.get("map"),
        extra={k: v for k, v in doc.items() if k not in _SCENE_KEYS},
        base_dir=base_dir,
    )


def default_lidar_file(index: int) -> str:
    return f"lidar/{index:04d}.bin"


def manifest_to_json(scene: Scene) -> dict[str, Any]:
    frames = []
    for idx, frame in enumerate(scene.frames):
        fobj = dict(frame.extra)
        fobj.update(
            timestamp_us=int(frame.timestamp),
            lidar_file=frame.lidar_file or default_lidar_file(idx),
            ego_pose=_pose_json(frame.ego_pose),
            sensor_calib=_pose_json(frame.sensor_calib),
            boxes=[box_json(b) for b in frame.boxes],
        )
        frames.append(fobj)
    doc = dict(scene.extra)
    doc.update(format_version=FORMAT_VERSION, scene_id=scene.id, frames=frames)
    if scene.map_ref is not None:
        doc["map"] = dict(scene.map_ref)
    return doc


def dump_json(doc: Any, path: str | os.PathLike) -> None:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n")


def load_json(path: str | os.PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON ({exc})") from exc


def read_manifest(path: str | os.PathLike, load_clouds: bool = True) -> Scene:
    path = Path(path)
    return manifest_from_json(load_json(path), base_dir=path.parent, load_clouds=load_clouds)


def write_manifest(scene: Scene, path: str | os.PathLike, write_clouds: bool = True) -> None:
    """Write the manifest JSON and, by default, every frame's point file next to it."""
    path = Path(path)
    doc = manifest_to_json(scene)
    if write_clouds:
        for frame, fobj in zip(scene.frames, doc["frames"]):
            write_cloud(frame.cloud, path.parent / fobj["lidar_file"])
    dump_json(doc, path)


# --- maps -------------------------------------------------------------------

def write_raster(raster: RasterMap, grid_path: str | os.PathLike, meta_path: str | os.PathLike) -> None:
    Path(grid_path).parent.mkdir(parents=True, exist_ok=True)
    Path(grid_path).write_bytes(np.ascontiguousarray(raster.cells).tobytes())
    dump_json(
        {
            "format_version": FORMAT_VERSION,
            "width": raster.width,
            "height": raster.height,
            "resolution_m_per_px": raster.resolution,
            "origin_xy_m": list(raster.origin),
            "palette": dict(raster.palette),
        },
        meta_path,
    )


def read_raster(grid_path: str | os.PathLike, meta_path: str | os.PathLike) -> RasterMap:
    meta = load_json(meta_path)
    if not isinstance(meta, dict) or meta.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{meta_path}: unsupported map metadata")
    for key in ("width", "height", "resolution_m_per_px", "origin_xy_m", "palette"):
        if key not in meta:
            raise SchemaError(f"{meta_path}: missing field {key!r}")
    width, height = int(meta["width"]), int(meta["height"])
    data = Path(grid_path).read_bytes()
    if len(data) != width * height:
        raise FormatError(f"{grid_path}: expected {width * height} bytes, found {len(data)}",
                          offset=min(len(data), width * height))
    cells = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    try:
        return RasterMap(cells, meta["resolution_m_per_px"], tuple(meta["origin_xy_m"]), meta["palette"])
    except ValueError as exc:
        raise SchemaError(f"{meta_path}: {exc}") from exc


def write_layers(layers: PolygonLayerMap, path: str | os.PathLike) -> None:
    dump_json(
        {
            "format_version": FORMAT_VERSION,
            "layers": [{"category": l.category, "vertices": l.vertices.tolist()} for l in layers.layers],
        },
        path,
    )


def read_layers(path: str | os.PathLike) -> PolygonLayerMap:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported layer file")
    try:
        return PolygonLayerMap(tuple(Layer(d["category"], d["vertices"]) for d in doc["layers"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def read_scene_map(scene: Scene) -> RasterMap | None:
    grid, meta = scene.map_path("grid_file"), scene.map_path("meta_file")
    if grid is None or meta is None:
        return None
    return read_raster(grid, meta)


def find_manifests(root: str | os.PathLike) -> list[Path]:
    """Manifest files under ``root`` in sorted order (``root`` may itself be one)."""
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(root.rglob("manifest.json"))
