"""Object bank construction: cut annotated objects out of source frames."""

from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Iterable, Sequence

import numpy as np

from .errors import DataIntegrityError, EmptyObjectError, SchemaError
from .geometry import DEFAULT_EPSILON, OrientedBox, PointCloud, points_in_box, transform_cloud
from .scene_io import FORMAT_VERSION, Frame, Scene, dump_json, load_json, read_cloud, write_cloud

log = logging.getLogger(__name__)

DEFAULT_MIN_POINTS = 20


@dataclass(frozen=True, eq=False)
class ExtractedObject:
    """Object points in box-local axes plus a zero-pose box template."""

    points: PointCloud
    template: OrientedBox
    source: tuple[str, int, str]
    source_speed: float

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def category(self) -> str:
        return self.template.category

    def check_containment(self, epsilon: float = DEFAULT_EPSILON) -> None:
        half = self.template.half_extents
        outside = np.any(np.abs(self.points.xyz) > half + epsilon, axis=1)
        if outside.any():
            raise DataIntegrityError(
                f"object {self.source}: {int(outside.sum())} points fall outside the template box")


def extract_object(frame: Frame, box: OrientedBox, scene_id: str = "", frame_index: int = 0) -> ExtractedObject:
    """Points of ``frame`` inside ``box``, re-expressed in the box's own axes."""
    cloud = frame.global_cloud
    idx = points_in_box(cloud, box)
    if len(idx) == 0:
        raise EmptyObjectError(f"box {box.track_id!r} contains no points")
    local = transform_cloud(cloud.subset(idx), box.pose, "to_local")
    template = OrientedBox((0.0, 0.0, 0.0), box.size, 0.0, (0.0, 0.0), box.category, box.track_id)
    return ExtractedObject(local, template, (scene_id, frame_index, box.track_id), box.speed)


def place_object(obj: ExtractedObject, center: Sequence[float], yaw: float) -> PointCloud:
    """Object points in global coordinates for a box at ``center``/``yaw``."""
    pose = OrientedBox(center, obj.template.size, yaw).pose
    return transform_cloud(obj.points, pose, "to_global")


def build_object_bank(
    scenes: Iterable[Scene],
    categories: Collection[str] | None = None,
    min_points: int = DEFAULT_MIN_POINTS,
    dedup: bool = True,
) -> list[ExtractedObject]:
    """Extract every qualifying (frame, box) occurrence.

    Args:
        scenes: source scenes.
        categories: keep only these categories; ``None`` keeps all.
        min_points: minimum interior point count per entry.
        dedup: keep only the densest occurrence of each track.

    Returns:
        Entries sorted by (scene id, frame index, track id).
    """
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    scenes = list(scenes)
    if not scenes:
        log.warning("no scenes given; object bank is empty")
        return []
    entries: list[ExtractedObject] = []
    for scene in scenes:
        for fi, frame in enumerate(scene.frames):
            for box in frame.boxes:
                if categories is not None and box.category not in categories:
                    continue
                try:
                    obj = extract_object(frame, box, scene.id, fi)
                except EmptyObjectError:
                    continue
                if obj.num_points >= min_points:
                    entries.append(obj)
    if dedup:
        best: dict[tuple[str, str], ExtractedObject] = {}
        for obj in entries:
            key = (obj.source[0], obj.source[2])
            # strict > keeps the earliest frame among ties
            if key not in best or obj.num_points > best[key].num_points:
                best[key] = obj
        entries = list(best.values())
    entries.sort(key=lambda o: o.source)
    return entries


def category_histogram(bank: Iterable[ExtractedObject]) -> dict[str, int]:
    return dict(sorted(Counter(o.category for o in bank).items()))


def write_bank(bank: Sequence[ExtractedObject], directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for k, obj in enumerate(bank):
        name = f"objects/{k:06d}.bin"
        write_cloud(obj.points, directory / name)
        index.append(
            {
                "file": name,
                "size_wlh": list(obj.template.size),
                "category": obj.category,
                "source": {"scene_id": obj.source[0], "frame_index": obj.source[1], "track_id": obj.source[2]},
                "source_speed": obj.source_speed,
                "num_points": obj.num_points,
            }
        )
    dump_json({"format_version": FORMAT_VERSION, "entries": index}, directory / "index.json")


def read_bank(directory: str | os.PathLike) -> list[ExtractedObject]:
    """Load a bank and re-validate each entry's containment."""
    directory = Path(directory)
    doc = load_json(directory / "index.json")
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{directory}: unsupported bank index")
    bank = []
    for k, entry in enumerate(doc.get("entries", [])):
        try:
            src = entry["source"]
            points = read_cloud(directory / entry["file"])
            template = OrientedBox((0.0, 0.0, 0.0), entry["size_wlh"], 0.0, (0.0, 0.0),
                                   entry["category"], src["track_id"])
            obj = ExtractedObject(points, template, (src["scene_id"], int(src["frame_index"]), src["track_id"]),
                                  float(entry["source_speed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bank entry {k}: {exc}") from exc
        if obj.num_points != entry["num_points"]:
            raise DataIntegrityError(f"bank entry {k}: point count mismatch")
        # stored float32 can land a hair past a face
        obj.check_containment(epsilon=1e-4)
        bank.append(obj)
    return bank
