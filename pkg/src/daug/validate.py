"""Post-hoc checks on augmented scenes.

Every check here is computed by a route separate from the one used during
insertion: shapely polygons for box overlap, dense point sampling for
road validity and a footprint-masked median for the ground height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .geometry import OrientedBox
from .insertion import inserted_boxes
from .maps import DEFAULT_HALF_EXTENT, ROAD, RasterMap, crop_and_rotate
from .scene_io import Scene

GROUND_TOLERANCE = 0.1
GROUND_RADII = (3.0, 5.0)
MIN_GROUND_SAMPLES = 10


@dataclass
class Violation:
    invariant: str
    track_id: str
    frame: int
    detail: str

    def as_dict(self) -> dict[str, Any]:
        return {"invariant": self.invariant, "track_id": self.track_id, "frame": self.frame, "detail": self.detail}


@dataclass
class ValidationResult:
    scene_id: str
    inserted_tracks: int = 0
    violations: list[Violation] = field(default_factory=list)
    unverified: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "inserted_tracks": self.inserted_tracks,
            "violations": [v.as_dict() for v in self.violations],
            "unverified": list(self.unverified),
        }


def _polygon(box: OrientedBox):
    from shapely.geometry import Polygon

    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hx, hy = box.half_extents[:2]
    pts = [(box.center[0] + c * u - s * v, box.center[1] + s * u + c * v)
           for u, v in ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy))]
    return Polygon(pts)


def check_continuity(scene: Scene, track_id: str, occurrences: list[tuple[int, OrientedBox]]) -> list[Violation]:
    """Consecutive stored centers must differ by exactly the float64 step ``frame_dt * V``."""
    out = []
    dt = scene.frame_dt or 0.0
    frames = [i for i, _ in occurrences]
    if frames != list(range(frames[0], frames[0] + len(frames))):
        out.append(Violation("continuity", track_id, frames[0], "track skips frames"))
    first = occurrences[0][1]
    for (i, a), (j, b) in zip(occurrences, occurrences[1:]):
        if b.velocity != first.velocity or b.yaw != first.yaw or b.size != first.size:
            out.append(Violation("continuity", track_id, j, "velocity, yaw or size changed along the track"))
            continue
        step = (dt * b.velocity[0], dt * b.velocity[1])
        moved = (Fraction(b.center[0]) - Fraction(a.center[0]), Fraction(b.center[1]) - Fraction(a.center[1]))
        if moved != (Fraction(step[0]), Fraction(step[1])) or b.center[2] != a.center[2]:
            out.append(Violation(
                "continuity", track_id, j,
                f"center step {tuple(float(m) for m in moved)} != frame_dt*V {step}"))
    return out


def check_collisions(scene: Scene, track_id: str, occurrences: list[tuple[int, OrientedBox]]) -> list[Violation]:
    out = []
    for i, box in occurrences:
        mine = _polygon(box)
        for other in scene.frames[i].boxes:
            if other.track_id == track_id:
                continue
            if mine.intersects(_polygon(other)):
                out.append(Violation("collision", track_id, i, f"overlaps {other.track_id}"))
    return out


def estimate_ground(scene: Scene, frame_index: int, box: OrientedBox) -> float | None:
    """Median height of nearby points lying outside every annotated footprint."""
    frame = scene.frames[frame_index]
    pts = frame.global_cloud.xyz
    free = np.ones(len(pts), dtype=bool)
    for other in frame.boxes:
        d = pts[:, :2] - np.array(other.center[:2])
        c, s = math.cos(other.yaw), math.sin(other.yaw)
        u = np.abs(d[:, 0] * c + d[:, 1] * s)
        v = np.abs(-d[:, 0] * s + d[:, 1] * c)
        hx, hy = other.half_extents[:2]
        free &= ~((u <= hx + 0.1) & (v <= hy + 0.1))
    d2 = np.sum((pts[:, :2] - np.array(box.center[:2])) ** 2, axis=1)
    for radius in GROUND_RADII:
        z = pts[free & (d2 <= radius * radius), 2]
        if len(z) >= MIN_GROUND_SAMPLES:
            return float(np.median(z))
    return None


def check_road(raster: RasterMap, scene: Scene, track_id: str, frame_index: int, box: OrientedBox,
               half_extent: float) -> list[Violation]:
    """Dense samples over the box rectangle must all land on road pixels of the insertion-frame crop."""
    crop = crop_and_rotate(raster, scene.frames[frame_index].ego_pose, half_extent)
    res = crop.raster.resolution
    hx, hy = box.half_extents[:2]
    nu = max(2, int(math.ceil(2 * hx / (0.25 * res))) + 1)
    nv = max(2, int(math.ceil(2 * hy / (0.25 * res))) + 1)
    u, v = np.meshgrid(np.linspace(-hx, hx, nu), np.linspace(-hy, hy, nv))
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xy = np.stack([box.center[0] + c * u.ravel() - s * v.ravel(),
                   box.center[1] + s * u.ravel() + c * v.ravel()], axis=1)
    pix = np.floor(crop.to_pixel(xy)).astype(np.int64)
    n = crop.size
    inside = np.all((pix >= 0) & (pix < n), axis=1)
    if not inside.all():
        return [Violation("road", track_id, frame_index, "footprint leaves the map crop")]
    codes = crop.raster.cells[pix[:, 1], pix[:, 0]]
    if np.any(codes != ROAD):
        return [Violation("road", track_id, frame_index,
                          f"{int(np.sum(codes != ROAD))} footprint samples off road")]
    return []


def validate_scene(scene: Scene, raster: RasterMap | None = None, half_extent: float | None = None) -> ValidationResult:
    """Re-check continuity, collision freedom, grounding and road validity of inserted objects."""
    if half_extent is None:
        half_extent = float((scene.map_ref or {}).get("crop_half_extent_m", DEFAULT_HALF_EXTENT))
    result = ValidationResult(scene.id)
    for track_id, occ in sorted(inserted_boxes(scene).items()):
        result.inserted_tracks += 1
        result.violations += check_continuity(scene, track_id, occ)
        result.violations += check_collisions(scene, track_id, occ)
        start, box = occ[0]
        ground = estimate_ground(scene, start, box)
        if ground is None:
            result.unverified.append(f"{track_id}: no ground samples")
        elif abs(box.bottom_z - ground) > GROUND_TOLERANCE:
            result.violations.append(Violation(
                "grounding", track_id, start, f"bottom {box.bottom_z:.3f} vs ground {ground:.3f}"))
        if raster is None:
            result.unverified.append(f"{track_id}: no map for road check")
        else:
            result.violations += check_road(raster, scene, track_id, start, box, half_extent)
    return result

