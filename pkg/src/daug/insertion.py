"""Reference-guided insertion of bank objects into multi-frame scenes.

Inserted objects follow a straight constant-velocity path. Candidate
positions are accepted only if their footprint is on road, the moving box
stays clear of every annotated box over the collision horizon, and a
ground height can be estimated.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, GroundingError, InvalidBoxError
from .extraction import ExtractedObject, place_object
from .geometry import OrientedBox, transform_cloud
from .maps import DEFAULT_HALF_EXTENT, CroppedMap, RasterMap, crop_and_rotate, is_road_valid
from .scene_io import Frame, Scene

DEFAULT_NUM_OBJECTS = 5
MOTION_YAW_THRESHOLD = 0.5  # m/s
MIN_GROUND_POINTS = 30
GROUND_PERCENTILE = 5.0
INSERTED_PREFIX = "aug-"
REJECTION_REASONS = ("road", "collision", "grounding", "no_reference")

# Inserted positions and per-frame steps sit on this dyadic lattice so that
# center(i) = center0 + k * step is exact in float64.
POSITION_QUANTUM = 2.0 ** -20


@dataclass(frozen=True)
class AugmentationPlan:
    seed: int = 0
    num_objects: int = DEFAULT_NUM_OBJECTS
    search_radius: float = 10.0
    attempts_per_reference: int = 32
    collision_horizon: int | None = None  # frames after insertion; None = to the last frame
    collision_margin: float = 0.5
    frame_dt: float | None = None  # None = derive from scene timestamps
    insertion_frame: int = 0
    strict_road: bool = False
    inner_radius: float = 2.0
    ground_radius: float = 2.0
    max_speed: float = 20.0
    crop_half_extent: float = DEFAULT_HALF_EXTENT

    def __post_init__(self) -> None:
        if self.num_objects < 1:
            raise ConfigError("num_objects must be >= 1")
        if not self.search_radius > 0:
            raise ConfigError("search_radius must be positive")
        if not 0 <= self.inner_radius < self.search_radius:
            raise ConfigError("inner_radius must lie in [0, search_radius)")
        if self.attempts_per_reference < 1:
            raise ConfigError("attempts_per_reference must be >= 1")
        if self.collision_margin < 0:
            raise ConfigError("collision_margin must be >= 0")
        if self.collision_horizon is not None and self.collision_horizon < 0:
            raise ConfigError("collision_horizon must be >= 0")
        if not self.ground_radius > 0:
            raise ConfigError("ground_radius must be positive")
        if self.insertion_frame < 0:
            raise ConfigError("insertion_frame must be >= 0")

    def horizon(self, num_frames: int, start: int | None = None) -> range:
        """Frame indices checked and populated for an insertion at ``start``."""
        start = self.insertion_frame if start is None else start
        last = num_frames - 1
        if self.collision_horizon is not None:
            last = min(last, start + self.collision_horizon)
        return range(start, last + 1)

    def resolve_dt(self, scene: Scene) -> float:
        if self.frame_dt is not None:
            return float(self.frame_dt)
        return scene.frame_dt or 0.0


def snap(value: float) -> float:
    return round(value / POSITION_QUANTUM) * POSITION_QUANTUM


def _exact_multiplier(target: float, frame_dt: float) -> float | None:
    """A float q with fl(frame_dt * q) == target, searched a few ulps around target / frame_dt."""
    guess = target / frame_dt
    candidates = [guess]
    lo = hi = guess
    for _ in range(4):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        candidates += [lo, hi]
    for q in candidates:
        if frame_dt * q == target:
            return q
    return None


def quantize_velocity(velocity: Sequence[float], frame_dt: float) -> tuple[float, float]:
    """Nudge a velocity so that ``frame_dt * v`` lands exactly on the position lattice.

    Some lattice steps have no exact float multiplier (neighbouring
    velocities straddle them); the nearest reachable lattice step is used then.
    """
    if frame_dt <= 0:
        return (float(velocity[0]), float(velocity[1]))
    out = []
    for v in velocity:
        base = snap(frame_dt * float(v))
        for j in (0, 1, -1, 2, -2, 3, -3):
            q = _exact_multiplier(base + j * POSITION_QUANTUM, frame_dt)
            if q is not None:
                break
        else:
            raise ArithmeticError(f"no exact step near {base} at dt={frame_dt}")
        out.append(q)
    return (out[0], out[1])


@dataclass(frozen=True, eq=False)
class Placement:
    """Inserted-object trajectory: center(i) = center0 + (i - insertion_frame) * frame_dt * velocity."""

    object: ExtractedObject
    center0: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float]
    insertion_frame: int
    frame_dt: float
    last_frame: int

    @property
    def step(self) -> tuple[float, float]:
        return (self.frame_dt * self.velocity[0], self.frame_dt * self.velocity[1])

    def center_at(self, i: int) -> tuple[float, float, float]:
        k = i - self.insertion_frame
        sx, sy = self.step
        return (self.center0[0] + k * sx, self.center0[1] + k * sy, self.center0[2])

    def box_at(self, i: int, track_id: str = "") -> OrientedBox:
        return OrientedBox(self.center_at(i), self.object.template.size, self.yaw, self.velocity,
                           self.object.category, track_id)

    @property
    def frames(self) -> range:
        return range(self.insertion_frame, self.last_frame + 1)


def move_box(box: OrientedBox, displacement: Sequence[float]) -> OrientedBox:
    x, y, z = box.center
    return box.replace(center=(x + displacement[0], y + displacement[1], z))


def _rect_arrays(boxes: Sequence[OrientedBox]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = np.array([b.center[:2] for b in boxes], dtype=np.float64).reshape(-1, 2)
    yaws = np.array([b.yaw for b in boxes], dtype=np.float64)
    halves = np.array([b.half_extents[:2] for b in boxes], dtype=np.float64).reshape(-1, 2)
    return centers, yaws, halves


def rects_overlap(ca, ya, ha, cb, yb, hb) -> np.ndarray:
    """Vectorised separating-axis test for XY rectangles (touching counts as overlap).

    ``c*`` are (N, 2) centers, ``y*`` (N,) yaws and ``h*`` (N, 2) half sizes
    along each rectangle's own (x, y) axes. Inputs broadcast.
    """
    ca, cb = np.asarray(ca, float), np.asarray(cb, float)
    ha, hb = np.asarray(ha, float), np.asarray(hb, float)
    ya, yb = np.asarray(ya, float), np.asarray(yb, float)
    d = cb - ca
    a_axes = [np.stack([np.cos(ya), np.sin(ya)], -1), np.stack([-np.sin(ya), np.cos(ya)], -1)]
    b_axes = [np.stack([np.cos(yb), np.sin(yb)], -1), np.stack([-np.sin(yb), np.cos(yb)], -1)]
    overlap = np.ones(np.broadcast_shapes(d.shape[:-1], ya.shape, yb.shape), dtype=bool)
    for axis in a_axes + b_axes:
        ra = ha[..., 0] * np.abs(np.sum(a_axes[0] * axis, -1)) + ha[..., 1] * np.abs(np.sum(a_axes[1] * axis, -1))
        rb = hb[..., 0] * np.abs(np.sum(b_axes[0] * axis, -1)) + hb[..., 1] * np.abs(np.sum(b_axes[1] * axis, -1))
        overlap &= np.abs(np.sum(d * axis, -1)) <= ra + rb
    return overlap


def boxes_collide(a: OrientedBox, b: OrientedBox, margin: float = 0.0) -> bool:
    """XY-projection overlap of two boxes, each grown by ``margin / 2`` per side."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if min(a.size) <= 0 or min(b.size) <= 0:
        raise InvalidBoxError("degenerate box")
    grow = 0.5 * margin
    ca, ya, ha = _rect_arrays([a])
    cb, yb, hb = _rect_arrays([b])
    return bool(rects_overlap(ca, ya, ha + grow, cb, yb, hb + grow)[0])


class HorizonBoxes:
    """Annotated boxes of every horizon frame, flattened for vectorised checks."""

    def __init__(self, scene: Scene, frames: Sequence[int]):
        idx, boxes = [], []
        for i in frames:
            for box in scene.frames[i].boxes:
                idx.append(i)
                boxes.append(box)
        self.frame_index = np.array(idx, dtype=np.int64)
        self.centers, self.yaws, self.halves = _rect_arrays(boxes)

    def __len__(self) -> int:
        return len(self.frame_index)

    def hits(self, placement: Placement, margin: float) -> np.ndarray:
        """Mask of scene boxes hit by the moving inserted box in their own frame."""
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        k = (self.frame_index - placement.insertion_frame).astype(np.float64)
        step = np.array(placement.step)
        moved = np.array(placement.center0[:2]) + k[:, None] * step
        size = placement.object.template.size
        half = 0.5 * np.array(size[:2]) + 0.5 * margin
        return rects_overlap(moved, np.full(len(self), placement.yaw), half,
                             self.centers, self.yaws, self.halves + 0.5 * margin)


def dynamic_collision(scene: Scene, placement: Placement, plan: AugmentationPlan) -> bool:
    """Whether the inserted box, moved along its velocity, hits any annotated box in the horizon."""
    frames = plan.horizon(len(scene.frames), placement.insertion_frame)
    return bool(HorizonBoxes(scene, frames).hits(placement, plan.collision_margin).any())


def ground_height(
    frame: Frame,
    xy: Sequence[float],
    radius: float = 2.0,
    reference: OrientedBox | None = None,
) -> float:
    """Low percentile of point heights around ``xy``; falls back to the reference box bottom."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = frame.global_cloud.xyz
    d2 = (pts[:, 0] - xy[0]) ** 2 + (pts[:, 1] - xy[1]) ** 2
    z = pts[d2 <= radius * radius, 2]
    if len(z) >= MIN_GROUND_POINTS:
        return float(np.percentile(z, GROUND_PERCENTILE))
    if reference is not None:
        return reference.bottom_z
    raise GroundingError(f"no ground estimate near ({xy[0]:.2f}, {xy[1]:.2f})")


def align_yaw(reference: OrientedBox) -> float:
    """Heading for an object inserted next to ``reference``; motion direction wins when moving."""
    vx, vy = reference.velocity
    if math.hypot(vx, vy) > MOTION_YAW_THRESHOLD:
        return math.atan2(vy, vx)
    return reference.yaw


def search_insertion(
    scene: Scene,
    frame_idx: int,
    obj: ExtractedObject,
    crop: CroppedMap | None,
    plan: AugmentationPlan,
    rng: np.random.Generator,
    tally: Counter | None = None,
    crop_for_frame: Callable[[int], CroppedMap] | None = None,
) -> Placement | None:
    """Look for a collision-free, on-road, grounded position near a random reference.

    References are visited in a seeded random order without replacement and
    each gets ``plan.attempts_per_reference`` candidates drawn uniformly in
    the annulus ``[plan.inner_radius, plan.search_radius]``. Every rejection
    is counted in ``tally`` under one of :data:`REJECTION_REASONS`.
    """
    tally = Counter() if tally is None else tally
    frame = scene.frames[frame_idx]
    if not frame.boxes:
        tally["no_reference"] += 1
        return None
    dt = plan.resolve_dt(scene)
    frames = plan.horizon(len(scene.frames), frame_idx)
    obstacles = HorizonBoxes(scene, frames)
    speed = min(obj.source_speed, plan.max_speed)
    r_in2, r_out2 = plan.inner_radius ** 2, plan.search_radius ** 2
    size = obj.template.size

    for ref_idx in rng.permutation(len(frame.boxes)):
        ref = frame.boxes[int(ref_idx)]
        yaw = align_yaw(ref)
        velocity = quantize_velocity((speed * math.cos(yaw), speed * math.sin(yaw)), dt)
        for _ in range(plan.attempts_per_reference):
            radius = math.sqrt(rng.uniform(r_in2, r_out2))
            theta = rng.uniform(0.0, 2.0 * math.pi)
            x = snap(ref.center[0] + radius * math.cos(theta))
            y = snap(ref.center[1] + radius * math.sin(theta))
            candidate = Placement(obj, (x, y, ref.center[2]), yaw, velocity, frame_idx, dt, frames[-1])
            if crop is not None:
                if not is_road_valid(candidate.box_at(frame_idx), crop):
                    tally["road"] += 1
                    continue
                if plan.strict_road and crop_for_frame is not None and not all(
                    is_road_valid(candidate.box_at(i), crop_for_frame(i)) for i in frames[1:]
                ):
                    tally["road"] += 1
                    continue
            if obstacles.hits(candidate, plan.collision_margin).any():
                tally["collision"] += 1
                continue
            try:
                ground = ground_height(frame, (x, y), plan.ground_radius, ref)
            except GroundingError:
                tally["grounding"] += 1
                continue
            return Placement(obj, (x, y, ground + 0.5 * size[2]), yaw, velocity, frame_idx, dt, frames[-1])
    return None


def apply_placement(scene: Scene, placement: Placement, track_id: str | None = None) -> Scene:
    """Append the object's points and box to every frame of the placement's horizon."""
    if track_id is None:
        taken = {b.track_id for f in scene.frames for b in f.boxes}
        n = 0
        while f"{INSERTED_PREFIX}{n}" in taken:
            n += 1
        track_id = f"{INSERTED_PREFIX}{n}"
    frames = list(scene.frames)
    for i in placement.frames:
        frame = frames[i]
        box = placement.box_at(i, track_id)
        world = place_object(placement.object, box.center, box.yaw)
        local = transform_cloud(world, frame.sensor_to_global, "to_local")
        frames[i] = frame.with_changes(cloud=frame.cloud.concat(local), boxes=frame.boxes + (box,))
    return scene.with_frames(frames)


def _failure_reason(tally: Counter) -> str:
    # the furthest gate any candidate reached
    for reason in ("no_reference", "grounding", "collision"):
        if tally[reason]:
            return reason
    return "road"


def placement_record(placement: Placement, track_id: str, bank_index: int) -> dict[str, Any]:
    obj = placement.object
    return {
        "track_id": track_id,
        "bank_index": int(bank_index),
        "category": obj.category,
        "source": {"scene_id": obj.source[0], "frame_index": obj.source[1], "track_id": obj.source[2]},
        "num_points": obj.num_points,
        "center0": list(placement.center0),
        "yaw": placement.yaw,
        "velocity": list(placement.velocity),
        "insertion_frame": placement.insertion_frame,
        "last_frame": placement.last_frame,
        "frame_dt": placement.frame_dt,
    }


def augment_scene(
    scene: Scene,
    bank: Sequence[ExtractedObject],
    raster: RasterMap | None,
    plan: AugmentationPlan,
) -> tuple[Scene, dict[str, Any]]:
    """Insert up to ``plan.num_objects`` bank objects into ``scene``.

    All randomness comes from one generator seeded with ``plan.seed``.
    Returns the augmented scene and a JSON-ready report.
    """
    if not bank:
        raise ConfigError("object bank is empty")
    if plan.insertion_frame >= len(scene.frames):
        raise ConfigError(f"insertion_frame {plan.insertion_frame} outside scene {scene.id!r}")
    rng = np.random.default_rng(plan.seed)
    picks = rng.choice(len(bank), size=plan.num_objects, replace=len(bank) < plan.num_objects)

    crops: dict[int, CroppedMap] = {}

    def crop_for_frame(i: int) -> CroppedMap:
        if i not in crops:
            crops[i] = crop_and_rotate(raster, scene.frames[i].ego_pose, plan.crop_half_extent)
        return crops[i]

    crop = crop_for_frame(plan.insertion_frame) if raster is not None else None
    current = scene
    taken = {b.track_id for f in scene.frames for b in f.boxes}
    placements, failures = [], []
    totals: Counter = Counter()
    for k, bank_index in enumerate(picks):
        obj = bank[int(bank_index)]
        tally: Counter = Counter()
        placement = search_insertion(current, plan.insertion_frame, obj, crop, plan, rng, tally,
                                     crop_for_frame if raster is not None else None)
        totals.update(tally)
        if placement is None:
            failures.append({"bank_index": int(bank_index), "category": obj.category,
                             "reason": _failure_reason(tally)})
            continue
        n = k
        while f"{INSERTED_PREFIX}{n}" in taken:
            n += 1
        track_id = f"{INSERTED_PREFIX}{n}"
        taken.add(track_id)
        current = apply_placement(current, placement, track_id)
        placements.append(placement_record(placement, track_id, int(bank_index)))

    report = {
        "scene_id": scene.id,
        "frame_dt": plan.resolve_dt(scene),
        "road_check": raster is not None,
        "strict_road": plan.strict_road,
        "plan": asdict(plan),
        "placements": placements,
        "failures": failures,
        "rejections": {reason: int(totals[reason]) for reason in REJECTION_REASONS},
    }
    return current, report


def inserted_boxes(scene: Scene) -> dict[str, list[tuple[int, OrientedBox]]]:
    """Per inserted track id, its (frame index, box) occurrences in order."""
    tracks: dict[str, list[tuple[int, OrientedBox]]] = {}
    for i, frame in enumerate(scene.frames):
        for box in frame.boxes:
            if box.track_id.startswith(INSERTED_PREFIX):
                tracks.setdefault(box.track_id, []).append((i, box))
    return tracks

