"""Deterministic synthetic driving scenes, maps and corpora."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import SpecError
from .geometry import CoordFrame, OrientedBox, PointCloud, Pose, compose_pose, transform_cloud
from .insertion import boxes_collide
from .maps import DEFAULT_PALETTE, PolygonLayerMap, RasterMap, pixelize
from .scene_io import Frame, Scene, default_lidar_file, write_layers, write_manifest, write_raster

BASE_TIMESTAMP_US = 1_533_000_000_000_000
SHELL_INSET = 0.02  # keeps surface points clear of float32 rounding at the faces
FOOTPRINT_CLEARANCE = 0.05
MAP_FILES = {"grid_file": "map.grid", "meta_file": "map.json", "layers_file": "layers.json"}


@dataclass(frozen=True)
class ActorSpec:
    """One constant-velocity actor.

    ``lane`` counts from the rightmost lane of the forward direction; lanes
    ``0 .. num_lanes/2 - 1`` drive along the road heading, the rest against it.
    ``offset`` is the frame-0 position along the road axis in meters.
    ``size`` is (w, l, h) with w measured along the direction of travel.
    """

    category: str = "car"
    size: tuple[float, float, float] = (4.5, 1.9, 1.6)
    speed: float = 0.0
    lane: int = 0
    offset: float = 0.0
    road: int = 0


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    scene_id: str = "synth-0000"
    layout: str = "straight"
    num_frames: int = 20
    frame_dt: float = 0.05
    actors: tuple[ActorSpec, ...] = ()
    ground_z: float = 0.0
    points_per_actor: int = 200
    ground_density: float = 4.0  # points per m^2
    ground_noise: float = 0.005
    num_lanes: int = 4
    lane_width: float = 3.5
    sidewalk_width: float = 3.0
    verge_width: float = 10.0
    road_length: float = 240.0
    segment_length: float = 20.0
    road_heading: float = 0.0
    origin: tuple[float, float] = (500.0, 1200.0)
    ego_speed: float = 5.0
    ego_offset: float = -20.0
    lidar_range: float = 60.0
    resolution: float = 0.1
    crop_half_extent: float = 60.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "actors", tuple(
            a if isinstance(a, ActorSpec) else ActorSpec(**a) for a in self.actors))
        if self.num_frames < 1:
            raise SpecError("num_frames must be >= 1")
        if self.layout not in ("straight", "intersection"):
            raise SpecError(f"unknown layout {self.layout!r}")
        if self.frame_dt <= 0:
            raise SpecError("frame_dt must be positive")
        if self.ground_density < 0 or self.points_per_actor < 0:
            raise SpecError("densities and point counts must be >= 0")
        if self.num_lanes < 2 or self.num_lanes % 2:
            raise SpecError("num_lanes must be an even number >= 2")
        for a in self.actors:
            if a.speed < 0:
                raise SpecError("actor speeds must be >= 0")
            if not 0 <= a.lane < self.num_lanes:
                raise SpecError(f"lane {a.lane} outside 0..{self.num_lanes - 1}")
            if a.road == 1 and self.layout != "intersection":
                raise SpecError("road 1 exists only in the intersection layout")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> SynthSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown synth spec keys {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("origin",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "actors" in kwargs:
            kwargs["actors"] = tuple(ActorSpec(**{**a, "size": tuple(a.get("size", ActorSpec.size))})
                                     for a in kwargs["actors"])
        return cls(**kwargs)

    @property
    def half_road_width(self) -> float:
        return 0.5 * self.num_lanes * self.lane_width

    def lane_offset(self, lane: int) -> float:
        """Lateral offset of a lane center; negative is right of the heading."""
        return (lane + 0.5) * self.lane_width - self.half_road_width

    def lane_direction(self, lane: int) -> float:
        return 1.0 if lane < self.num_lanes // 2 else -1.0


@dataclass
class GroundTruth:
    """Exact generator state exposed for oracle checks."""

    actor_centers: dict[str, np.ndarray]
    actor_boxes: list[list[OrientedBox]]
    ego_positions: np.ndarray
    ground_z: float
    map_bounds: tuple[float, float, float, float]
    actor_points: dict[str, int] = field(default_factory=dict)


def _rotate(local: np.ndarray, heading: float, origin: Sequence[float]) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    local = np.atleast_2d(np.asarray(local, dtype=np.float64))
    return np.stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1]], axis=1) + np.asarray(origin)


def _rect(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def road_layers(spec: SynthSpec) -> PolygonLayerMap:
    """Road segments, sidewalks and verges for the spec's layout, in global meters."""
    hw, sw, vw = spec.half_road_width, spec.sidewalk_width, spec.verge_width
    half_len = 0.5 * spec.road_length
    local: list[tuple[str, np.ndarray]] = []
    edges = np.arange(-half_len, half_len + 1e-9, spec.segment_length)
    if edges[-1] < half_len:
        edges = np.append(edges, half_len)
    cross = spec.layout == "intersection"

    def strips_along(axis: int) -> None:
        outer = hw + sw
        for a, b in zip(edges[:-1], edges[1:]):
            pieces = [("road", (-hw, hw))]
            if cross:
                # side strips stop where the other road crosses
                if b <= -outer or a >= outer:
                    pieces += [("sidewalk", (hw, outer)), ("sidewalk", (-outer, -hw)),
                               ("vegetation", (outer, outer + vw)), ("vegetation", (-outer - vw, -outer))]
            else:
                pieces += [("sidewalk", (hw, outer)), ("sidewalk", (-outer, -hw)),
                           ("vegetation", (outer, outer + vw)), ("vegetation", (-outer - vw, -outer))]
            for cat, (lo, hi) in pieces:
                poly = _rect(a, lo, b, hi) if axis == 0 else _rect(lo, a, hi, b)
                local.append((cat, poly))

    strips_along(0)
    if cross:
        strips_along(1)
    layers = [(cat, _rotate(poly, spec.road_heading, spec.origin)) for cat, poly in local]
    # roads last so that they are never painted over
    layers.sort(key=lambda item: item[0] == "road")
    return PolygonLayerMap.from_pairs(layers)


def map_bounds(layers: PolygonLayerMap, resolution: float) -> tuple[float, float, float, float]:
    pts = np.concatenate([l.vertices for l in layers.layers])
    lo = np.floor(pts.min(axis=0) / resolution) * resolution - resolution
    hi = np.ceil(pts.max(axis=0) / resolution) * resolution + resolution
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def synth_raster(layers: PolygonLayerMap, resolution: float = 0.1) -> RasterMap:
    return pixelize(layers, resolution, map_bounds(layers, resolution), DEFAULT_PALETTE)


def sample_box_shell(size: Sequence[float], n: int, rng: np.random.Generator, inset: float = SHELL_INSET) -> np.ndarray:
    """Points on the six faces of a (w, l, h) box in box-local axes, uniform per unit area."""
    w, l, h = size
    half = 0.5 * np.array([w, l, h]) - inset
    areas = np.array([l * h, l * h, w * h, w * h, w * l, w * l])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    uv[np.arange(n), axis] = sign * half[axis]
    return uv


def _actor_local_center(spec: SynthSpec, actor: ActorSpec, t: float) -> tuple[np.ndarray, float]:
    direction = spec.lane_direction(actor.lane)
    along = actor.offset + direction * actor.speed * t
    lateral = spec.lane_offset(actor.lane)
    if actor.road == 0:
        return np.array([along, lateral]), (0.0 if direction > 0 else math.pi)
    # cross road runs along local +y; its right-hand side is local +x
    return np.array([-lateral, along]), (0.5 * math.pi if direction > 0 else -0.5 * math.pi)


def actor_box(spec: SynthSpec, actor: ActorSpec, k: int, track_id: str) -> OrientedBox:
    local, rel_yaw = _actor_local_center(spec, actor, k * spec.frame_dt)
    xy = _rotate(local, spec.road_heading, spec.origin)[0]
    yaw = spec.road_heading + rel_yaw
    velocity = (actor.speed * math.cos(yaw), actor.speed * math.sin(yaw))
    z = spec.ground_z + 0.5 * actor.size[2]
    return OrientedBox((xy[0], xy[1], z), actor.size, yaw, velocity, actor.category, track_id)


def _inside_boxes_xy(xy: np.ndarray, boxes: Sequence[OrientedBox], clearance: float) -> np.ndarray:
    hit = np.zeros(len(xy), dtype=bool)
    for box in boxes:
        d = xy - np.array(box.center[:2])
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        u = d[:, 0] * c + d[:, 1] * s
        v = -d[:, 0] * s + d[:, 1] * c
        hx, hy = box.half_extents[:2]
        hit |= (np.abs(u) <= hx + clearance) & (np.abs(v) <= hy + clearance)
    return hit


def generate(spec: SynthSpec) -> tuple[Scene, PolygonLayerMap, GroundTruth]:
    """Build a scene, its vector map and the exact generator state.

    Actors are shells of ``points_per_actor`` rigid surface points; ground
    points cover road and sidewalk within LiDAR range, except under actors.
    """
    rng = np.random.default_rng(spec.seed)
    layers = road_layers(spec)
    raster = synth_raster(layers, spec.resolution)
    surfaced_codes = [raster.palette["road"], raster.palette["sidewalk"]]
    track_ids = [f"{spec.scene_id}-actor-{j}" for j in range(len(spec.actors))]

    first = [actor_box(spec, a, 0, t) for a, t in zip(spec.actors, track_ids)]
    for i in range(len(first)):
        for j in range(i + 1, len(first)):
            if boxes_collide(first[i], first[j]):
                raise SpecError(f"actors {i} and {j} overlap at frame 0")

    shells = [sample_box_shell(a.size, spec.points_per_actor, rng) for a in spec.actors]
    shell_intensity = [rng.uniform(0.0, 100.0, spec.points_per_actor).astype(np.float32) for _ in spec.actors]
    shell_ring = [rng.integers(0, 32, spec.points_per_actor) for _ in spec.actors]
    calib = Pose.from_yaw(-0.5 * math.pi, (0.94, 0.0, 1.84))
    ego_lane = spec.num_lanes // 2 - 1
    step_us = int(round(spec.frame_dt * 1e6))

    frames, ego_positions = [], []
    boxes_by_frame: list[list[OrientedBox]] = []
    for k in range(spec.num_frames):
        boxes = [actor_box(spec, a, k, t) for a, t in zip(spec.actors, track_ids)]
        ego_local = np.array([spec.ego_offset + spec.ego_speed * k * spec.frame_dt, spec.lane_offset(ego_lane)])
        ego_xy = _rotate(ego_local, spec.road_heading, spec.origin)[0]
        ego = Pose.from_yaw(spec.road_heading, (ego_xy[0], ego_xy[1], spec.ground_z))
        ego_positions.append(ego_xy)

        r = spec.lidar_range
        n_ground = rng.poisson(spec.ground_density * 4.0 * r * r)
        g = rng.uniform(-r, r, size=(n_ground, 2))
        g = g[np.sum(g * g, axis=1) <= r * r] + ego_xy
        on_surface = np.isin(raster.code_at(g), surfaced_codes)
        g = g[on_surface & ~_inside_boxes_xy(g, boxes, FOOTPRINT_CLEARANCE)]
        gz = spec.ground_z + rng.normal(0.0, spec.ground_noise, len(g))
        parts_xyz = [np.column_stack([g, gz])]
        parts_int = [rng.uniform(0.0, 30.0, len(g)).astype(np.float32)]
        parts_ring = [rng.integers(0, 32, len(g))]
        for box, shell, inten, ring in zip(boxes, shells, shell_intensity, shell_ring):
            parts_xyz.append(box.pose.apply(shell))
            parts_int.append(inten)
            parts_ring.append(ring)
        world = PointCloud(np.concatenate(parts_xyz), np.concatenate(parts_int),
                           np.concatenate(parts_ring), CoordFrame.GLOBAL)
        sensor = transform_cloud(world, compose_pose(ego, calib), "to_local")
        frames.append(Frame(BASE_TIMESTAMP_US + k * step_us, sensor, ego, calib, tuple(boxes),
                            default_lidar_file(k)))
        boxes_by_frame.append(boxes)

    scene = Scene(spec.scene_id, tuple(frames), map_ref={**MAP_FILES, "crop_half_extent_m": spec.crop_half_extent})
    truth = GroundTruth(
        actor_centers={t: np.array([boxes_by_frame[k][j].center for k in range(spec.num_frames)])
                       for j, t in enumerate(track_ids)},
        actor_boxes=boxes_by_frame,
        ego_positions=np.array(ego_positions),
        ground_z=spec.ground_z,
        map_bounds=map_bounds(layers, spec.resolution),
        actor_points={t: spec.points_per_actor for t in track_ids},
    )
    return scene, layers, truth


def random_actors(
    spec: SynthSpec,
    count: int,
    rng: np.random.Generator,
    speed_range: tuple[float, float] = (0.0, 10.0),
    categories: Mapping[str, Sequence[float]] | None = None,
    spread: float = 60.0,
    max_tries: int = 200,
) -> tuple[ActorSpec, ...]:
    """Non-overlapping actors scattered over the lanes within ``spread`` meters of the origin."""
    categories = categories or {"car": (4.5, 1.9, 1.6), "truck": (8.0, 2.5, 3.0), "pedestrian": (0.7, 0.7, 1.8)}
    names = sorted(categories)
    roads = 2 if spec.layout == "intersection" else 1
    actors: list[ActorSpec] = []
    placed: list[OrientedBox] = []
    for _ in range(max_tries):
        if len(actors) >= count:
            break
        name = names[int(rng.integers(len(names)))]
        candidate = ActorSpec(
            category=name,
            size=tuple(float(v) for v in categories[name]),
            speed=float(rng.uniform(*speed_range)) if name != "pedestrian" else float(rng.uniform(0.0, 1.5)),
            lane=int(rng.integers(spec.num_lanes)),
            offset=float(rng.uniform(-spread, spread)),
            road=int(rng.integers(roads)),
        )
        box = actor_box(spec, candidate, 0, "probe")
        if any(boxes_collide(box, other, margin=1.0) for other in placed):
            continue
        actors.append(candidate)
        placed.append(box)
    return tuple(actors)


@dataclass(frozen=True)
class CorpusSpec:
    """Recipe for a directory of synthetic scenes."""

    seed: int = 0
    num_scenes: int = 4
    actors_min: int = 3
    actors_max: int = 8
    speed_range: tuple[float, float] = (0.0, 10.0)
    layouts: tuple[str, ...] = ("straight", "intersection")
    scene: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> CorpusSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown corpus spec keys {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("speed_range", "layouts"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def corpus_specs(corpus: CorpusSpec) -> list[SynthSpec]:
    rng = np.random.default_rng(corpus.seed)
    specs = []
    for n in range(corpus.num_scenes):
        layout = corpus.layouts[n % len(corpus.layouts)]
        base = SynthSpec.from_dict({**corpus.scene, "layout": layout, "scene_id": f"scene-{n:04d}",
                                    "seed": int(rng.integers(2 ** 63))})
        count = int(rng.integers(corpus.actors_min, corpus.actors_max + 1))
        heading = float(rng.uniform(-math.pi, math.pi)) if "road_heading" not in corpus.scene else base.road_heading
        base = SynthSpec(**{**asdict(base), "road_heading": heading, "actors": ()})
        actors = random_actors(base, count, rng, corpus.speed_range)
        specs.append(SynthSpec(**{**asdict(base), "actors": actors}))
    return specs


def write_scene_dir(directory: str | Path, scene: Scene, layers: PolygonLayerMap, raster: RasterMap) -> Path:
    directory = Path(directory)
    write_raster(raster, directory / MAP_FILES["grid_file"], directory / MAP_FILES["meta_file"])
    write_layers(layers, directory / MAP_FILES["layers_file"])
    write_manifest(scene, directory / "manifest.json")
    return directory


def write_corpus(corpus: CorpusSpec, out_dir: str | Path) -> list[Path]:
    out = []
    for spec in corpus_specs(corpus):
        scene, layers, _ = generate(spec)
        out.append(write_scene_dir(Path(out_dir) / spec.scene_id, scene, layers, synth_raster(layers, spec.resolution)))
    return out


def grid_city(blocks: int = 10, block_size: float = 30.0, road_width: float = 10.0,
              sidewalk_width: float = 2.0, origin: tuple[float, float] = (0.0, 0.0)) -> PolygonLayerMap:
    """Manhattan grid: every street segment and crossing is its own road polygon."""
    pitch = block_size + road_width
    pairs: list[tuple[str, np.ndarray]] = []
    ox, oy = origin
    for i in range(blocks):
        for j in range(blocks):
            x0 = ox + road_width + i * pitch
            y0 = oy + road_width + j * pitch
            pairs.append(("building", _rect(x0 + sidewalk_width, y0 + sidewalk_width,
                                            x0 + block_size - sidewalk_width, y0 + block_size - sidewalk_width)))
            s = sidewalk_width
            pairs += [
                ("sidewalk", _rect(x0, y0, x0 + block_size, y0 + s)),
                ("sidewalk", _rect(x0, y0 + block_size - s, x0 + block_size, y0 + block_size)),
                ("sidewalk", _rect(x0, y0 + s, x0 + s, y0 + block_size - s)),
                ("sidewalk", _rect(x0 + block_size - s, y0 + s, x0 + block_size, y0 + block_size - s)),
            ]
    for i in range(blocks + 1):
        for j in range(blocks + 1):
            x0, y0 = ox + i * pitch, oy + j * pitch
            pairs.append(("road", _rect(x0, y0, x0 + road_width, y0 + road_width)))
            if j < blocks:
                pairs.append(("road", _rect(x0, y0 + road_width, x0 + road_width, y0 + pitch)))
            if i < blocks:
                pairs.append(("road", _rect(x0 + road_width, y0, x0 + pitch, y0 + road_width)))
    return PolygonLayerMap.from_pairs(pairs)
