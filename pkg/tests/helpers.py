"""Shared oracles and builders for the insertion and acceptance tests."""

import math
from fractions import Fraction

import numpy as np
from shapely.geometry import Polygon

from daug.extraction import ExtractedObject
from daug.geometry import OrientedBox, PointCloud
from daug.insertion import boxes_collide, move_box

from conftest import box_frame_inside, make_scene


def dummy_object(size=(4.5, 1.9, 1.6), speed=5.0, n=50, seed=0):
    rng = np.random.default_rng(seed)
    w, l, h = size
    xyz = rng.uniform(-0.5, 0.5, (n, 3)) * np.array([w, l, h]) * 0.98
    cloud = PointCloud(xyz, rng.uniform(0, 100, n), rng.integers(0, 32, n))
    template = OrientedBox((0.0, 0.0, 0.0), size, 0.0, (0.0, 0.0), "car", "src")
    return ExtractedObject(cloud, template, ("src-scene", 0, "src"), speed)


def random_rect(rng, spread=6.0):
    return OrientedBox((*rng.uniform(-spread, spread, 2), 0.0), (*rng.uniform(0.3, 5.0, 2), 1.0),
                       rng.uniform(-math.pi, math.pi))


def shapely_rect(box, grow=0.0):
    poly = Polygon(box.corners_xy())
    return poly.buffer(grow, join_style=2) if grow else poly


def perimeter_samples(box, step=0.01):
    """Points along the XY rectangle boundary, corners included."""
    hx, hy = box.width / 2, box.length / 2
    nx = int(math.ceil(2 * hx / step)) + 1
    ny = int(math.ceil(2 * hy / step)) + 1
    xs, ys = np.linspace(-hx, hx, nx), np.linspace(-hy, hy, ny)
    local = np.concatenate([
        np.stack([xs, np.full(nx, -hy)], 1), np.stack([xs, np.full(nx, hy)], 1),
        np.stack([np.full(ny, -hx), ys], 1), np.stack([np.full(ny, hx), ys], 1),
    ])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xy = local @ np.array([[c, s], [-s, c]]) + np.array(box.center[:2])
    return np.column_stack([xy, np.full(len(xy), box.center[2])])


def sampled_overlap(a, b):
    """Oracle: does any boundary sample of one rectangle fall inside the other."""
    return bool(box_frame_inside(perimeter_samples(a), b).any() or box_frame_inside(perimeter_samples(b), a).any())


def ambiguous(a, b, band=0.02):
    """True when the gap or the overlap depth of the pair is below ``band``."""
    return shapely_rect(a, band).intersects(shapely_rect(b)) != shapely_rect(a, -band).intersects(shapely_rect(b))


def exact_steps(centers):
    return [(Fraction(b[0]) - Fraction(a[0]), Fraction(b[1]) - Fraction(a[1])) for a, b in zip(centers, centers[1:])]


def tree_bytes(root):
    """Relative path to file contents for every file under ``root``."""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def saturated_spec(points_per_actor=30):
    """Two lanes packed bumper to bumper with parked trucks: no free road anywhere near the ego."""
    actors = [{"category": "truck", "size": [8.0, 2.5, 3.0], "speed": 0.0, "lane": lane, "offset": x}
              for lane in (0, 1) for x in np.arange(-110.0, 110.5, 8.5).tolist()]
    return {"scene_id": "jam", "num_frames": 4, "num_lanes": 2, "points_per_actor": points_per_actor,
            "actors": actors}


def brute_force(scene, pl, plan):
    """Oracle: loop over every horizon frame and box, moving the inserted box by k * dt * V."""
    for i in plan.horizon(len(scene.frames), pl.insertion_frame):
        k = i - pl.insertion_frame
        moved = move_box(pl.box_at(pl.insertion_frame), (k * pl.frame_dt * pl.velocity[0],
                                                          k * pl.frame_dt * pl.velocity[1]))
        for other in scene.frames[i].boxes:
            if boxes_collide(moved, other, plan.collision_margin):
                return True
    return False


def random_scene(rng, num_frames, num_actors):
    frames = []
    starts = [(rng.uniform(-30, 30, 2), rng.uniform(-8, 8, 2), rng.uniform(-math.pi, math.pi),
               rng.uniform(0.5, 3, 2)) for _ in range(num_actors)]
    for k in range(num_frames):
        frames.append([OrientedBox((*(p + 0.1 * k * v), 0.0), (*s, 1.5), yaw, v, "car", f"t{j}")
                       for j, (p, v, yaw, s) in enumerate(starts)])
    return make_scene(frames, dt_us=100_000)
