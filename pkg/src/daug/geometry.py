"""Rigid-body poses, oriented boxes, point clouds and box containment."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DataIntegrityError, FrameMismatchError, InvalidBoxError

DEFAULT_EPSILON = 1e-6


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    if -math.pi <= angle < math.pi:
        return float(angle)
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    wrapped -= math.pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping child-frame coordinates into the parent frame.

    The rotation is a (w, x, y, z) quaternion. It is normalized on
    construction; only a zero quaternion is rejected.
    """

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise DataIntegrityError("pose contains non-finite values")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise DataIntegrityError("pose quaternion has zero norm")
        object.__setattr__(self, "translation", _readonly(t))
        object.__setattr__(self, "rotation", _readonly(q / norm))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose:
        half = 0.5 * yaw
        return cls(np.asarray(translation, dtype=np.float64),
                   np.array([math.cos(half), 0.0, 0.0, math.sin(half)]))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def yaw(self) -> float:
        """Heading of the rotated x axis projected on the XY plane."""
        r = self.rotation_matrix
        return math.atan2(r[1, 0], r[0, 0])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) child-frame points into the parent frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation_matrix.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation_matrix

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        return f"Pose(translation={self.translation.tolist()}, rotation={self.rotation.tolist()})"


def compose_pose(outer: Pose, inner: Pose) -> Pose:
    """Return the pose equivalent to applying ``inner`` then ``outer``."""
    rotation = quat_multiply(outer.rotation, inner.rotation)
    translation = outer.rotation_matrix @ inner.translation + outer.translation
    return Pose(translation, rotation)


def invert_pose(pose: Pose) -> Pose:
    conj = pose.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return Pose(-(pose.rotation_matrix.T @ pose.translation), conj)


@dataclass(frozen=True)
class OrientedBox:
    """Yaw-only 3D box in the global frame.

    ``size`` is (width, length, height): width spans box-local x, which
    points along ``yaw``; length spans local y. ``velocity`` is (vx, vy) in m/s.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)
    category: str = "car"
    track_id: str = ""
    attributes: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        velocity = tuple(float(v) for v in self.velocity)
        if len(center) != 3 or len(size) != 3 or len(velocity) != 2:
            raise InvalidBoxError("box needs a 3-vector center, 3-vector size and 2-vector velocity")
        values = center + size + velocity + (float(self.yaw),)
        if not all(math.isfinite(v) for v in values):
            raise InvalidBoxError(f"box {self.track_id!r} has non-finite fields")
        if min(size) <= 0.0:
            raise InvalidBoxError(f"box {self.track_id!r} has non-positive size {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "velocity", velocity)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def width(self) -> float:
        return self.size[0]

    @property
    def length(self) -> float:
        return self.size[1]

    @property
    def height(self) -> float:
        return self.size[2]

    @property
    def half_extents(self) -> np.ndarray:
        """Half sizes along box-local (x, y, z)."""
        return 0.5 * np.array(self.size)

    @property
    def bottom_z(self) -> float:
        return self.center[2] - 0.5 * self.size[2]

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    @property
    def pose(self) -> Pose:
        """Box-local to global transform."""
        return Pose.from_yaw(self.yaw, self.center)

    def axes(self) -> np.ndarray:
        """Rows are the box-local x, y, z unit axes in global coordinates."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])

    def corners_xy(self) -> np.ndarray:
        """(4, 2) XY footprint corners, counter-clockwise."""
        hx, hy, _ = self.half_extents
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def replace(self, **changes: Any) -> OrientedBox:
        fields = dict(
            center=self.center, size=self.size, yaw=self.yaw, velocity=self.velocity,
            category=self.category, track_id=self.track_id, attributes=self.attributes,
        )
        fields.update(changes)
        return OrientedBox(**fields)


class CoordFrame(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """LiDAR records: xyz in meters, intensity, integer ring index.

    Arrays are copied and made read-only on construction.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    ring: np.ndarray
    frame: CoordFrame = CoordFrame.LOCAL

    def __post_init__(self) -> None:
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        intensity = np.array(self.intensity, dtype=np.float32).reshape(-1)
        ring = np.array(self.ring).reshape(-1)
        if not (len(xyz) == len(intensity) == len(ring)):
            raise DataIntegrityError(
                f"point cloud field lengths differ: {len(xyz)}, {len(intensity)}, {len(ring)}")
        bad = ~np.isfinite(xyz).all(axis=1) | ~np.isfinite(intensity)
        if ring.dtype.kind == "f":
            bad |= ~np.isfinite(ring) | (ring != np.round(ring))
        if bad.any():
            raise DataIntegrityError(
                f"non-finite or invalid point records at indices {np.flatnonzero(bad)[:20].tolist()}")
        object.__setattr__(self, "xyz", _readonly(xyz))
        object.__setattr__(self, "intensity", _readonly(intensity))
        object.__setattr__(self, "ring", _readonly(ring.astype(np.int32)))
        object.__setattr__(self, "frame", CoordFrame(self.frame))

    @classmethod
    def empty(cls, frame: CoordFrame = CoordFrame.LOCAL) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int32), frame)

    def __len__(self) -> int:
        return len(self.xyz)

    def subset(self, indices: np.ndarray) -> PointCloud:
        return PointCloud(self.xyz[indices], self.intensity[indices], self.ring[indices], self.frame)

    def with_xyz(self, xyz: np.ndarray, frame: CoordFrame) -> PointCloud:
        return PointCloud(xyz, self.intensity, self.ring, frame)

    def concat(self, other: PointCloud) -> PointCloud:
        if other.frame != self.frame:
            raise FrameMismatchError("cannot concatenate clouds in different frames")
        return PointCloud(
            np.concatenate([self.xyz, other.xyz]),
            np.concatenate([self.intensity, other.intensity]),
            np.concatenate([self.ring, other.ring]),
            self.frame,
        )


def transform_cloud(cloud: PointCloud, pose: Pose, direction: str) -> PointCloud:
    """Move a cloud between a local frame and the global frame.

    Args:
        cloud: source cloud; its frame tag must match ``direction``.
        pose: local-to-global transform.
        direction: ``"to_global"`` or ``"to_local"``.
    """
    if direction == "to_global":
        if cloud.frame != CoordFrame.LOCAL:
            raise FrameMismatchError("to_global needs a local-frame cloud")
        return cloud.with_xyz(pose.apply(cloud.xyz), CoordFrame.GLOBAL)
    if direction == "to_local":
        if cloud.frame != CoordFrame.GLOBAL:
            raise FrameMismatchError("to_local needs a global-frame cloud")
        return cloud.with_xyz(pose.apply_inverse(cloud.xyz), CoordFrame.LOCAL)
    raise ValueError(f"unknown direction {direction!r}")


def _face_clearances(points: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Signed perpendicular distances from each point to the six box faces.

    Column k holds how far the point sits on the center's side of face k.
    The center itself has strictly positive clearance to every face, so a
    point shares the center's direction vectors iff all six are >= 0.
    """
    offsets = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.array(box.center)
    along = offsets @ box.axes().T
    half = box.half_extents
    return np.concatenate([half - along, half + along], axis=1)


def point_in_box(p: Sequence[float], box: OrientedBox, epsilon: float = DEFAULT_EPSILON) -> bool:
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if min(box.size) <= 0:
        raise InvalidBoxError("degenerate box")
    return bool(np.all(_face_clearances(np.asarray(p), box) >= -epsilon))


def points_in_box(cloud: PointCloud, box: OrientedBox, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Indices (ascending) of the cloud points inside ``box``."""
    if cloud.frame != CoordFrame.GLOBAL:
        raise FrameMismatchError("box containment requires a global-frame cloud")
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.int64)
    # cheap radius prefilter before the exact face test
    radius = float(np.linalg.norm(box.half_extents)) + epsilon
    near = np.flatnonzero(np.sum((cloud.xyz - np.array(box.center)) ** 2, axis=1) <= radius * radius)
    if len(near) == 0:
        return near.astype(np.int64)
    inside = np.all(_face_clearances(cloud.xyz[near], box) >= -epsilon, axis=1)
    return near[inside].astype(np.int64)
