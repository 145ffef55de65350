import math

import numpy as np
import pytest

from daug.geometry import CoordFrame, OrientedBox, PointCloud, Pose
from daug.scene_io import Frame, Scene


def rot_z(theta):
    """3x3 rotation about +Z, written out by hand for oracle use."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_frame_inside(points, box, eps=0.0):
    """Oracle: rotate into the box frame and compare against half extents."""
    local = (np.atleast_2d(points) - np.array(box.center)) @ rot_z(box.yaw)
    half = np.array(box.size) / 2
    return np.all(np.abs(local) <= half + eps, axis=1)


def box_face_distance(points, box):
    """Oracle: smallest distance from each point to any of the box's face planes."""
    local = (np.atleast_2d(points) - np.array(box.center)) @ rot_z(box.yaw)
    half = np.array(box.size) / 2
    return np.min(np.abs(np.abs(local) - half), axis=1)


def make_frame(boxes=(), xyz=None, t=0, ego=None, calib=None):
    xyz = np.zeros((0, 3)) if xyz is None else np.asarray(xyz, dtype=float)
    cloud = PointCloud(xyz, np.arange(len(xyz)) % 97, np.arange(len(xyz)) % 32, CoordFrame.LOCAL)
    return Frame(t, cloud, ego or Pose.identity(), calib or Pose.identity(), tuple(boxes))


def make_scene(frame_boxes, dt_us=50_000, scene_id="s"):
    """Point-free scene from a list of per-frame box lists."""
    frames = [make_frame(boxes, t=k * dt_us) for k, boxes in enumerate(frame_boxes)]
    return Scene(scene_id, tuple(frames))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def car():
    return OrientedBox((10.0, -4.0, 0.8), (4.5, 1.9, 1.6), 0.7, (3.0, 2.0), "car", "c1")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
