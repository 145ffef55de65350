"""Pixel-level road identification on rasterized semantic maps.

Pixel ``(row, col)`` of a :class:`RasterMap` covers the square
``origin + res * [col, col + 1) x [row, row + 1)``, so rows grow along +y.
Code 128 marks road and code 0 marks "no map data".
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidBoundsError, OutOfCropError, OutOfMapError
from .geometry import OrientedBox, Pose

ROAD = 128
OUT_OF_MAP = 0

DEFAULT_PALETTE: dict[str, int] = {
    "road": ROAD,
    "sidewalk": 64,
    "building": 32,
    "vegetation": 96,
    "parking": 160,
}

DEFAULT_RESOLUTION = 0.1
DEFAULT_HALF_EXTENT = 100.0

# guards floor() against representation noise when a sample lands on a pixel edge
_EDGE_NUDGE = 1e-6
_TOUCH = 1e-9  # pixel units


@dataclass(frozen=True, eq=False)
class RasterMap:
    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    palette: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_PALETTE))

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2D grid")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        palette = dict(self.palette)
        if palette.get("road") != ROAD:
            raise ValueError("palette must map 'road' to 128")
        if OUT_OF_MAP in palette.values():
            raise ValueError("code 0 is reserved for out-of-map pixels")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "palette", palette)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, y0, x0 + self.width * self.resolution, y0 + self.height * self.resolution)

    def code_at(self, xy: np.ndarray) -> np.ndarray:
        """Codes under (N, 2) global points; 0 outside the grid."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        col = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        row = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.zeros(len(xy), dtype=np.uint8)
        out[inside] = self.cells[row[inside], col[inside]]
        return out


@dataclass(frozen=True, eq=False)
class CroppedMap:
    """Ego-centred square crop whose axes follow the ego heading.

    ``raster.origin`` is expressed in the ego frame, so the ego sits at
    the crop's geometric center.
    """

    raster: RasterMap
    ego_xy: tuple[float, float]
    ego_yaw: float

    @property
    def rotation(self) -> float:
        return -self.ego_yaw

    @property
    def size(self) -> int:
        return self.raster.width

    @property
    def ego_pixel(self) -> tuple[float, float]:
        """Continuous (col, row) of the ego position."""
        return (self.size / 2.0, self.size / 2.0)

    def to_pixel(self, xy: np.ndarray) -> np.ndarray:
        """Global (N, 2) points to continuous (col, row) crop coordinates."""
        c, s = math.cos(self.ego_yaw), math.sin(self.ego_yaw)
        d = np.atleast_2d(np.asarray(xy, dtype=np.float64)) - np.array(self.ego_xy)
        local = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)
        return local / self.raster.resolution + self.size / 2.0


@dataclass(frozen=True)
class Layer:
    category: str
    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) < 3 or not np.all(np.isfinite(v)):
            raise ValueError(f"{self.category} polygon needs >= 3 finite vertices")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)


@dataclass(frozen=True, eq=False)
class PolygonLayerMap:
    """Vector map: polygons ordered background to foreground."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, Sequence[Sequence[float]]]]) -> PolygonLayerMap:
        return cls(tuple(Layer(cat, verts) for cat, verts in pairs))

    def __len__(self) -> int:
        return len(self.layers)

    @cached_property
    def shapes(self):
        from shapely.geometry import Polygon

        return [Polygon(layer.vertices) for layer in self.layers]


def polygon_contains(xy: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test for (N, 2) points."""
    x, y = xy[:, 0], xy[:, 1]
    inside = np.zeros(len(xy), dtype=bool)
    vx, vy = vertices[:, 0], vertices[:, 1]
    j = len(vertices) - 1
    for i in range(len(vertices)):
        xi, yi, xj, yj = vx[i], vy[i], vx[j], vy[j]
        crosses = (yi > y) != (yj > y)
        if crosses.any():
            x_at = xi + (y[crosses] - yi) * (xj - xi) / (yj - yi)
            hit = np.zeros_like(crosses)
            hit[crosses] = x[crosses] < x_at
            inside ^= hit
        j = i
    return inside


def pixelize(
    layers: PolygonLayerMap,
    resolution: float = DEFAULT_RESOLUTION,
    bounds: tuple[float, float, float, float] | None = None,
    palette: Mapping[str, int] | None = None,
) -> RasterMap:
    """Rasterize polygon layers; each pixel takes the code of the last layer covering its center.

    Args:
        layers: polygons in draw order.
        resolution: meters per pixel.
        bounds: (xmin, ymin, xmax, ymax) in global meters.
        palette: category name to code; defaults to :data:`DEFAULT_PALETTE`.
    """
    if not resolution > 0:
        raise ConfigError("resolution must be positive")
    if bounds is None:
        raise InvalidBoundsError("bounds are required")
    xmin, ymin, xmax, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin) or not all(map(math.isfinite, (xmin, ymin, xmax, ymax))):
        raise InvalidBoundsError(f"degenerate bounds {bounds}")
    palette = dict(DEFAULT_PALETTE if palette is None else palette)
    width = int(math.ceil((xmax - xmin) / resolution - 1e-9))
    height = int(math.ceil((ymax - ymin) / resolution - 1e-9))
    cells = np.zeros((height, width), dtype=np.uint8)
    for layer in layers.layers:
        if layer.category not in palette:
            raise ConfigError(f"category {layer.category!r} missing from palette")
        v = layer.vertices
        c0 = max(int(math.floor((v[:, 0].min() - xmin) / resolution)), 0)
        c1 = min(int(math.ceil((v[:, 0].max() - xmin) / resolution)), width)
        r0 = max(int(math.floor((v[:, 1].min() - ymin) / resolution)), 0)
        r1 = min(int(math.ceil((v[:, 1].max() - ymin) / resolution)), height)
        if c0 >= c1 or r0 >= r1:
            continue
        xs = xmin + (np.arange(c0, c1) + 0.5) * resolution
        ys = ymin + (np.arange(r0, r1) + 0.5) * resolution
        gx, gy = np.meshgrid(xs, ys)
        mask = polygon_contains(np.stack([gx.ravel(), gy.ravel()], axis=1), v)
        block = cells[r0:r1, c0:c1]
        block[mask.reshape(block.shape)] = palette[layer.category]
    return RasterMap(cells, resolution, (xmin, ymin), palette)


def crop_and_rotate(raster: RasterMap, ego: Pose, half_extent: float = DEFAULT_HALF_EXTENT) -> CroppedMap:
    """Cut an ego-centred square and resample it into the ego heading frame.

    Nearest-neighbour sampling; samples falling off the source map get code 0.
    """
    if not half_extent > 0:
        raise ConfigError("half_extent must be positive")
    ex, ey = float(ego.translation[0]), float(ego.translation[1])
    xmin, ymin, xmax, ymax = raster.bounds
    if not (xmin <= ex < xmax and ymin <= ey < ymax):
        raise OutOfMapError(f"ego ({ex:.2f}, {ey:.2f}) lies outside map bounds {raster.bounds}")
    res = raster.resolution
    n = int(round(2.0 * half_extent / res))
    yaw = ego.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    # pixel-unit offsets of output pixel centers from the ego
    offsets = np.arange(n) + 0.5 - n / 2.0
    e_col = (ex - raster.origin[0]) / res
    e_row = (ey - raster.origin[1]) / res
    src_col = np.floor(e_col + c * offsets[None, :] - s * offsets[:, None] + _EDGE_NUDGE).astype(np.int64)
    src_row = np.floor(e_row + s * offsets[None, :] + c * offsets[:, None] + _EDGE_NUDGE).astype(np.int64)
    valid = (src_col >= 0) & (src_col < raster.width) & (src_row >= 0) & (src_row < raster.height)
    out = np.zeros((n, n), dtype=np.uint8)
    out[valid] = raster.cells[src_row[valid], src_col[valid]]
    cropped = RasterMap(out, res, (-n / 2.0 * res, -n / 2.0 * res), raster.palette)
    return CroppedMap(cropped, (ex, ey), yaw)


def _footprint(box: OrientedBox, crop: CroppedMap) -> tuple[np.ndarray, np.ndarray, bool]:
    """Crop pixels whose squares touch the box's XY rectangle.

    Returns in-crop rows and cols plus a flag telling whether part of the
    cover falls outside the crop.
    """
    res = crop.raster.resolution
    n = crop.size
    center = crop.to_pixel(np.array(box.center[:2]))[0]
    rel = box.yaw - crop.ego_yaw
    ux = np.array([math.cos(rel), math.sin(rel)])
    uy = np.array([-ux[1], ux[0]])
    hx, hy = box.half_extents[:2] / res
    ext_x = abs(ux[0]) * hx + abs(uy[0]) * hy
    ext_y = abs(ux[1]) * hx + abs(uy[1]) * hy
    # pad by the touch tolerance so pixels meeting the box exactly at an edge are considered
    c0 = int(math.floor(center[0] - ext_x - _TOUCH))
    c1 = int(math.floor(center[0] + ext_x + _TOUCH))
    r0 = int(math.floor(center[1] - ext_y - _TOUCH))
    r1 = int(math.floor(center[1] + ext_y + _TOUCH))
    if c1 < 0 or r1 < 0 or c0 >= n or r0 >= n:
        raise OutOfCropError("box lies entirely outside the crop")
    leaves = c0 < 0 or r0 < 0 or c1 >= n or r1 >= n
    cols = np.arange(max(c0, 0), min(c1, n - 1) + 1)
    rows = np.arange(max(r0, 0), min(r1, n - 1) + 1)
    dx = (cols + 0.5 - center[0])[None, :]
    dy = (rows + 0.5 - center[1])[:, None]
    # separating-axis test of each unit pixel square against the rectangle axes
    reach_x = hx + 0.5 * (abs(ux[0]) + abs(ux[1])) + _TOUCH
    reach_y = hy + 0.5 * (abs(uy[0]) + abs(uy[1])) + _TOUCH
    hit = (np.abs(dx * ux[0] + dy * ux[1]) <= reach_x) & (np.abs(dx * uy[0] + dy * uy[1]) <= reach_y)
    rr, cc = np.nonzero(hit)
    return rows[rr], cols[cc], leaves


def footprint_pixels(box: OrientedBox, crop: CroppedMap) -> np.ndarray:
    """(K, 2) array of (row, col) crop pixels conservatively covering the box."""
    rows, cols, _ = _footprint(box, crop)
    if len(rows) == 0:
        raise OutOfCropError("box lies entirely outside the crop")
    return np.stack([rows, cols], axis=1)


def is_road_valid(box: OrientedBox, crop: CroppedMap) -> bool:
    """True iff every footprint pixel is road and the footprint stays inside the crop."""
    try:
        rows, cols, leaves = _footprint(box, crop)
    except OutOfCropError:
        return False
    if leaves or len(rows) == 0:
        return False
    return bool(np.all(crop.raster.cells[rows, cols] == ROAD))


def layer_filter_valid(box: OrientedBox, layers: PolygonLayerMap, *, area_tol: float = 1e-9) -> bool:
    """Vector-map baseline: exact clipping of the box against every layer polygon."""
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    rect = Polygon(box.corners_xy())
    road_parts = []
    for layer, shape in zip(layers.layers, layers.shapes):
        if not shape.intersects(rect):
            continue
        clipped = shape.intersection(rect)
        if layer.category == "road":
            road_parts.append(clipped)
        elif clipped.area > area_tol:
            return False
    if not road_parts:
        return False
    covered = unary_union(road_parts).area
    return covered >= rect.area * (1.0 - area_tol) - area_tol


def random_query_boxes(crop: CroppedMap, n: int, rng: np.random.Generator, margin: float = 10.0) -> list[OrientedBox]:
    """Car-sized boxes scattered over the interior of a crop."""
    half = crop.size * crop.raster.resolution / 2.0 - margin
    c, s = math.cos(crop.ego_yaw), math.sin(crop.ego_yaw)
    boxes = []
    for k in range(n):
        lx, ly = rng.uniform(-half, half, size=2)
        gx = crop.ego_xy[0] + c * lx - s * ly
        gy = crop.ego_xy[1] + s * lx + c * ly
        size = (rng.uniform(1.6, 2.2), rng.uniform(3.8, 5.2), 1.7)
        boxes.append(OrientedBox((gx, gy, 0.0), size, rng.uniform(-math.pi, math.pi), track_id=f"q{k}"))
    return boxes


def bench_road_lookup(
    raster: RasterMap,
    layers: PolygonLayerMap,
    n_queries: int,
    *,
    seed: int = 0,
    ego: Pose | None = None,
    half_extent: float = DEFAULT_HALF_EXTENT,
) -> tuple[float, float]:
    """Average wall-clock seconds per validity query for the pixel and polygon routes."""
    if n_queries < 100:
        raise ConfigError("bench_road_lookup needs n_queries >= 100")
    if ego is None:
        xmin, ymin, xmax, ymax = raster.bounds
        ego = Pose.from_yaw(0.0, ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0, 0.0))
    crop = crop_and_rotate(raster, ego, half_extent)
    boxes = random_query_boxes(crop, n_queries, np.random.default_rng(seed))
    layers.shapes  # build geometry outside the timed region

    start = time.perf_counter()
    for box in boxes:
        is_road_valid(box, crop)
    pixel = (time.perf_counter() - start) / n_queries

    start = time.perf_counter()
    for box in boxes:
        layer_filter_valid(box, layers)
    polygon = (time.perf_counter() - start) / n_queries
    return pixel, polygon
