import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon
from shapely.ops import unary_union

from daug.errors import ConfigError, InvalidBoundsError, OutOfCropError, OutOfMapError
from daug.geometry import OrientedBox, Pose
from daug.maps import (
    DEFAULT_PALETTE,
    ROAD,
    PolygonLayerMap,
    RasterMap,
    bench_road_lookup,
    crop_and_rotate,
    footprint_pixels,
    is_road_valid,
    layer_filter_valid,
    pixelize,
)
from daug.synth import grid_city

from conftest import rot_z

SIDEWALK = DEFAULT_PALETTE["sidewalk"]


def square(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def patterned_raster(n=400, res=0.1):
    r, c = np.mgrid[0:n, 0:n]
    cells = ((r * 7 + c * 13) % 250 + 1).astype(np.uint8)
    return RasterMap(cells, res, (0.0, 0.0), {"road": ROAD})


def road_crop(n_road=200, res=0.1, half=5.0):
    """Crop of an all-road map around a yaw-0 ego sitting on a pixel corner."""
    raster = RasterMap(np.full((n_road, n_road), ROAD, np.uint8), res)
    ego = Pose.from_yaw(0.0, (n_road * res / 2, n_road * res / 2, 0.0))
    return crop_and_rotate(raster, ego, half)


def dense_cover(box, crop, step=0.01):
    """Oracle: crop pixels hit by a dense grid of points over the box rectangle, edges included."""
    nu = int(math.ceil(box.width / step)) + 1
    nv = int(math.ceil(box.length / step)) + 1
    u, v = np.meshgrid(np.linspace(-box.width / 2, box.width / 2, nu), np.linspace(-box.length / 2, box.length / 2, nv))
    local = np.stack([u.ravel(), v.ravel(), np.zeros(u.size)], axis=1)
    xy = (local @ rot_z(box.yaw).T)[:, :2] + np.array(box.center[:2])
    rel = (xy - np.array(crop.ego_xy)) @ rot_z(crop.ego_yaw)[:2, :2]
    res = crop.raster.resolution
    pix = np.floor(rel / res + crop.size / 2).astype(int)
    return {(int(r), int(c)) for c, r in pix}


def test_pixelize_square_block():
    layers = PolygonLayerMap.from_pairs([("road", square(0, 0, 10, 10))])
    raster = pixelize(layers, 0.1, (-5, -5, 15, 15))
    assert int(np.sum(raster.cells == ROAD)) == 10_000
    assert set(np.unique(raster.cells)) == {0, ROAD}


def test_pixelize_empty_is_out_of_map():
    raster = pixelize(PolygonLayerMap(()), 0.5, (0, 0, 10, 10))
    assert raster.cells.shape == (20, 20)
    assert not raster.cells.any()


def test_pixelize_last_writer_wins():
    layers = PolygonLayerMap.from_pairs([("road", square(0, 0, 10, 10)), ("sidewalk", square(5, 5, 15, 15))])
    raster = pixelize(layers, 0.1, (0, 0, 20, 20))
    # overlap is 5 m x 5 m; each region's pixel count is its area over res^2
    assert int(np.sum(raster.cells == SIDEWALK)) == 10_000
    assert int(np.sum(raster.cells == ROAD)) == 7_500
    assert raster.code_at([[7.0, 7.0]])[0] == SIDEWALK
    assert raster.code_at([[2.0, 2.0]])[0] == ROAD


def test_pixelize_rejects_bad_bounds():
    layers = PolygonLayerMap.from_pairs([("road", square(0, 0, 1, 1))])
    with pytest.raises(InvalidBoundsError):
        pixelize(layers, 0.1, (0, 0, 0, 5))
    with pytest.raises(InvalidBoundsError):
        pixelize(layers, 0.1, (5, 0, 0, 5))


def test_rows_grow_with_y():
    layers = PolygonLayerMap.from_pairs([("road", square(0, 8, 10, 10))])
    raster = pixelize(layers, 1.0, (0, 0, 10, 10))
    assert raster.cells[9].tolist() == [ROAD] * 10
    assert not raster.cells[0].any()


def test_crop_yaw0_is_subgrid_copy():
    raster = patterned_raster()
    crop = crop_and_rotate(raster, Pose.from_yaw(0.0, (20.0, 20.0, 0.0)), 5.0)
    assert crop.size == 100
    assert np.array_equal(crop.raster.cells, raster.cells[150:250, 150:250])


def test_crop_yaw0_inside_pixel_matches_nearest_neighbor():
    raster = patterned_raster()
    crop = crop_and_rotate(raster, Pose.from_yaw(0.0, (20.03, 19.96, 0.0)), 5.0)
    # output centers sit at ego + (i + 0.5 - 50) * res; floor picks the source pixel
    cols = np.floor((20.03 + (np.arange(100) + 0.5 - 50) * 0.1) / 0.1 + 1e-6).astype(int)
    rows = np.floor((19.96 + (np.arange(100) + 0.5 - 50) * 0.1) / 0.1 + 1e-6).astype(int)
    assert np.array_equal(crop.raster.cells, raster.cells[np.ix_(rows, cols)])


def test_crop_yaw90_matches_rot90():
    raster = patterned_raster()
    crop = crop_and_rotate(raster, Pose.from_yaw(math.pi / 2, (20.0, 20.0, 0.0)), 5.0)
    sub = raster.cells[150:250, 150:250]
    assert np.array_equal(crop.raster.cells, np.rot90(sub, k=1))


def test_crop_size_and_out_of_map_padding():
    raster = RasterMap(np.full((100, 100), ROAD, np.uint8), 0.1)
    crop = crop_and_rotate(raster, Pose.from_yaw(0.3, (5.0, 5.0, 0.0)), 100.0)
    assert crop.raster.cells.shape == (2000, 2000)
    assert crop.raster.cells[0, 0] == 0
    assert crop.raster.cells[1000, 1000] == ROAD


def test_crop_rejects_ego_off_map():
    raster = RasterMap(np.full((10, 10), ROAD, np.uint8), 0.1)
    with pytest.raises(OutOfMapError):
        crop_and_rotate(raster, Pose.from_yaw(0.0, (5.0, 0.5, 0.0)), 1.0)


def test_crop_to_pixel_ego_at_center():
    crop = road_crop()
    np.testing.assert_allclose(crop.to_pixel(np.array([crop.ego_xy]))[0], crop.ego_pixel)


def test_footprint_aligned_2x2_box():
    crop = road_crop()
    box = OrientedBox((10.05, 10.05, 0.0), (2.0, 2.0, 1.0), 0.0)
    pix = footprint_pixels(box, crop)
    assert 400 <= len(pix) <= 484
    assert {tuple(p) for p in pix} >= dense_cover(box, crop)


def test_footprint_tiny_box_hits_one_pixel():
    crop = road_crop()
    box = OrientedBox((10.05, 10.05, 0.0), (0.01, 0.01, 0.01), 0.0)
    assert footprint_pixels(box, crop).tolist() == [[50, 50]]


def test_footprint_rotated_superset_of_dense_cover():
    crop = road_crop()
    box = OrientedBox((10.0, 10.0, 0.0), (1.0, 1.0, 1.0), math.pi / 4)
    pix = {tuple(p) for p in footprint_pixels(box, crop)}
    assert pix >= dense_cover(box, crop)
    # conservative but not wildly so: bounding diamond of 1.41 m fits in ~16 x 16 pixels
    assert len(pix) <= 16 * 16


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-math.pi, math.pi), st.floats(0.1, 3), st.floats(0.1, 5),
       st.floats(-math.pi, math.pi))
def test_footprint_covers_dense_samples(dx, dy, yaw, w, l, ego_yaw):
    raster = RasterMap(np.full((200, 200), ROAD, np.uint8), 0.1)
    crop = crop_and_rotate(raster, Pose.from_yaw(ego_yaw, (10.0, 10.0, 0.0)), 5.0)
    box = OrientedBox((10 + dx, 10 + dy, 0.0), (w, l, 1.0), yaw)
    pix = {tuple(p) for p in footprint_pixels(box, crop)}
    assert pix >= dense_cover(box, crop, step=0.02)


def test_footprint_outside_crop_raises():
    crop = road_crop()
    with pytest.raises(OutOfCropError):
        footprint_pixels(OrientedBox((100.0, 100.0, 0.0), (1.0, 1.0, 1.0), 0.0), crop)


def test_road_validity_basic_cases():
    layers = PolygonLayerMap.from_pairs([("sidewalk", square(0, 0, 20, 20)), ("road", square(0, 0, 10, 20))])
    raster = pixelize(layers, 0.1, (0, 0, 20, 20))
    crop = crop_and_rotate(raster, Pose.from_yaw(0.0, (10.0, 10.0, 0.0)), 8.0)
    assert is_road_valid(OrientedBox((5.0, 10.0, 0.0), (2.0, 4.0, 1.5), 0.3), crop)
    assert not is_road_valid(OrientedBox((10.0, 10.0, 0.0), (2.0, 4.0, 1.5), 0.0), crop)
    # leaves the crop window even though the map underneath is road
    assert not is_road_valid(OrientedBox((2.5, 10.0, 0.0), (2.0, 4.0, 1.5), 0.0), crop)
    assert not is_road_valid(OrientedBox((50.0, 10.0, 0.0), (2.0, 4.0, 1.5), 0.0), crop)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 19), st.floats(1, 19), st.floats(-math.pi, math.pi), st.floats(0.2, 4), st.floats(0.2, 6),
       st.floats(0.1, 1.0))
def test_road_validity_monotone_under_shrinking(x, y, yaw, w, l, scale):
    layers = PolygonLayerMap.from_pairs([("sidewalk", square(0, 0, 20, 20)), ("road", square(3, 2, 14, 17))])
    raster = pixelize(layers, 0.1, (0, 0, 20, 20))
    crop = crop_and_rotate(raster, Pose.from_yaw(0.0, (10.0, 10.0, 0.0)), 10.0)
    big = OrientedBox((x, y, 0.0), (w, l, 1.0), yaw)
    small = big.replace(size=(w * scale, l * scale, 1.0))
    if is_road_valid(big, crop):
        assert is_road_valid(small, crop)


def test_layer_filter_cases():
    layers = PolygonLayerMap.from_pairs([("sidewalk", square(10, 0, 20, 20)), ("road", square(0, 0, 10, 20))])
    assert layer_filter_valid(OrientedBox((5.0, 10.0, 0.0), (2.0, 4.0, 1.0), 0.5), layers)
    assert not layer_filter_valid(OrientedBox((10.0, 10.0, 0.0), (2.0, 4.0, 1.0), 0.0), layers)
    assert not layer_filter_valid(OrientedBox((-5.0, 10.0, 0.0), (2.0, 4.0, 1.0), 0.0), layers)
    assert not layer_filter_valid(OrientedBox((5.0, 10.0, 0.0), (2.0, 4.0, 1.0), 0.0), PolygonLayerMap(()))


def test_pixel_and_polygon_routes_agree_away_from_edges():
    layers = grid_city(blocks=4)
    raster = pixelize(layers, 0.1, (0, 0, 170, 170))
    edges = unary_union([shape.boundary for shape in layers.shapes])
    rng = np.random.default_rng(3)
    crop = crop_and_rotate(raster, Pose.from_yaw(0.0, (85.0, 85.0, 0.0)), 80.0)
    compared = disagree = 0
    while compared < 1000:
        box = OrientedBox((*rng.uniform(10, 160, 2), 0.0), (rng.uniform(1.5, 2.2), rng.uniform(3.5, 5), 1.5),
                          rng.uniform(-math.pi, math.pi))
        if Polygon(box.corners_xy()).distance(edges) <= 0.1:
            continue
        compared += 1
        disagree += is_road_valid(box, crop) != layer_filter_valid(box, layers)
    assert disagree == 0


def test_bench_rejects_too_few_queries():
    layers = grid_city(blocks=2)
    raster = pixelize(layers, 0.1, (0, 0, 90, 90))
    with pytest.raises(ConfigError):
        bench_road_lookup(raster, layers, 0, half_extent=30)


def test_bench_returns_positive_timings():
    layers = grid_city(blocks=2)
    raster = pixelize(layers, 0.1, (0, 0, 90, 90))
    pixel, polygon = bench_road_lookup(raster, layers, 100, half_extent=30)
    assert pixel > 0 and polygon > 0


def test_raster_rejects_bad_palette():
    with pytest.raises(ValueError):
        RasterMap(np.zeros((2, 2)), 0.1, palette={"road": 7})
