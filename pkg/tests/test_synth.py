#!/usr/bin/env python3
import sys
import os
import math

import numpy as np
import pytest

from shapely.geometry import Point

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))
from ncl_layout.errors import InputError
from ncl_layout.camera import CameraModel
from ncl_layout.layout import BoundaryMap
from ncl_layout.synth import LayoutSpec, NoiseSpec, generate_layout, \
    layout_from_polygon, rectangle_room, project_layout, add_noise, \
    corner_labels, visible_corner_columns, CameraOutsideRoom, CORNER_BASE

# =============================================================================


def step_room():
    corners = np.array([(0, 0), (6, 0), (6, 5), (3, 5), (3, 3.5), (0, 3.5)], dtype=float)
    return layout_from_polygon(corners - np.array([1.5, 1.5]), 1.4, -1.3)


def test_generate_layout():
    spec = LayoutSpec(seed=1)
    layout = generate_layout(spec)

    assert layout.world == "manhattan"
    assert 4 <= len(layout) <= 14
    assert layout.validation_errors() == []

    # Camera clearance
    distance = layout.polygon().exterior.distance(Point(0.0, 0.0))
    assert distance > spec.clearance
    assert layout.polygon().contains(Point(0.0, 0.0))

    assert 0.8 <= layout.h_c <= 2.2
    assert -2.2 <= layout.h_f <= -0.8

    # Same seed, same room
    other = generate_layout(LayoutSpec(seed=1))
    assert np.array_equal(layout.corners, other.corners)
    assert layout.h_c == other.h_c


def test_generate_many_layouts():
    for seed in range(20):
        layout = generate_layout(LayoutSpec(seed=seed, atlanta_clip_probability=0.5))
        assert layout.validation_errors() == [], seed
        assert 4 <= len(layout) <= 14, seed


def test_generate_clipped_room():
    spec = LayoutSpec(seed=1, walls=(4, 8), atlanta_clip_probability=1.0,
                      extent=(4.0, 4.0), min_step=2.5)
    layout = generate_layout(spec)

    assert len(layout) == 8
    assert layout.world == "atlanta"
    assert layout.validation_errors() == []


def test_invalid_specs():
    with pytest.raises(InputError):
        LayoutSpec(walls=(3, 6))
    with pytest.raises(InputError):
        LayoutSpec(atlanta_clip_probability=1.5)
    with pytest.raises(InputError):
        NoiseSpec(gaussian_sigma=-1.0)
    with pytest.raises(InputError):
        NoiseSpec(spike_rate=1.0)


def test_layout_from_polygon():
    square = np.array([(-2, -2), (2, -2), (2, 2), (-2, 2)], dtype=float)

    # Clockwise input gets reordered
    layout = layout_from_polygon(square[::-1], 1.5, -1.5)
    assert layout.validation_errors() == []
    assert layout.world == "manhattan"

    with pytest.raises(InputError):
        layout_from_polygon(square[:2], 1.5, -1.5)


def test_project_square_room():
    cam = CameraModel.default()
    layout = rectangle_room(4.0, 4.0)

    bm = project_layout(layout, cam)
    assert bm.cols == cam.cols
    bm.check_camera(cam)

    columns = visible_corner_columns(layout, cam)
    assert len(columns) == 4
    assert np.count_nonzero(bm.corner_score == 1.0) == 4
    assert list(np.flatnonzero(bm.corner_score == 1.0)) == columns

    # Score decays with the column distance to the nearest corner
    assert bm.corner_score[columns[0] + 17] == pytest.approx(CORNER_BASE ** 17)
    assert bm.corner_score[columns[0] + 17] == pytest.approx(0.4996, abs=1e-4)

    # Column 511 faces the wall x = 2
    az = cam.col_to_azimuth(511.5)
    depth = 2.0 / math.cos(az) - cam.rc
    assert bm.ceiling_row[511] == pytest.approx(cam.elevation_to_row(math.atan2(1.5, depth)))
    assert bm.floor_row[511] == pytest.approx(cam.elevation_to_row(math.atan2(-1.5, depth)))
    assert bm.ceiling_row[511] == pytest.approx(416.17, abs=0.05)

    # Symmetric room
    assert bm.ceiling_row[511] + bm.floor_row[511] == pytest.approx(cam.rows)


def test_project_occluded_wall():
    cam = CameraModel.default()
    layout = step_room()

    index, _ = layout.cast_rays(cam.column_azimuths())
    seen = set(index.tolist())
    assert len(seen) == len(layout) - 1

    bm = project_layout(layout, cam)
    assert np.all(bm.ceiling_row > bm.floor_row)


def test_camera_outside_room():
    cam = CameraModel.default()

    # Wall closer than the camera radius
    with pytest.raises(CameraOutsideRoom):
        project_layout(rectangle_room(4.0, 4.0, camera=(0.5, 2.0)), cam)

    with pytest.raises(CameraOutsideRoom):
        project_layout(rectangle_room(4.0, 4.0, camera=(5.0, 2.0)), cam)


def test_add_noise():
    n = 100000
    bm = BoundaryMap(np.full(n, 300.0), np.full(n, 100.0))

    # No noise
    same = add_noise(bm, NoiseSpec())
    assert np.array_equal(same.ceiling_row, bm.ceiling_row)
    assert np.array_equal(same.floor_row, bm.floor_row)

    noisy = add_noise(bm, NoiseSpec(gaussian_sigma=0.5, seed=3))
    assert 0.49 <= np.std(noisy.ceiling_row - 300.0) <= 0.51
    assert 0.49 <= np.std(noisy.floor_row - 100.0) <= 0.51

    spiky = add_noise(bm, NoiseSpec(spike_rate=0.2, spike_magnitude=20.0, seed=3))
    moved = np.abs(spiky.ceiling_row - 300.0) >= 10.0
    assert np.mean(moved) == pytest.approx(0.2, abs=0.01)

    # Seeded
    again = add_noise(bm, NoiseSpec(gaussian_sigma=0.5, seed=3))
    assert np.array_equal(noisy.ceiling_row, again.ceiling_row)
    other = add_noise(bm, NoiseSpec(gaussian_sigma=0.5, seed=4))
    assert not np.array_equal(noisy.ceiling_row, other.ceiling_row)


def test_add_noise_keeps_order():
    cam = CameraModel.default()
    bm = BoundaryMap(np.full(cam.cols, 257.0), np.full(cam.cols, 255.0))

    noisy = add_noise(bm, NoiseSpec(gaussian_sigma=5.0, seed=1), cam)
    assert np.all(noisy.ceiling_row >= noisy.floor_row + 1.0 - 1e-9)
    noisy.check_camera(cam)


def test_corner_labels():
    scores = corner_labels(10, [0])
    assert scores[0] == 1.0
    assert scores[9] == pytest.approx(CORNER_BASE)
    assert scores[5] == pytest.approx(CORNER_BASE ** 5)

    scores = corner_labels(10, [0], cyclic=False)
    assert scores[9] == pytest.approx(CORNER_BASE ** 9)

    assert np.all(corner_labels(10, []) == 0.0)
