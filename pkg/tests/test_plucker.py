#!/usr/bin/env python3
import sys
import os

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))
from ncl_layout.camera import CameraModel, project_points, backproject_pixels
from ncl_layout.plucker import PluckerLine, PluckerRay, side, \
    line_from_four_rays, closest_point_on_line_to_ray, line_to_ray_distance, \
    intersect_coplanar_lines, DegenerateRays, NoRealSolution, ParallelLines, NotCoplanar

# =============================================================================


def random_line(rng):
    return PluckerLine.from_point_direction(rng.normal(size=3), rng.normal(size=3))


def rays_through(cam, points):
    i, j = project_points(cam, points)
    xi, xibar = backproject_pixels(cam, i, j)
    return [PluckerRay(a, b) for a, b in zip(xi, xibar)]


def same_line(a, b, tol):
    a = a.normalized()
    b = b.normalized()
    sign = 1.0 if np.dot(a.l, b.l) > 0.0 else -1.0
    return np.linalg.norm(a.l - sign * b.l) < tol and \
        np.linalg.norm(a.lbar - sign * b.lbar) < tol


def test_side_examples():
    x_axis = PluckerLine.from_point_direction((0, 0, 0), (1, 0, 0))
    y_axis = PluckerLine.from_point_direction((0, 0, 0), (0, 1, 0))
    lifted = PluckerLine((0, 1, 0), (-1, 0, 0))

    assert side(x_axis, y_axis) == 0.0
    assert side(x_axis, lifted) == pytest.approx(-1.0)
    assert side(lifted, lifted) == 0.0


def test_side_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a = random_line(rng)
        b = random_line(rng)
        assert abs(side(a, b) - side(b, a)) < 1e-12
        assert abs(side(a, a)) < 1e-12


def test_line_from_four_rays():
    cam = CameraModel.default()

    gt = PluckerLine.from_point_direction((3.0, 1.0, 0.5), (-0.3, 1.0, 0.4))
    points = np.array([gt.point_at(t) for t in [-2.0, -0.5, 1.0, 2.5]])
    rays = rays_through(cam, points)

    lines = line_from_four_rays(rays)
    assert 1 <= len(lines) <= 2

    for line in lines:
        assert abs(line.quadric()) < 1e-10
        for ray in rays:
            assert abs(side(line, ray)) < 1e-8

    assert any(same_line(line, gt, 1e-8) for line in lines)


def test_four_rays_of_one_column():
    cam = CameraModel.default()

    j = np.full(4, 100.5)
    i = np.array([50.0, 150.0, 300.0, 450.0])
    xi, xibar = backproject_pixels(cam, i, j)
    rays = [PluckerRay(a, b) for a, b in zip(xi, xibar)]

    with pytest.raises(DegenerateRays):
        line_from_four_rays(rays)


def test_four_rays_through_one_point():
    cam = CameraModel(rc=0.0)

    xi, xibar = backproject_pixels(cam, [100.0, 200.0, 300.0, 400.0],
                                   [10.0, 300.0, 600.0, 900.0])
    rays = [PluckerRay(a, b) for a, b in zip(xi, xibar)]

    with pytest.raises(DegenerateRays):
        line_from_four_rays(rays)


def test_closest_point_examples():
    x_axis = PluckerLine.from_point_direction((0, 0, 0), (1, 0, 0))
    ray = PluckerRay.from_point_direction((0, 0, 1), (0, 1, 0))

    point = closest_point_on_line_to_ray(x_axis, ray)
    assert np.allclose(point, [0.0, 0.0, 0.0], atol=1e-12)
    assert line_to_ray_distance(x_axis, ray) == pytest.approx(1.0)

    # Intersecting pair
    line = PluckerLine.from_point_direction((1, 2, 3), (1, 1, 0))
    other = PluckerLine.from_point_direction((1, 2, 3), (0, 0, 1))
    assert np.allclose(closest_point_on_line_to_ray(line, other), [1, 2, 3], atol=1e-12)
    assert line_to_ray_distance(line, other) == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(ParallelLines):
        closest_point_on_line_to_ray(x_axis, PluckerLine.from_point_direction((0, 1, 0), (2, 0, 0)))


def test_closest_point_is_minimal():
    rng = np.random.default_rng(7)
    for _ in range(100):
        line = random_line(rng).normalized()
        ray = random_line(rng)

        point = closest_point_on_line_to_ray(line, ray)
        gap = ray.distance_to_point(point)
        assert gap == pytest.approx(line_to_ray_distance(line, ray), abs=1e-9)

        # Stationary: moving along the line never gets closer
        for delta in [-1e-4, 1e-4]:
            assert ray.distance_to_point(point + delta * line.direction) > gap - 1e-12

        # Dense scan of the line parameter
        base = line.closest_point_to_origin()
        scan = min(ray.distance_to_point(base + s * line.direction)
                   for s in np.linspace(-20.0, 20.0, 1001))
        assert gap <= scan + 1e-9


def test_intersect_coplanar_lines():
    wall_x = PluckerLine.from_point_direction((2.0, 0.0, 1.5), (0.0, 1.0, 0.0))
    wall_y = PluckerLine.from_point_direction((0.0, 2.0, 1.5), (1.0, 0.0, 0.0))

    point = intersect_coplanar_lines(wall_x, wall_y)
    assert np.allclose(point, [2.0, 2.0, 1.5], atol=1e-12)

    parallel = PluckerLine.from_point_direction((2.0, 0.0, -1.0), (0.0, 1.0, 0.0))
    with pytest.raises(ParallelLines):
        intersect_coplanar_lines(wall_x, parallel)

    x_axis = PluckerLine.from_point_direction((0, 0, 0), (1, 0, 0))
    lifted = PluckerLine.from_point_direction((0, 0, 1), (0, 1, 0))
    with pytest.raises(NotCoplanar):
        intersect_coplanar_lines(x_axis, lifted)


def test_line_helpers():
    line = PluckerLine.from_points((0.0, 3.0, 1.0), (2.0, 3.0, 1.0))

    assert np.allclose(line.direction, [1.0, 0.0, 0.0])
    assert line.depth == pytest.approx(np.hypot(3.0, 1.0))
    assert np.allclose(line.closest_point_to_origin(), [0.0, 3.0, 1.0])
    assert np.allclose(line.point_at(2.0), [2.0, 3.0, 1.0])
    assert line.distance_to_point((5.0, 3.0, 2.0)) == pytest.approx(1.0)

    # Depth is scale free
    scaled = PluckerLine(5.0 * line.l, 5.0 * line.lbar)
    assert scaled.depth == pytest.approx(line.depth)
    assert np.allclose(scaled.normalized().vector, line.normalized().vector)

# =============================================================================


@pytest.mark.skipif("NCL_LONG_TESTS" not in os.environ, reason="Long test")
def test_kernel_properties():
    cam = CameraModel.default()
    rng = np.random.default_rng(100)
    count = 100000

    # Projection round trip and the Plücker constraint of every ray
    radius = rng.uniform(1.5, 8.0, count)
    azimuth = rng.uniform(-np.pi, np.pi, count)
    points = np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth),
                              rng.uniform(-3.0, 3.0, count)])
    i, j = project_points(cam, points)
    xi, xibar = backproject_pixels(cam, i, j)

    assert np.max(np.abs(np.einsum("ij,ij->i", xi, xibar))) < 1e-12
    assert np.max(np.linalg.norm(np.cross(points, xi) - xibar, axis=1)) < 1e-9

    # Side symmetry
    for _ in range(count):
        a = random_line(rng)
        b = random_line(rng)
        assert abs(side(a, b) - side(b, a)) < 1e-12
        assert abs(side(a, a)) < 1e-12

    # Four-ray recovery
    failures = 0
    for _ in range(count):
        angle = rng.uniform(-np.pi, np.pi)
        base = rng.uniform(3.0, 6.0) * np.array([np.cos(angle), np.sin(angle), 0.0])
        base[2] = rng.uniform(-1.0, 1.0)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        gt = PluckerLine.from_point_direction(base, direction)

        # Every sample stays at least 1.5 m from the axis
        points = np.array([base + t * direction for t in [-1.5, -0.5, 0.5, 1.5]])
        try:
            lines = line_from_four_rays(rays_through(cam, points))
        except (DegenerateRays, NoRealSolution):
            failures += 1
            continue
        if not any(same_line(line, gt, 1e-6) for line in lines):
            failures += 1

    assert failures <= count // 1000, failures
