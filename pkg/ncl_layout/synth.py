#!/usr/bin/env python3
"""
Synthetic ground truth: random Manhattan and Atlanta rooms, the analytic
boundary map a panorama of them produces, noise and outlier injection.
"""
import logging
import math

import numpy as np

from shapely.geometry import Point, Polygon, LinearRing

from .errors import NclLayoutException, InputError
from .layout import BoundaryMap, Layout, walls_from_polygon

# =============================================================================

# Base of the corner-score label, score = CORNER_BASE ** column_distance
CORNER_BASE = 0.96

# Sampling attempts before giving up
MAX_ATTEMPTS = 1000

# =============================================================================


class RejectionOverflow(NclLayoutException):
    """
    The generator could not satisfy its constraints within the attempt budget
    """
    pass


class CameraOutsideRoom(NclLayoutException):
    """
    The camera is not strictly inside the room with enough clearance
    """
    pass

# =============================================================================


class LayoutSpec():
    """
    Parameters of the random room generator. Extents are the rectangle side
    lengths in meters; rc is the radius of the camera that will observe the
    room and sets the clearance of the camera position.
    """

    def __init__(self, seed=0, walls=(4, 14), atlanta_clip_probability=0.0,
                 extent=(3.0, 10.0), h_c=(0.8, 2.2), h_f=(-2.2, -0.8),
                 rc=1.0, min_step=0.5, min_clip=0.3, random_yaw=True, yaw=None):

        walls = tuple(int(w) for w in walls)
        if not 4 <= walls[0] <= walls[1] <= 14:
            raise InputError("Wall count range must lie within [4, 14] ({})".format(walls))
        if not 0.0 <= atlanta_clip_probability <= 1.0:
            raise InputError("Clip probability must be in [0, 1] ({})".format(
                atlanta_clip_probability))
        if not 0.0 < extent[0] <= extent[1]:
            raise InputError("Invalid room extent range {}".format(extent))
        if not 0.0 < h_c[0] <= h_c[1] or not h_f[0] <= h_f[1] < 0.0:
            raise InputError("Invalid height ranges {} / {}".format(h_c, h_f))
        if rc < 0.0:
            raise InputError("Camera radius must be non-negative ({})".format(rc))

        self.seed = int(seed)
        self.walls = walls
        self.atlanta_clip_probability = float(atlanta_clip_probability)
        self.extent = (float(extent[0]), float(extent[1]))
        self.h_c = (float(h_c[0]), float(h_c[1]))
        self.h_f = (float(h_f[0]), float(h_f[1]))
        self.rc = float(rc)
        self.min_step = float(min_step)
        self.min_clip = float(min_clip)
        self.random_yaw = bool(random_yaw)
        self.yaw = None if yaw is None else float(yaw)

    @property
    def clearance(self):
        return max(self.rc + 0.1, 0.3)

    def to_dict(self):
        return {
            "seed": self.seed,
            "walls": list(self.walls),
            "atlanta_clip_probability": self.atlanta_clip_probability,
            "extent": list(self.extent),
            "h_c": list(self.h_c),
            "h_f": list(self.h_f),
            "rc": self.rc,
            "min_step": self.min_step,
            "min_clip": self.min_clip,
            "random_yaw": self.random_yaw,
            "yaw": self.yaw,
        }


class NoiseSpec():
    """
    Boundary noise: Gaussian row noise of gaussian_sigma pixels plus a
    spike_rate fraction of columns offset by +-spike_magnitude pixels.
    """

    def __init__(self, gaussian_sigma=0.0, spike_rate=0.0, spike_magnitude=20.0,
                 seed=0):

        if gaussian_sigma < 0.0:
            raise InputError("Noise sigma must be non-negative ({})".format(
                gaussian_sigma))
        if not 0.0 <= spike_rate < 1.0:
            raise InputError("Spike rate must be in [0, 1) ({})".format(spike_rate))

        self.gaussian_sigma = float(gaussian_sigma)
        self.spike_rate = float(spike_rate)
        self.spike_magnitude = float(spike_magnitude)
        self.seed = int(seed)

    def to_dict(self):
        return {
            "gaussian_sigma": self.gaussian_sigma,
            "spike_rate": self.spike_rate,
            "spike_magnitude": self.spike_magnitude,
            "seed": self.seed,
        }

# =============================================================================


def _is_ccw(corners):
    return LinearRing(corners).is_ccw


def layout_from_polygon(corners, h_c, h_f, world=None, camera=None):
    """
    Builds a layout from floor-plan corners given in the camera frame. The
    corners are reordered counter-clockwise if needed. The world is inferred
    from the wall directions unless given.
    """

    corners = np.array(corners, dtype=float).reshape(-1, 2)
    if len(corners) < 3:
        raise InputError("A room needs at least 3 corners")
    if not _is_ccw(corners):
        corners = corners[::-1].copy()

    walls = walls_from_polygon(corners, h_c, h_f)

    if world is None:
        n = len(walls)
        perpendicular = all(abs(np.dot(walls[k - 1].u, walls[k].u)) < 1e-9
                            for k in range(n))
        world = "manhattan" if perpendicular else "atlanta"

    return Layout(walls, corners, h_c, h_f, None, world, camera)


def rectangle_room(width, depth, camera=None, h_c=1.5, h_f=-1.5):
    """
    Axis aligned rectangular room with its lower-left corner at the origin
    of the floor plan. `camera` is the camera position in that frame and
    defaults to the room center.
    """
    if camera is None:
        camera = (0.5 * width, 0.5 * depth)

    corners = np.array([(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)])
    return layout_from_polygon(corners - np.asarray(camera, dtype=float), h_c, h_f)

# =============================================================================


def _staircase(corner, d_in, d_out, a, b, steps, rng, min_step):
    """
    Replaces a convex corner by an inward staircase of `steps` steps that
    starts a before the corner and ends b after it
    """
    def split(total):
        spare = total - steps * min_step
        return min_step + spare * rng.dirichlet(np.ones(steps))

    alphas = a - np.concatenate([[0.0], np.cumsum(split(a))])
    betas = np.concatenate([[0.0], np.cumsum(split(b))])
    alphas[-1] = 0.0
    betas[-1] = b

    def point(alpha, beta):
        return corner - alpha * d_in + beta * d_out

    points = [point(alphas[0], 0.0)]
    for k in range(1, steps + 1):
        points.append(point(alphas[k - 1], betas[k]))
        points.append(point(alphas[k], betas[k]))
    return points


def _manhattan_polygon(spec, rng):
    """
    Rectangle with staircases carved into its corners. Returns None when the
    sampled rectangle cannot hold the sampled number of steps.
    """

    width, depth = rng.uniform(spec.extent[0], spec.extent[1], size=2)
    rect = np.array([(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)])

    # Steps a corner can hold on each of its (half) adjacent edges
    half = 0.5 * min(width, depth) - 1e-3
    capacity = int(half // spec.min_step)

    min_steps = max(0, int(math.ceil((spec.walls[0] - 4) / 2)))
    max_steps = min((spec.walls[1] - 4) // 2, 4 * capacity)
    if min_steps > max_steps:
        return None
    total = int(rng.integers(min_steps, max_steps + 1))

    steps = [0, 0, 0, 0]
    for _ in range(total):
        free = [c for c in range(4) if steps[c] < capacity]
        steps[int(rng.choice(free))] += 1

    polygon = []
    for c in range(4):
        corner = rect[c]
        d_in = rect[c] - rect[c - 1]
        d_in /= np.linalg.norm(d_in)
        d_out = rect[(c + 1) % 4] - rect[c]
        d_out /= np.linalg.norm(d_out)

        if steps[c] == 0:
            polygon.append(corner)
            continue

        low = steps[c] * spec.min_step
        a = rng.uniform(low, max(low, half))
        b = rng.uniform(low, max(low, half))
        polygon.extend(_staircase(corner, d_in, d_out, a, b, steps[c], rng,
                                  spec.min_step))

    return np.array(polygon)


def _clip_corners(polygon, spec, rng):
    """
    Replaces convex corners by oblique walls with the clip probability,
    never exceeding the maximal wall count
    """

    points = [np.array(p) for p in polygon]
    k = 0
    while k < len(points):
        if len(points) >= spec.walls[1]:
            break

        prev_point = points[k - 1]
        corner = points[k]
        next_point = points[(k + 1) % len(points)]

        d_in = corner - prev_point
        d_out = next_point - corner
        len_in = np.linalg.norm(d_in)
        len_out = np.linalg.norm(d_out)

        convex = d_in[0] * d_out[1] - d_in[1] * d_out[0] > 0.0
        upper = 0.5 * min(len_in, len_out) - 1e-3

        if convex and upper > spec.min_clip and \
           rng.uniform() < spec.atlanta_clip_probability:
            t = rng.uniform(spec.min_clip, upper)
            points[k:k + 1] = [corner - t * d_in / len_in, corner + t * d_out / len_out]
            k += 2
        else:
            k += 1

    return np.array(points)


def _sample_camera(polygon, clearance, rng):
    """
    Uniform camera position at more than `clearance` from every wall, or
    None when the room has no such position
    """
    shape = Polygon(polygon)
    region = shape.buffer(-clearance)
    if region.is_empty:
        return None

    xmin, ymin, xmax, ymax = region.bounds
    for _ in range(MAX_ATTEMPTS):
        candidate = Point(rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
        if shape.contains(candidate) and shape.exterior.distance(candidate) > clearance:
            return np.array([candidate.x, candidate.y])

    return None


def generate_layout(spec):
    """
    Samples a random room. The result is in the camera frame: the camera
    axis is the origin of the floor plan.
    """

    rng = np.random.default_rng(spec.seed)

    for attempt in range(MAX_ATTEMPTS):
        polygon = _manhattan_polygon(spec, rng)
        if polygon is None:
            continue

        if spec.atlanta_clip_probability > 0.0:
            polygon = _clip_corners(polygon, spec, rng)

        ring = LinearRing(polygon)
        if not ring.is_simple or not Polygon(polygon).is_valid:
            logging.debug("Rejected a non-simple polygon (attempt {})".format(attempt))
            continue
        if not spec.walls[0] <= len(polygon) <= spec.walls[1]:
            continue

        camera = _sample_camera(polygon, spec.clearance, rng)
        if camera is None:
            logging.debug("No camera position with {:.2f} m clearance (attempt {})".format(
                spec.clearance, attempt))
            continue
        break
    else:
        raise RejectionOverflow("No valid room in {} attempts".format(
            MAX_ATTEMPTS))

    polygon = polygon - camera

    yaw = rng.uniform(0.0, 2.0 * math.pi) if spec.random_yaw else 0.0
    if spec.yaw is not None:
        yaw = spec.yaw

    if yaw != 0.0:
        rotation = np.array([[math.cos(yaw), -math.sin(yaw)],
                             [math.sin(yaw), math.cos(yaw)]])
        polygon = polygon @ rotation.T

    h_c = rng.uniform(*spec.h_c)
    h_f = rng.uniform(*spec.h_f)

    layout = layout_from_polygon(polygon, h_c, h_f)
    logging.debug("Generated {}".format(layout))
    return layout

# =============================================================================


def corner_labels(cols, corner_columns, cyclic=True, base=CORNER_BASE):
    """
    Corner score of every column: base ** (distance to the nearest corner
    column), zero when there is no corner
    """
    if len(corner_columns) == 0:
        return np.zeros(cols)

    columns = np.arange(cols)[:, None]
    corners = np.asarray(corner_columns, dtype=int)[None, :]
    dx = np.abs(columns - corners)
    if cyclic:
        dx = np.minimum(dx, cols - dx)

    return np.power(base, dx.min(axis=1).astype(float))


def visible_corner_columns(layout, cam):
    """
    Columns of the room corners the camera sees, including the occluding
    corners at depth discontinuities
    """

    corners = layout.corners
    azimuths = np.arctan2(corners[:, 1], corners[:, 0])
    distances = np.hypot(corners[:, 0], corners[:, 1])

    if cam.full_panorama:
        azimuths = cam.wrap_azimuth(azimuths)
        inside = np.ones(len(azimuths), dtype=bool)
    else:
        inside = (azimuths >= cam.varphi[0]) & (azimuths <= cam.varphi[1])

    _, hits = layout.cast_rays(azimuths)
    visible = inside & (hits >= distances * (1.0 - 1e-9) - 1e-9)

    columns = np.floor(cam.azimuth_to_col(azimuths[visible])).astype(int)
    return sorted(set(np.clip(columns, 0, cam.cols - 1).tolist()))


def project_layout(layout, cam):
    """
    Analytic boundary map of a room seen by the camera. Every column reports
    the first wall its radial half-plane meets beyond the optical center.
    """

    origin = Point(0.0, 0.0)
    polygon = layout.polygon()
    if not polygon.contains(origin):
        raise CameraOutsideRoom("The camera axis is outside the room")
    if polygon.exterior.distance(origin) <= cam.rc:
        raise CameraOutsideRoom("A wall is closer than the camera radius {}".format(
            cam.rc))

    azimuths = cam.column_azimuths()
    index, distance = layout.cast_rays(azimuths)
    if np.any(index < 0):
        raise CameraOutsideRoom("Some columns see no wall")

    depth = distance - cam.rc
    ceiling = cam.elevation_to_row(np.arctan2(layout.h_c, depth))
    floor = cam.elevation_to_row(np.arctan2(layout.h_f, depth))

    columns = visible_corner_columns(layout, cam)
    score = corner_labels(cam.cols, columns, cam.full_panorama)

    seen = len(set(index.tolist()))
    if seen < len(layout):
        logging.info("{} of {} walls are occluded".format(len(layout) - seen, len(layout)))

    return BoundaryMap(ceiling, floor, score)


def add_noise(bm, noise, cam=None):
    """
    Adds seeded Gaussian noise and spike outliers to the boundary rows. The
    ceiling row stays at least 1 px above the floor row and, given a camera,
    inside the image.
    """

    rng = np.random.default_rng(noise.seed)
    n = bm.cols

    ceiling = bm.ceiling_row + rng.normal(0.0, noise.gaussian_sigma, n)
    floor = bm.floor_row + rng.normal(0.0, noise.gaussian_sigma, n)

    count = int(round(noise.spike_rate * n))
    if count > 0:
        spikes = rng.choice(n, size=count, replace=False)
        ceiling[spikes] += noise.spike_magnitude * rng.choice([-1.0, 1.0], size=count)
        floor[spikes] += noise.spike_magnitude * rng.choice([-1.0, 1.0], size=count)

    crossed = ceiling < floor + 1.0
    if np.any(crossed):
        middle = 0.5 * (ceiling[crossed] + floor[crossed])
        ceiling[crossed] = middle + 0.5
        floor[crossed] = middle - 0.5

    if cam is not None:
        ceiling = np.clip(ceiling, 1.0, cam.rows)
        floor = np.clip(floor, 0.0, cam.rows - 1.0)

    return BoundaryMap(ceiling, floor, bm.corner_score)
