#!/usr/bin/env python3
"""
Layout recovery pipeline: boundary map ingestion, corner segmentation, RANSAC
wall fitting, the Manhattan and Atlanta branches with their occlusion
handling, corner computation and the final least-squares adjustment.
"""
import os
import json
import logging
import math
import time

import numpy as np

from scipy.ndimage import maximum_filter1d, uniform_filter1d
from scipy.optimize import least_squares

from .errors import NclLayoutException, InputError
from .camera import PixelCoord, backproject_pixel
from .plucker import closest_point_on_line_to_ray, ParallelLines
from .solvers import Wall, RaySet, ROT90, \
    extract_wall, solve_manhattan, solve_atlanta, \
    RankDeficient, NoValidRoot, ComplexRoots
from .layout import Layout, CornerSet, intersect_walls, angle_difference

# =============================================================================

# Two walls meeting within this many columns of their corner column are not
# separated by an occluded wall
CORNER_TOLERANCE = 1.0

# =============================================================================


class DegenerateConfig(NclLayoutException):
    """
    RANSAC parameters for which the hypothesis count is undefined
    """
    pass


class TooFewCorners(NclLayoutException):
    """
    Not enough corner peaks to close a room
    """
    pass


class NoConsensus(NclLayoutException):
    """
    No RANSAC hypothesis explains enough columns of a wall
    """
    pass


class PipelineError(NclLayoutException):
    """
    A pipeline stage failed. The stage name and the original exception are
    attached.
    """

    def __init__(self, stage, cause):
        super().__init__("Stage '{}' failed: {}".format(stage, cause))
        self.stage = stage
        self.cause = cause

# =============================================================================


class RansacConfig():
    """
    RANSAC parameters: success probability P, outlier rate eps, sample size
    k (columns per hypothesis), inlier threshold in pixels and the seed.
    """

    def __init__(self, success_prob=0.9999, outlier_rate=0.2, sample_size=3,
                 inlier_threshold=1.5, seed=0):

        if not 0.0 < success_prob < 1.0:
            raise InputError("Success probability must be in (0, 1) ({})".format(
                success_prob))
        if not 0.0 <= outlier_rate < 1.0:
            raise InputError("Outlier rate must be in [0, 1) ({})".format(
                outlier_rate))
        if int(sample_size) != sample_size or sample_size < 2:
            raise InputError("Sample size must be an integer >= 2 ({})".format(
                sample_size))
        if not inlier_threshold > 0.0:
            raise InputError("Inlier threshold must be positive ({})".format(
                inlier_threshold))

        self.success_prob = float(success_prob)
        self.outlier_rate = float(outlier_rate)
        self.sample_size = int(sample_size)
        self.inlier_threshold = float(inlier_threshold)
        self.seed = int(seed)

    def to_dict(self):
        return {
            "success_prob": self.success_prob,
            "outlier_rate": self.outlier_rate,
            "sample_size": self.sample_size,
            "inlier_threshold": self.inlier_threshold,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(data):
        return RansacConfig(**data)


class PipelineConfig():
    """
    Every tunable of the pipeline. Defaults are the declared values.

    mode "solvers" runs the single-wall extractor on every segment and the
    joint layout solver only, without RANSAC, occlusion handling or the
    final adjustment.
    """

    MODES = ["pipeline", "solvers"]

    def __init__(self, ransac=None, smoothing=5, peak_threshold=0.5,
                 nms_radius=4, trim_margin=2, gap_threshold=0.05, mu=10.0,
                 max_iterations=100, ftol=1e-10, adjust=True, outlier_gate=5.0,
                 mode="pipeline"):

        self.ransac = ransac if ransac is not None else RansacConfig()
        self.smoothing = int(smoothing)
        self.peak_threshold = float(peak_threshold)
        self.nms_radius = int(nms_radius)
        self.trim_margin = int(trim_margin)
        self.gap_threshold = float(gap_threshold)
        self.mu = float(mu)
        self.max_iterations = int(max_iterations)
        self.ftol = float(ftol)
        self.adjust = bool(adjust)
        self.outlier_gate = float(outlier_gate)
        self.mode = str(mode)

        if self.smoothing < 1 or self.nms_radius < 0 or self.trim_margin < 0:
            raise InputError("Invalid corner decoding parameters")
        if self.gap_threshold < 0.0 or self.mu < 0.0:
            raise InputError("Gap threshold and mu must be non-negative")
        if self.max_iterations < 1:
            raise InputError("At least one adjustment iteration is required")
        if not self.outlier_gate > 0.0:
            raise InputError("Outlier gate must be positive ({})".format(outlier_gate))
        if self.mode not in PipelineConfig.MODES:
            raise InputError("Unknown pipeline mode '{}'".format(mode))

    def to_dict(self):
        return {
            "ransac": self.ransac.to_dict(),
            "smoothing": self.smoothing,
            "peak_threshold": self.peak_threshold,
            "nms_radius": self.nms_radius,
            "trim_margin": self.trim_margin,
            "gap_threshold": self.gap_threshold,
            "mu": self.mu,
            "max_iterations": self.max_iterations,
            "ftol": self.ftol,
            "adjust": self.adjust,
            "outlier_gate": self.outlier_gate,
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(data):
        data = dict(data)
        try:
            if "ransac" in data:
                data["ransac"] = RansacConfig.from_dict(data["ransac"])
            return PipelineConfig(**data)
        except TypeError as ex:
            raise InputError("Invalid pipeline configuration: {}".format(ex))

    @staticmethod
    def from_file(file_name):
        """
        Loads a pipeline configuration JSON file
        """
        logging.info("Loading pipeline configuration from '{}'".format(file_name))

        if not os.path.isfile(file_name):
            raise InputError("Configuration file '{}' not found".format(file_name))

        with open(file_name, "r") as fp:
            try:
                data = json.load(fp)
            except ValueError as ex:
                raise InputError("Malformed configuration file '{}': {}".format(
                    file_name, ex))

        return PipelineConfig.from_dict(data)

# =============================================================================


class Segment():
    """
    A column interval holding one visible wall. `start` and `end` are the
    bounding corner columns (None at the image edge of a partial panorama).
    `columns` are the interior columns left after trimming.
    """

    def __init__(self, index, start, end, columns):
        self.index = index
        self.start = start
        self.end = end
        self.columns = np.asarray(columns, dtype=int)

    def __len__(self):
        return len(self.columns)

    def __repr__(self):
        return "Segment({}, {}..{}, {} columns)".format(
            self.index, self.start, self.end, len(self.columns))


class OccludedWall():
    """
    Placeholder for a wall no column sees. It sits at the apparent corner
    column where the visible walls around it meet in the image.
    """

    def __init__(self, label, corner_column):
        self.label = label
        self.corner_column = corner_column

    def __repr__(self):
        return "OccludedWall(label={}, corner_column={})".format(
            self.label, self.corner_column)


class ShortWall():
    """
    A visible wall whose segment is too short for RANSAC. It is fitted on
    every column strictly between its two corner columns.
    """

    def __init__(self, segment, cols):
        self.segment = segment
        self.label = None
        self.wall = None

        start, end = segment.start, segment.end
        stop = end if end > start else end + cols
        self.columns = np.arange(start + 1, stop) % cols

    def __repr__(self):
        return "ShortWall({}, {} columns)".format(self.segment.index, len(self.columns))

# =============================================================================


def required_hypotheses(cfg):
    """
    Number of RANSAC hypotheses needed to draw at least one outlier-free
    sample with probability P. Unrounded.
    """
    inlier_prob = (1.0 - cfg.outlier_rate) ** cfg.sample_size
    denominator = math.log1p(-inlier_prob) if inlier_prob < 1.0 else -math.inf

    if denominator == 0.0 or not math.isfinite(math.log1p(-cfg.success_prob)):
        raise DegenerateConfig("Hypothesis count undefined (P={}, eps={}, k={})".format(
            cfg.success_prob, cfg.outlier_rate, cfg.sample_size))

    return math.log1p(-cfg.success_prob) / denominator


def _cyclic_distance(a, b, n):
    d = abs(a - b) % n
    return min(d, n - d)


def segment_walls(bm, cfg=None, cyclic=True):
    """
    Splits the columns into per-wall intervals at the corner-score peaks.
    With cyclic=True the panorama is closed and at least 3 corners are
    required.
    """

    cfg = cfg if cfg is not None else PipelineConfig()
    n = bm.cols
    mode = "wrap" if cyclic else "nearest"

    score = uniform_filter1d(bm.corner_score, size=cfg.smoothing, mode=mode)
    local_max = maximum_filter1d(score, size=2 * cfg.nms_radius + 1, mode=mode)
    candidates = np.flatnonzero((score >= local_max) & (score > cfg.peak_threshold))

    # Greedy non-maximum suppression, ties resolved to the lower column
    order = sorted(candidates, key=lambda j: (-score[j], j))
    peaks = []
    for j in order:
        if cyclic:
            near = [p for p in peaks if _cyclic_distance(p, j, n) <= cfg.nms_radius]
        else:
            near = [p for p in peaks if abs(p - j) <= cfg.nms_radius]
        if not near:
            peaks.append(int(j))

    peaks = sorted(peaks)
    logging.debug("Corner columns: {}".format(peaks))

    margin = cfg.trim_margin
    segments = []

    if cyclic:
        if len(peaks) < 3:
            raise TooFewCorners("Found {} corner peaks, need at least 3".format(
                len(peaks)))

        for k, start in enumerate(peaks):
            end = peaks[(k + 1) % len(peaks)]
            stop = end if end > start else end + n
            columns = np.arange(start + margin, stop - margin + 1) % n
            segments.append(Segment(k, start, end, columns))

    else:
        bounds = [None] + peaks + [None]
        for k in range(len(bounds) - 1):
            start, end = bounds[k], bounds[k + 1]
            first = 0 if start is None else start + margin
            last = n - 1 if end is None else end - margin
            segments.append(Segment(k, start, end, np.arange(first, last + 1)))

    return segments


def _row_residuals(wall, bm, cam, columns):
    """
    Per-column reprojection error, the larger of the ceiling and floor row
    differences. NaN where the wall is not in front of the column.
    """
    azimuths = cam.col_to_azimuth(columns + 0.5)
    ceiling, floor = wall.predicted_rows(cam, azimuths)
    return np.maximum(np.abs(ceiling - bm.ceiling_row[columns]),
                      np.abs(floor - bm.floor_row[columns]))


def _fit_segment(bm, segment, cam, cfg, n_hyp):
    """
    RANSAC over the columns of one segment
    """

    columns = segment.columns
    rays = RaySet.from_columns(cam, bm, columns)

    rng = np.random.default_rng([cfg.seed, segment.index])

    best = None
    best_count = 0
    for h in range(n_hyp):
        sample = np.sort(rng.choice(len(columns), size=cfg.sample_size, replace=False))
        try:
            hypothesis = extract_wall(rays.subset(sample))
        except (RankDeficient, NoValidRoot, ComplexRoots) as ex:
            logging.debug("Segment {} hypothesis {} rejected: {}".format(
                segment.index, h, ex))
            continue

        inliers = _row_residuals(hypothesis.wall, bm, cam, columns) < cfg.inlier_threshold
        count = int(np.sum(inliers))
        if count > best_count:
            best = hypothesis
            best_count = count

    if best is None:
        raise NoConsensus("Segment {}: no valid hypothesis in {} trials".format(
            segment.index, n_hyp))

    inliers = _row_residuals(best.wall, bm, cam, columns) < cfg.inlier_threshold
    if np.sum(inliers) >= 3:
        try:
            refit = extract_wall(rays.subset(np.flatnonzero(inliers)))
            refit_inliers = _row_residuals(refit.wall, bm, cam, columns) < cfg.inlier_threshold
            if np.sum(refit_inliers) >= np.sum(inliers):
                best, inliers = refit, refit_inliers
        except (RankDeficient, NoValidRoot, ComplexRoots) as ex:
            logging.debug("Segment {} refit failed: {}".format(segment.index, ex))

    ratio = float(np.mean(inliers))
    if ratio < 0.5:
        raise NoConsensus("Segment {}: inlier ratio {:.3f} < 0.5".format(
            segment.index, ratio))

    best.columns = columns
    best.inliers = inliers
    best.segment = segment

    logging.debug("Segment {}: {}/{} inliers, {}".format(
        segment.index, int(np.sum(inliers)), len(columns), best.wall))

    return best


def ransac_fit_walls(bm, segments, cam, cfg=None):
    """
    Fits one wall per segment. Segments with fewer columns than the sample
    size are dropped with a warning.
    """

    cfg = cfg if cfg is not None else RansacConfig()
    if cfg.sample_size < 3:
        raise InputError("RANSAC wall fitting needs samples of at least 3 columns")

    n_hyp = max(1, int(math.ceil(required_hypotheses(cfg))))
    logging.info("RANSAC with {} hypotheses per wall".format(n_hyp))

    solutions = []
    for segment in segments:
        if len(segment) < max(cfg.sample_size, 3):
            logging.warning("Dropping segment {} with {} columns".format(
                segment.index, len(segment)))
            continue

        solutions.append(_fit_segment(bm, segment, cam, cfg, n_hyp))

    return solutions


def fit_walls_direct(bm, segments, cam):
    """
    One wall per segment from all of its columns, without RANSAC. Segments
    with fewer than 3 columns are dropped with a warning.
    """

    solutions = []
    for segment in segments:
        if len(segment) < 3:
            logging.warning("Dropping segment {} with {} columns".format(
                segment.index, len(segment)))
            continue

        solution = extract_wall(RaySet.from_columns(cam, bm, segment.columns))
        solution.columns = segment.columns
        solution.inliers = np.ones(len(segment), dtype=bool)
        solution.segment = segment
        solutions.append(solution)

    return solutions


def _fit_short_wall(entry, bm, cam):
    """
    Wall through the columns of a ShortWall, None when they do not fix one
    """
    try:
        return extract_wall(RaySet.from_columns(cam, bm, entry.columns)).wall
    except (RankDeficient, NoValidRoot, ComplexRoots) as ex:
        logging.debug("Short segment {} not fitted: {}".format(entry.segment.index, ex))
        return None


def _merge_short_segments(segments, solutions, cols):
    """
    Every segment in image order, as its RANSAC solution or as a ShortWall
    when wall fitting dropped it
    """
    fitted = {s.segment.index: s for s in solutions}

    entries = []
    for segment in segments:
        if segment.index in fitted:
            entries.append(fitted[segment.index])
            continue

        short = ShortWall(segment, cols)
        if len(short.columns) == 0:
            logging.warning("Dropping segment {} without columns".format(segment.index))
            continue
        entries.append(short)

    return entries


def _wall_of(item):
    return item.wall if hasattr(item, "wall") else item


def cluster_directions(walls):
    """
    Splits walls into the two Manhattan axes. Returns the per-wall labels and
    the principal axis angle (radians). Walls exactly 45 degrees off the axis
    get label 0.
    """

    assert len(walls) >= 1, len(walls)
    angles = np.array([_wall_of(w).theta for w in walls])

    total = np.sum(np.exp(4j * angles))
    if abs(total) < 1e-12:
        principal = float(angles[0])
    else:
        principal = float(np.angle(total) / 4.0)

    labels = [_axis_label(angle, principal) for angle in angles]
    return labels, principal


def _axis_label(angle, principal):
    offset = abs(angle_difference(angle, principal, math.pi))
    return 0 if offset <= math.pi / 4 + 1e-9 else 1


def _alternate_labels(labels):
    """
    Fills the None labels so that each differs from its predecessor
    """
    labels = list(labels)
    n = len(labels)
    first = next(k for k, label in enumerate(labels) if label is not None)

    for step in range(1, n):
        k = (first + step) % n
        if labels[k] is None:
            labels[k] = 1 - labels[k - 1]

    return labels


def handle_occlusions_manhattan(walls, labels):
    """
    Restores the alternation of Manhattan walls. Wherever two cyclically
    consecutive walls share a label an OccludedWall of the other label is
    inserted at the corner column between them. Returns the augmented list
    and its labels.
    """

    n = len(walls)
    entries = []
    out_labels = []

    for k in range(n):
        entries.append(walls[k])
        out_labels.append(labels[k])

        following = (k + 1) % n
        if n > 1 and labels[k] == labels[following]:
            segment = getattr(walls[k], "segment", None)
            column = segment.end if segment is not None else None

            logging.info("Inserting an occluded wall after wall {} (column {})".format(
                k, column))

            entries.append(OccludedWall(1 - labels[k], column))
            out_labels.append(1 - labels[k])

    return entries, out_labels


def _corner_azimuth(cam, column):
    return float(cam.col_to_azimuth(column + 0.5))


def _corner_ray(cam, bm, column):
    """
    Projecting ray of the ceiling boundary in a corner column
    """
    return backproject_pixel(cam, PixelCoord(bm.ceiling_row[column], column + 0.5))


def _corner_point(wall, ray, azimuth):
    """
    Floor-plan position of the point of the wall's ceiling line closest to
    the corner ray. A line parallel to the ray is cut with the ray's plane.
    """
    try:
        return closest_point_on_line_to_ray(wall.ceiling_line(), ray)[:2]
    except ParallelLines:
        r = float(wall.radial_distance(azimuth))
        return r * np.array([math.cos(azimuth), math.sin(azimuth)])


def _meeting_point(wall, following, cam, column):
    """
    Intersection of two consecutive walls when it is seen within
    CORNER_TOLERANCE columns of their corner column, else None
    """
    try:
        point = intersect_walls(wall, following)
    except Layout.InvalidGeometry:
        return None

    if np.hypot(point[0], point[1]) <= cam.rc:
        return None

    j = float(cam.azimuth_to_col(cam.wrap_azimuth(math.atan2(point[1], point[0]))))
    if _cyclic_distance(j, column + 0.5, cam.cols) > CORNER_TOLERANCE:
        return None

    return point


def place_occluded_manhattan(entries, solved, cam):
    """
    Places the occluded walls of a Manhattan solution. The inserted wall goes
    through the occluding end point, the nearer of the two neighbour wall
    points seen along the apparent corner column. Returns the walls and the
    corner anchors (corner index, azimuth) to keep on the corner-ray planes.
    """

    n = len(entries)
    walls = list(solved)
    anchors = []

    for k, entry in enumerate(entries):
        if not isinstance(entry, OccludedWall):
            continue

        before, after = walls[(k - 1) % n], walls[(k + 1) % n]
        assert before is not None and after is not None, k

        azimuth = _corner_azimuth(cam, entry.corner_column)
        r_before = before.radial_distance(azimuth)
        r_after = after.radial_distance(azimuth)

        r_before = np.inf if np.isnan(r_before) else float(r_before)
        r_after = np.inf if np.isnan(r_after) else float(r_after)
        if not np.isfinite(min(r_before, r_after)):
            raise RankDeficient("Cannot place the occluded wall {}".format(k))

        radial = np.array([math.cos(azimuth), math.sin(azimuth)])
        if r_after <= r_before:
            point = r_after * radial
            anchors.append(((k + 1) % n, azimuth))
        else:
            point = r_before * radial
            anchors.append((k, azimuth))

        direction = ROT90 @ before.u
        normal = ROT90 @ direction
        wall = Wall(direction, float(np.dot(normal, point)), before.h_c, before.h_f)
        walls[k] = wall.canonical()

    return walls, anchors


def handle_occlusions_atlanta(walls, bm, cam, gap_threshold=0.05, corner_columns=None):
    """
    Checks every pair of consecutive walls at the corner column between
    them. Both ceiling lines are brought to the projecting ray of the ceiling
    boundary in that column. When their closest points are more than
    gap_threshold apart and the two walls do not meet within
    CORNER_TOLERANCE columns of the corner, a wall lying in the vertical
    plane of the column is inserted between them.

    `walls` are RANSAC solutions, whose segments give the corner columns, or
    plain walls together with `corner_columns`, the column ending each wall.

    Returns the augmented walls, the per-wall occluded flags, the CornerSet
    and the corner anchors (corner index, azimuth) of the inserted walls.
    """

    if corner_columns is None:
        corner_columns = [w.segment.end for w in walls]
    walls = [_wall_of(w) for w in walls]

    n = len(walls)
    assert len(corner_columns) == n, (len(corner_columns), n)

    out_walls = []
    occluded = []
    corners = []
    inserted = []

    for k in range(n):
        wall = walls[k]
        following = walls[(k + 1) % n]
        column = int(corner_columns[k])
        azimuth = _corner_azimuth(cam, column)

        ray = _corner_ray(cam, bm, column)
        p_this = _corner_point(wall, ray, azimuth)
        p_next = _corner_point(following, ray, azimuth)

        gap = float(np.linalg.norm(p_this - p_next))
        if not np.isfinite(gap):
            gap = math.inf

        meeting = _meeting_point(wall, following, cam, column)

        out_walls.append(wall)
        occluded.append(False)

        if gap > gap_threshold and meeting is None:
            logging.info("Inserting an occluded wall at column {} (gap {:.3f} m)".format(
                column, gap))

            radial = Wall((math.cos(azimuth), math.sin(azimuth)), 0.0,
                          wall.h_c, wall.h_f)
            inserted.append((len(out_walls), azimuth))
            out_walls.append(radial)
            occluded.append(True)
            corners.extend([p_this, p_next])
        elif meeting is not None:
            corners.append(meeting)
        else:
            corners.append(0.5 * (p_this + p_next))

    # Corner k joins walls k-1 and k, the loop above produced corner (k, k+1)
    corners = np.roll(np.array(corners).reshape(-1, 2), 1, axis=0)

    anchors = []
    m = len(out_walls)
    for index, azimuth in inserted:
        anchors.append((index, azimuth))
        anchors.append(((index + 1) % m, azimuth))

    h_c, h_f = walls[0].h_c, walls[0].h_f
    return out_walls, occluded, CornerSet.from_floorplan(corners, h_c, h_f), anchors

# =============================================================================


def assign_columns(layout, bm, cam, gate=None, margin=1):
    """
    Columns each wall of the layout is seen in: a column belongs to the
    first wall its azimuth hits. Columns within `margin` of a change of wall
    are left out, and with a `gate` so are columns whose boundary rows miss
    the wall's prediction by more than `gate` pixels. Occluded walls get
    None.
    """

    index, _ = layout.cast_rays(cam.column_azimuths())
    n = len(index)

    keep = index >= 0
    if margin > 0:
        for j in np.flatnonzero(index != np.roll(index, 1)):
            keep[np.arange(j - margin, j + margin) % n] = False

    observations = []
    for k, wall in enumerate(layout.walls):
        if layout.occluded[k]:
            observations.append(None)
            continue

        columns = np.flatnonzero(keep & (index == k))
        if gate is not None and len(columns):
            with np.errstate(invalid="ignore"):
                columns = columns[_row_residuals(wall, bm, cam, columns) <= gate]
        observations.append(columns)

    return observations


class _AdjustmentProblem():
    """
    Parameter packing and residuals of the final adjustment
    """

    def __init__(self, layout, bm, cam, observations, anchors, mu):
        self.layout = layout
        self.bm = bm
        self.cam = cam
        self.anchors = anchors
        self.weight = math.sqrt(mu)
        self.manhattan = layout.world == "manhattan"

        self.observations = []
        for columns in observations:
            if columns is None or len(columns) == 0:
                self.observations.append(None)
            else:
                columns = np.asarray(columns, dtype=int)
                self.observations.append(
                    (columns, cam.col_to_azimuth(columns + 0.5)))

        thetas = np.array([w.theta for w in layout.walls])
        self.base = thetas[0]
        quarter = math.pi / 2
        self.offsets = quarter * np.round(
            angle_difference(thetas, self.base) / quarter)

    def pack(self):
        walls = self.layout.walls
        d = [w.d for w in walls]
        heights = [self.layout.h_c, self.layout.h_f]
        if self.manhattan:
            return np.array([self.base] + d + heights)
        return np.array([w.theta for w in walls] + d + heights)

    def unpack(self, x):
        n = len(self.layout.walls)
        if self.manhattan:
            thetas = x[0] + self.offsets
            d = x[1:1 + n]
        else:
            thetas = x[:n]
            d = x[n:2 * n]
        h_c, h_f = x[-2], x[-1]
        return [Wall.from_angle(t, dk, h_c, h_f) for t, dk in zip(thetas, d)]

    def residuals(self, x):
        walls = self.unpack(x)
        penalty = float(self.cam.rows)
        parts = []

        for wall, obs in zip(walls, self.observations):
            if obs is None:
                continue
            columns, azimuths = obs
            ceiling, floor = wall.predicted_rows(self.cam, azimuths)
            parts.append(np.nan_to_num(ceiling - self.bm.ceiling_row[columns], nan=penalty))
            parts.append(np.nan_to_num(floor - self.bm.floor_row[columns], nan=penalty))

        n = len(walls)
        for index, azimuth in self.anchors:
            normal = np.array([-math.sin(azimuth), math.cos(azimuth)])
            try:
                corner = intersect_walls(walls[(index - 1) % n], walls[index])
                offset = float(np.dot(normal, corner))
            except Layout.InvalidGeometry:
                offset = penalty
            parts.append(np.array([self.weight * offset]))

        return np.concatenate(parts) if parts else np.zeros(1)


def final_adjustment(layout, bm, cam, cfg=None, observations=None, anchors=None):
    """
    Refines wall angles, distances and the two heights by damped least
    squares on the boundary reprojection error. Corners listed in `anchors`
    as (corner index, azimuth) are softly held on the vertical plane of that
    azimuth.

    `observations` gives the columns observed for each wall (None for
    occluded walls). By default they come from assign_columns() on the
    initial layout, gated by cfg.outlier_gate.
    """

    cfg = cfg if cfg is not None else PipelineConfig()
    anchors = anchors or []

    if observations is None:
        observations = assign_columns(layout, bm, cam, cfg.outlier_gate)

    problem = _AdjustmentProblem(layout, bm, cam, observations, anchors, cfg.mu)
    x0 = problem.pack()
    r0 = problem.residuals(x0)
    cost0 = 0.5 * float(np.dot(r0, r0))

    result = least_squares(
        problem.residuals, x0,
        method="trf",
        x_scale="jac",
        ftol=cfg.ftol,
        max_nfev=cfg.max_iterations,
    )

    converged = result.status != 0
    if not converged:
        logging.warning("Final adjustment stopped after {} evaluations without converging".format(
            result.nfev))

    diagnostics = dict(layout.diagnostics)
    diagnostics["converged"] = bool(converged)
    diagnostics["adjustment_cost"] = [cost0, float(result.cost)]

    if not result.cost <= cost0:
        logging.warning("Final adjustment increased the cost, keeping the initial layout")
        return Layout(layout.walls, layout.corners, layout.h_c, layout.h_f,
                      layout.occluded, layout.world, layout.camera, diagnostics)

    walls = [w.canonical() for w in problem.unpack(result.x)]
    h_c, h_f = float(result.x[-2]), float(result.x[-1])

    logging.debug("Adjustment cost {:.3e} -> {:.3e} in {} evaluations".format(
        cost0, result.cost, result.nfev))

    return Layout.from_walls(walls, h_c, h_f, layout.occluded, layout.world,
                             layout.camera, diagnostics)

# =============================================================================


def _run_stage(stage, timing, function, *args, **kwargs):
    logging.info("Running stage '{}'".format(stage))
    start = time.perf_counter()
    try:
        return function(*args, **kwargs)
    except PipelineError:
        raise
    except NclLayoutException as ex:
        raise PipelineError(stage, ex) from ex
    finally:
        timing[stage] = 1000.0 * (time.perf_counter() - start)


def _inlier_rays(cam, bm, solution):
    return RaySet.from_columns(cam, bm, solution.columns[solution.inliers])


def _entry_rays(cam, bm, entry):
    if isinstance(entry, OccludedWall):
        return RaySet.empty()
    if isinstance(entry, ShortWall):
        return RaySet.from_columns(cam, bm, entry.columns)
    return _inlier_rays(cam, bm, entry)


def _recover_manhattan(bm, cam, segments, solutions, timing):

    labels, principal = _run_stage("cluster", timing, cluster_directions, solutions)
    logging.debug("Principal direction {:.4f} rad, labels {}".format(principal, labels))

    fitted = {s.segment.index: label for s, label in zip(solutions, labels)}
    entries = _merge_short_segments(segments, solutions, cam.cols)

    entry_labels = []
    for entry in entries:
        if isinstance(entry, ShortWall):
            entry.wall = _fit_short_wall(entry, bm, cam)
            label = None if entry.wall is None else _axis_label(entry.wall.theta, principal)
            logging.info("Short segment {} kept with label {}".format(
                entry.segment.index, label))
            entry_labels.append(label)
        else:
            entry_labels.append(fitted[entry.segment.index])

    entry_labels = _alternate_labels(entry_labels)
    for entry, label in zip(entries, entry_labels):
        if isinstance(entry, ShortWall):
            entry.label = label

    entries, labels = _run_stage(
        "occlusions", timing, handle_occlusions_manhattan, entries, entry_labels)

    raysets = [_entry_rays(cam, bm, e) for e in entries]
    solution = _run_stage("solve", timing, solve_manhattan, raysets, labels)

    walls, anchors = _run_stage(
        "place", timing, place_occluded_manhattan, entries, solution.walls, cam)

    occluded = [isinstance(e, OccludedWall) for e in entries]
    return walls, solution.h_c, solution.h_f, occluded, anchors, solution.residual


def _recover_atlanta(bm, cam, segments, solutions, cfg, timing):

    raysets = []
    directions = []
    corner_columns = []

    for entry in _merge_short_segments(segments, solutions, cam.cols):
        if isinstance(entry, ShortWall):
            wall = _fit_short_wall(entry, bm, cam)
            if wall is None:
                logging.warning("Dropping short segment {}".format(entry.segment.index))
                continue
            logging.info("Short segment {} kept".format(entry.segment.index))
        else:
            wall = entry.wall

        raysets.append(_entry_rays(cam, bm, entry))
        directions.append(wall.u)
        corner_columns.append(entry.segment.end)

    solution = _run_stage("solve", timing, solve_atlanta, raysets, directions)

    walls, occluded, _, anchors = _run_stage(
        "occlusions", timing, handle_occlusions_atlanta,
        solution.walls, bm, cam, cfg.gap_threshold, corner_columns)

    return walls, solution.h_c, solution.h_f, occluded, anchors, solution.residual


def _recover_solvers(bm, cam, solutions, world, timing):
    """
    Layout solver alone on the directly fitted walls, in image order
    """

    raysets = [_inlier_rays(cam, bm, s) for s in solutions]

    if world == "manhattan":
        labels, _ = _run_stage("cluster", timing, cluster_directions, solutions)
        solution = _run_stage("solve", timing, solve_manhattan, raysets, labels)
    else:
        directions = [s.wall.u for s in solutions]
        solution = _run_stage("solve", timing, solve_atlanta, raysets, directions)

    occluded = [False] * len(solutions)
    return solution.walls, solution.h_c, solution.h_f, occluded, [], solution.residual


def recover_layout(bm, cam, world="manhattan", cfg=None):
    """
    Recovers a metric room layout from a boundary map. The only metric input
    is the camera radius Rc.
    """

    cfg = cfg if cfg is not None else PipelineConfig()

    if world not in Layout.WORLDS:
        raise InputError("Unknown world assumption '{}'".format(world))
    if not cam.full_panorama:
        raise InputError("Layout recovery needs a full 360 degree panorama")
    bm.check_camera(cam)

    timing = {}
    segments = _run_stage("segment", timing, segment_walls, bm, cfg, True)

    if cfg.mode == "solvers":
        stage = "extract"
        solutions = _run_stage(stage, timing, fit_walls_direct, bm, segments, cam)
    else:
        stage = "ransac"
        solutions = _run_stage(stage, timing, ransac_fit_walls, bm, segments, cam, cfg.ransac)

    if len(solutions) < 3:
        raise PipelineError(stage, TooFewCorners(
            "Only {} walls survived wall fitting".format(len(solutions))))

    if cfg.mode == "solvers":
        walls, h_c, h_f, occluded, anchors, residual = \
            _recover_solvers(bm, cam, solutions, world, timing)
    elif world == "manhattan":
        walls, h_c, h_f, occluded, anchors, residual = \
            _recover_manhattan(bm, cam, segments, solutions, timing)
    else:
        walls, h_c, h_f, occluded, anchors, residual = \
            _recover_atlanta(bm, cam, segments, solutions, cfg, timing)

    diagnostics = {
        "mode": cfg.mode,
        "segments": len(segments),
        "walls": len(walls),
        "occluded": int(sum(occluded)),
        "inliers": [int(np.sum(s.inliers)) for s in solutions],
        "solver_residual": float(residual),
        "ransac_walls": [{"theta": s.wall.theta, "d": s.wall.d} for s in solutions],
    }

    layout = _run_stage("corners", timing, Layout.from_walls,
                        walls, h_c, h_f, occluded, world, cam, diagnostics)

    if cfg.adjust and cfg.mode == "pipeline":
        layout = _run_stage("adjust", timing, final_adjustment,
                            layout, bm, cam, cfg, None, anchors)

    layout.diagnostics["timing_ms"] = dict(timing)
    logging.info("Recovered {}".format(layout))

    return layout
