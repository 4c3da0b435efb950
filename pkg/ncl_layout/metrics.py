#!/usr/bin/env python3
"""
Layout evaluation metrics: per-line direction and depth errors, corner error
(absolute and bounding-box normalized) and rasterized 2D / 3D IoU.
"""
import logging
import math

import numpy as np

from matplotlib.path import Path
from scipy.spatial.distance import cdist
from shapely.geometry import LinearRing, Polygon

from .errors import NclLayoutException

# =============================================================================

# IoU raster cell size (m)
IOU_CELL = 0.01

# =============================================================================


class EmptyCornerSet(NclLayoutException):
    """
    A corner set to compare has no corners
    """
    pass


class DegeneratePolygon(NclLayoutException):
    """
    A floor polygon has no area or intersects itself
    """
    pass

# =============================================================================


class EvalReport():
    """
    Metrics of one predicted layout against its ground truth
    """

    def __init__(self, ce_m, cen_pct, iou2d_pct, iou3d_pct, dir_err_deg,
                 depth_err_m, scale_err_pct, count_mismatch=False, warnings=None):
        self.ce_m = float(ce_m)
        self.cen_pct = float(cen_pct)
        self.iou2d_pct = float(iou2d_pct)
        self.iou3d_pct = float(iou3d_pct)
        self.dir_err_deg = [float(v) for v in dir_err_deg]
        self.depth_err_m = [float(v) for v in depth_err_m]
        self.scale_err_pct = float(scale_err_pct)
        self.count_mismatch = bool(count_mismatch)
        self.warnings = list(warnings or [])

    def to_dict(self):
        return {
            "ce_m": self.ce_m,
            "cen_pct": self.cen_pct,
            "iou2d_pct": self.iou2d_pct,
            "iou3d_pct": self.iou3d_pct,
            "dir_err_deg": self.dir_err_deg,
            "depth_err_m": self.depth_err_m,
            "scale_err_pct": self.scale_err_pct,
            "count_mismatch": self.count_mismatch,
            "warnings": self.warnings,
        }

    def to_row(self):
        """
        Flat summary for benchmark tables. Per-line errors are reduced to
        their means.
        """
        return {
            "ce_m": self.ce_m,
            "cen_pct": self.cen_pct,
            "iou2d_pct": self.iou2d_pct,
            "iou3d_pct": self.iou3d_pct,
            "dir_err_deg": float(np.mean(self.dir_err_deg)) if self.dir_err_deg else 0.0,
            "depth_err_m": float(np.mean(self.depth_err_m)) if self.depth_err_m else 0.0,
            "scale_err_pct": self.scale_err_pct,
            "count_mismatch": self.count_mismatch,
        }

# =============================================================================


def direction_error(l, gt):
    """
    Angle between the line directions in degrees, sign invariant
    """
    a = l.l / np.linalg.norm(l.l)
    b = gt.l / np.linalg.norm(gt.l)
    dot = min(1.0, abs(float(np.dot(a, b))))
    return math.degrees(math.acos(dot))


def depth_error(l, gt):
    """
    Difference of the line distances to the origin in meters
    """
    return abs(l.depth - gt.depth)


def corner_error(pred, gt, normalized=False):
    """
    Mean distance from every ground-truth corner to its nearest predicted
    corner. The normalized variant is a percentage of the ground-truth
    bounding-box diagonal.
    """

    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCornerSet("Cannot compare empty corner sets ({} / {})".format(
            len(pred), len(gt)))

    gt_points = gt.points
    distances = cdist(gt_points, pred.points)
    error = float(np.mean(distances.min(axis=1)))

    if not normalized:
        return error

    diagonal = float(np.linalg.norm(gt_points.max(axis=0) - gt_points.min(axis=0)))
    if diagonal <= 0.0:
        raise DegeneratePolygon("Ground-truth corners have no extent")
    return 100.0 * error / diagonal


def _check_polygon(corners, name):
    if len(corners) < 3:
        raise DegeneratePolygon("The {} polygon has {} corners".format(name, len(corners)))
    if not LinearRing(corners).is_simple or not Polygon(corners).area > 0.0:
        raise DegeneratePolygon("The {} polygon is not simple or has no area".format(name))


def iou(pred, gt, mode="2d", cell=IOU_CELL):
    """
    Intersection over union in percent. Floor plans are rasterized on a grid
    of `cell` meters over their common bounding box; "3d" additionally
    scales by the overlap of the height intervals.
    """

    assert mode in ["2d", "3d"], mode

    _check_polygon(pred.corners, "predicted")
    _check_polygon(gt.corners, "ground-truth")

    both = np.concatenate([pred.corners, gt.corners], axis=0)
    low = both.min(axis=0)
    high = both.max(axis=0)

    xs = np.arange(low[0] + 0.5 * cell, high[0], cell)
    ys = np.arange(low[1] + 0.5 * cell, high[1], cell)
    gx, gy = np.meshgrid(xs, ys)
    centers = np.column_stack([gx.ravel(), gy.ravel()])

    inside_pred = Path(pred.corners).contains_points(centers)
    inside_gt = Path(gt.corners).contains_points(centers)

    union = np.count_nonzero(inside_pred | inside_gt)
    if union == 0:
        raise DegeneratePolygon("Polygons cover no raster cell")

    ratio = np.count_nonzero(inside_pred & inside_gt) / union

    if mode == "3d":
        overlap = max(0.0, min(pred.h_c, gt.h_c) - max(pred.h_f, gt.h_f))
        span = max(pred.h_c, gt.h_c) - min(pred.h_f, gt.h_f)
        ratio *= overlap / span

    return 100.0 * ratio


def _match_walls(pred, gt):
    """
    Index of the predicted wall whose segment midpoint is nearest to the
    midpoint of each ground-truth wall
    """
    def midpoints(layout):
        return np.array([0.5 * (p + q) for p, q in layout.wall_segments()])

    return cdist(midpoints(gt), midpoints(pred)).argmin(axis=1)


def evaluate(pred, gt):
    """
    Computes every metric of a predicted layout against the ground truth
    """

    warnings = []
    if pred.camera is not None and gt.camera is not None and pred.camera != gt.camera:
        warnings.append("camera mismatch: {} vs {}".format(pred.camera, gt.camera))

    count_mismatch = len(pred) != len(gt)
    if count_mismatch:
        warnings.append("wall count mismatch: {} vs {}".format(len(pred), len(gt)))

    for message in warnings:
        logging.warning(message)

    pred_corners = pred.corner_set()
    gt_corners = gt.corner_set()

    dir_err = []
    depth_err = []
    for g, p in enumerate(_match_walls(pred, gt)):
        for lines in [(pred.walls[p].ceiling_line(), gt.walls[g].ceiling_line()),
                      (pred.walls[p].floor_line(), gt.walls[g].floor_line())]:
            dir_err.append(direction_error(*lines))
            depth_err.append(depth_error(*lines))

    scale = pred.room_height() / gt.room_height()

    return EvalReport(
        ce_m=corner_error(pred_corners, gt_corners),
        cen_pct=corner_error(pred_corners, gt_corners, normalized=True),
        iou2d_pct=iou(pred, gt, "2d"),
        iou3d_pct=iou(pred, gt, "3d"),
        dir_err_deg=dir_err,
        depth_err_m=depth_err,
        scale_err_pct=100.0 * abs(scale - 1.0),
        count_mismatch=count_mismatch,
        warnings=warnings,
    )
