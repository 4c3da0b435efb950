#!/usr/bin/env python3
import sys
import os
import math

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))
from ncl_layout.camera import CameraModel
from ncl_layout.plucker import PluckerLine
from ncl_layout.layout import CornerSet, Layout, walls_from_polygon
from ncl_layout.synth import layout_from_polygon
from ncl_layout.metrics import direction_error, depth_error, corner_error, iou, \
    evaluate, EmptyCornerSet, DegeneratePolygon

# =============================================================================

SQUARE = np.array([(-2, -2), (2, -2), (2, 2), (-2, 2)], dtype=float)


def rotate(corners, angle):
    rotation = np.array([[math.cos(angle), -math.sin(angle)],
                         [math.sin(angle), math.cos(angle)]])
    return corners @ rotation.T


def test_direction_error():
    a = PluckerLine.from_point_direction((0, 2, 1), (1, 0, 0))
    b = PluckerLine.from_point_direction((2, 0, 1), (0, 1, 0))

    assert direction_error(a, a) == pytest.approx(0.0, abs=1e-6)
    assert direction_error(a, b) == pytest.approx(90.0)

    delta = math.radians(1.0)
    c = PluckerLine.from_point_direction((0, 2, 1), (math.cos(delta), math.sin(delta), 0))
    assert direction_error(c, a) == pytest.approx(1.0)

    # Orientation does not matter
    d = PluckerLine.from_point_direction((0, 2, 1), (-1, 0, 0))
    assert direction_error(d, a) == pytest.approx(0.0, abs=1e-6)


def test_depth_error():
    a = PluckerLine.from_point_direction((0, 2, 0), (1, 0, 0))
    b = PluckerLine.from_point_direction((0, 3, 0), (1, 0, 0))

    assert depth_error(a, b) == pytest.approx(1.0)

    scaled = PluckerLine(5.0 * a.l, 5.0 * a.lbar)
    assert depth_error(scaled, a) == pytest.approx(0.0, abs=1e-12)


def test_corner_error():
    gt = CornerSet.from_floorplan(SQUARE, 1.5, -1.5)

    assert corner_error(gt, gt) == 0.0

    shifted = CornerSet.from_floorplan(SQUARE + np.array([0.5, 0.0]), 1.5, -1.5)
    assert corner_error(shifted, gt) == pytest.approx(0.5)

    # Percentage of the (4, 4, 3) bounding box diagonal
    assert corner_error(shifted, gt, normalized=True) == \
        pytest.approx(50.0 / math.sqrt(41.0))

    # Extra predicted corners far away change nothing
    extra = CornerSet.from_floorplan(np.vstack([SQUARE + np.array([0.5, 0.0]),
                                                [(20.0, 20.0)]]), 1.5, -1.5)
    assert corner_error(extra, gt) == pytest.approx(0.5)

    with pytest.raises(EmptyCornerSet):
        corner_error(CornerSet.from_floorplan(np.zeros((0, 2)), 1.5, -1.5), gt)


def test_iou_2d():
    gt = layout_from_polygon(SQUARE, 1.5, -1.5)
    pred = layout_from_polygon(SQUARE + np.array([0.5, 0.0]), 1.5, -1.5)

    assert iou(gt, gt) == pytest.approx(100.0)

    # 3.5 x 4 over 4.5 x 4
    assert iou(pred, gt) == pytest.approx(100.0 * 14.0 / 18.0, abs=0.2)
    assert iou(gt, pred) == pytest.approx(iou(pred, gt))

    # Rotation of both polygons
    angle = math.radians(30.0)
    gt_rot = layout_from_polygon(rotate(SQUARE, angle), 1.5, -1.5)
    pred_rot = layout_from_polygon(rotate(SQUARE + np.array([0.5, 0.0]), angle), 1.5, -1.5)
    assert iou(pred_rot, gt_rot) == pytest.approx(100.0 * 14.0 / 18.0, abs=0.5)


def test_iou_3d():
    gt = layout_from_polygon(SQUARE, 2.0, -1.0)
    pred = layout_from_polygon(SQUARE + np.array([0.5, 0.0]), 1.0, -1.0)

    assert iou(pred, gt, "3d") == pytest.approx(iou(pred, gt, "2d") * 2.0 / 3.0)
    assert iou(gt, gt, "3d") == pytest.approx(100.0)


def test_iou_degenerate():
    gt = layout_from_polygon(SQUARE, 1.5, -1.5)

    bow = np.array([(-2, -2), (2, 2), (2, -2), (-2, 2)], dtype=float)
    pred = Layout(walls_from_polygon(bow, 1.5, -1.5), bow, 1.5, -1.5)

    with pytest.raises(DegeneratePolygon):
        iou(pred, gt)


def test_evaluate_identical():
    gt = layout_from_polygon(SQUARE, 1.5, -1.5)

    report = evaluate(gt, gt)
    assert report.ce_m == 0.0
    assert report.cen_pct == 0.0
    assert report.iou2d_pct == pytest.approx(100.0)
    assert report.iou3d_pct == pytest.approx(100.0)
    assert report.scale_err_pct == pytest.approx(0.0)
    assert not report.count_mismatch
    assert report.warnings == []

    # One ceiling and one floor line per wall
    assert len(report.dir_err_deg) == 8
    assert max(report.dir_err_deg) == pytest.approx(0.0, abs=1e-6)
    assert max(report.depth_err_m) == pytest.approx(0.0, abs=1e-12)

    row = report.to_row()
    assert row["dir_err_deg"] == pytest.approx(0.0, abs=1e-6)
    assert sorted(report.to_dict().keys()) == sorted(list(row.keys()) + ["warnings"])


def test_evaluate_warnings():
    gt = layout_from_polygon(SQUARE, 1.5, -1.5)
    gt.camera = CameraModel.default()

    pred = layout_from_polygon(SQUARE * 1.1, 1.6, -1.6)
    pred.camera = CameraModel(rc=0.5)

    report = evaluate(pred, gt)
    assert any(w.startswith("camera mismatch") for w in report.warnings)
    assert not report.count_mismatch
    assert report.scale_err_pct == pytest.approx(100.0 * 0.2 / 3.0)

    clipped = np.array([(-2, -2), (2, -2), (2, 1), (1, 2), (-2, 2)], dtype=float)
    report = evaluate(layout_from_polygon(clipped, 1.5, -1.5), gt)
    assert report.count_mismatch
    assert any(w.startswith("wall count mismatch") for w in report.warnings)
