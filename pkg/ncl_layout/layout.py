#!/usr/bin/env python3
"""
Data types exchanged between the pipeline stages and their file formats:
boundary maps (boundaries.csv), layouts (layout.json) and corner sets.
"""
import os
import json
import logging
import math

import numpy as np
import pandas as pd

from shapely.geometry import Polygon, LinearRing

from .errors import NclLayoutException, InputError
from .camera import CameraModel
from .solvers import Wall

# =============================================================================

# Column order of boundaries.csv
BOUNDARY_COLUMNS = ["col", "ceiling_row", "floor_row", "corner_score"]

# Corners must lie on both adjacent wall planes within this distance (m)
CORNER_TOL = 1e-6

# =============================================================================


class BoundaryMap():
    """
    Per-column boundary information of a panorama: the continuous row of the
    ceiling-wall edge, the row of the floor-wall edge and the corner score.
    Rows follow the camera numbering, so the ceiling row is the larger one.
    """

    class FormatError(InputError):
        """
        Malformed or inconsistent boundary data
        """
        pass

    def __init__(self, ceiling_row, floor_row, corner_score=None):

        ceiling_row = np.array(ceiling_row, dtype=float).reshape(-1)
        floor_row = np.array(floor_row, dtype=float).reshape(-1)
        if corner_score is None:
            corner_score = np.zeros_like(ceiling_row)
        corner_score = np.array(corner_score, dtype=float).reshape(-1)

        if not len(ceiling_row) == len(floor_row) == len(corner_score):
            raise BoundaryMap.FormatError(
                "Boundary arrays differ in length ({}, {}, {})".format(
                    len(ceiling_row), len(floor_row), len(corner_score)))

        for name, values in [("ceiling_row", ceiling_row),
                             ("floor_row", floor_row),
                             ("corner_score", corner_score)]:
            if not np.all(np.isfinite(values)):
                raise BoundaryMap.FormatError(
                    "Non-finite values in '{}'".format(name))

        bad = np.flatnonzero(~(ceiling_row > floor_row))
        if len(bad):
            raise BoundaryMap.FormatError(
                "Ceiling boundary not above the floor boundary in column {}".format(
                    bad[0]))

        self.ceiling_row = ceiling_row
        self.floor_row = floor_row
        self.corner_score = corner_score

    @property
    def cols(self):
        return len(self.ceiling_row)

    def __len__(self):
        return self.cols

    def copy(self):
        return BoundaryMap(self.ceiling_row, self.floor_row, self.corner_score)

    def check_camera(self, cam):
        """
        Checks that the map matches the camera resolution
        """
        if self.cols != cam.cols:
            raise BoundaryMap.FormatError(
                "Boundary map has {} columns, the camera {}".format(
                    self.cols, cam.cols))

        for name, values in [("ceiling_row", self.ceiling_row),
                             ("floor_row", self.floor_row)]:
            if np.any((values < 0.0) | (values > cam.rows)):
                raise BoundaryMap.FormatError(
                    "'{}' outside the {} image rows".format(name, cam.rows))

    # =========================================================================

    def to_dataframe(self):
        return pd.DataFrame({
            "col": np.arange(self.cols, dtype=int),
            "ceiling_row": self.ceiling_row,
            "floor_row": self.floor_row,
            "corner_score": self.corner_score,
        }, columns=BOUNDARY_COLUMNS)

    @staticmethod
    def from_dataframe(df):

        if list(df.columns) != BOUNDARY_COLUMNS:
            raise BoundaryMap.FormatError(
                "Unexpected boundary columns {}".format(list(df.columns)))

        if len(df) == 0:
            raise BoundaryMap.FormatError("Empty boundary map")

        try:
            values = df.astype(float)
        except (TypeError, ValueError) as ex:
            raise BoundaryMap.FormatError("Non-numeric boundary data: {}".format(ex))

        if not np.array_equal(values["col"].to_numpy(), np.arange(len(df))):
            raise BoundaryMap.FormatError("Columns are not numbered 0..{}".format(
                len(df) - 1))

        return BoundaryMap(
            values["ceiling_row"].to_numpy(),
            values["floor_row"].to_numpy(),
            values["corner_score"].to_numpy(),
        )

    @staticmethod
    def from_file(file_name):
        """
        Reads a boundaries.csv file
        """
        logging.info("Loading boundaries from '{}'".format(file_name))

        if not os.path.isfile(file_name):
            raise InputError("Boundary file '{}' not found".format(file_name))

        try:
            df = pd.read_csv(file_name)
        except (pd.errors.ParserError, pd.errors.EmptyDataError,
                UnicodeDecodeError) as ex:
            raise BoundaryMap.FormatError("Cannot parse '{}': {}".format(
                file_name, ex))

        return BoundaryMap.from_dataframe(df)

    def to_file(self, file_name):
        """
        Writes a boundaries.csv file
        """
        self.to_dataframe().to_csv(file_name, index=False, float_format="%.6f")

# =============================================================================


class CornerSet():
    """
    3D ceiling and floor corners, paired per vertical room edge
    """

    def __init__(self, ceiling, floor):
        self.ceiling = np.array(ceiling, dtype=float).reshape(-1, 3)
        self.floor = np.array(floor, dtype=float).reshape(-1, 3)
        assert self.ceiling.shape == self.floor.shape, \
            (self.ceiling.shape, self.floor.shape)

    @staticmethod
    def from_floorplan(corners, h_c, h_f):
        corners = np.array(corners, dtype=float).reshape(-1, 2)
        n = len(corners)
        ceiling = np.column_stack([corners, np.full(n, h_c)])
        floor = np.column_stack([corners, np.full(n, h_f)])
        return CornerSet(ceiling, floor)

    @property
    def points(self):
        """
        All corners as one (2N, 3) array, ceiling first
        """
        return np.concatenate([self.ceiling, self.floor], axis=0)

    def __len__(self):
        return len(self.ceiling)

    def __repr__(self):
        return "CornerSet({} edges)".format(len(self))

# =============================================================================


class Layout():
    """
    A single-room layout: cyclically ordered vertical walls sharing one
    ceiling and one floor plane. Corner k is the intersection of walls k-1
    and k, so wall k spans corners k and k+1. Corners run counter-clockwise.
    """

    WORLDS = ["manhattan", "atlanta"]

    class FormatError(InputError):
        """
        Malformed layout description
        """
        pass

    class InvalidGeometry(NclLayoutException):
        """
        The walls do not form a closed room
        """
        pass

    def __init__(self, walls, corners, h_c, h_f, occluded=None,
                 world="atlanta", camera=None, diagnostics=None):

        self.walls = [w.with_heights(h_c, h_f) for w in walls]
        self.corners = np.array(corners, dtype=float).reshape(-1, 2)
        self.h_c = float(h_c)
        self.h_f = float(h_f)

        if occluded is None:
            occluded = [False] * len(walls)
        self.occluded = [bool(o) for o in occluded]

        assert len(self.walls) == len(self.corners) == len(self.occluded), \
            (len(self.walls), len(self.corners), len(self.occluded))
        assert world in Layout.WORLDS, world

        self.world = world
        self.camera = camera
        self.diagnostics = diagnostics if diagnostics is not None else {}

    @staticmethod
    def from_walls(walls, h_c, h_f, occluded=None, world="atlanta",
                   camera=None, diagnostics=None):
        """
        Builds a layout from cyclically ordered walls, computing corner k as
        the intersection of walls k-1 and k.
        """

        n = len(walls)
        if n < 3:
            raise Layout.InvalidGeometry("A room needs at least 3 walls ({})".format(n))

        corners = [intersect_walls(walls[k - 1], walls[k]) for k in range(n)]
        return Layout(walls, corners, h_c, h_f, occluded, world, camera, diagnostics)

    def __len__(self):
        return len(self.walls)

    def polygon(self):
        return Polygon(self.corners)

    def corner_set(self):
        return CornerSet.from_floorplan(self.corners, self.h_c, self.h_f)

    def wall_segments(self):
        """
        Floor-plan end points (start, end) of every wall
        """
        n = len(self.corners)
        return [(self.corners[k], self.corners[(k + 1) % n]) for k in range(n)]

    def cast_rays(self, azimuths):
        """
        Casts horizontal rays from the vertical axis along the given azimuths
        and returns, per ray, the index of the first wall hit and its
        distance. Rays hitting nothing get index -1 and an infinite distance.
        """
        azimuths = np.atleast_1d(np.asarray(azimuths, dtype=float))
        dirs = np.column_stack([np.cos(azimuths), np.sin(azimuths)])

        starts = self.corners
        edges = np.roll(self.corners, -1, axis=0) - self.corners

        dx, dy = dirs[:, 0:1], dirs[:, 1:2]
        px, py = starts[None, :, 0], starts[None, :, 1]
        ex, ey = edges[None, :, 0], edges[None, :, 1]

        det = ex * dy - dx * ey
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ex * py - px * ey) / det
            s = (dx * py - dy * px) / det

        hit = (np.abs(det) > 1e-15) & (t > 1e-12) & \
            (s >= -1e-9) & (s <= 1.0 + 1e-9)
        t = np.where(hit, t, np.inf)

        index = np.argmin(t, axis=1)
        distance = t[np.arange(len(azimuths)), index]
        index = np.where(np.isfinite(distance), index, -1)

        return index, distance

    def is_simple(self):
        if len(self.corners) < 3:
            return False
        return LinearRing(self.corners).is_simple and self.polygon().is_valid

    def validation_errors(self):
        """
        Returns a list of violated layout invariants (empty when valid)
        """
        errors = []

        if not self.h_c > 0.0 > self.h_f:
            errors.append("heights h_c={} h_f={} do not bracket the camera".format(
                self.h_c, self.h_f))

        if not self.is_simple():
            errors.append("floor polygon is not simple")
        elif not self.polygon().exterior.is_ccw:
            errors.append("corners are not counter-clockwise")

        n = len(self.walls)
        for k in range(n):
            corner = self.corners[k]
            for wall in [self.walls[k - 1], self.walls[k]]:
                gap = abs(float(wall.plane_distance(corner)[0]))
                if gap > CORNER_TOL * max(1.0, np.linalg.norm(corner)):
                    errors.append("corner {} off its wall plane by {:.3e} m".format(
                        k, gap))

        if self.world == "manhattan":
            for k in range(n):
                if abs(np.dot(self.walls[k - 1].u, self.walls[k].u)) > 1e-6:
                    errors.append("walls {} and {} are not perpendicular".format(
                        (k - 1) % n, k))

        return errors

    def room_height(self):
        return self.h_c - self.h_f

    # =========================================================================

    def to_dict(self):
        data = {
            "h_c": self.h_c,
            "h_f": self.h_f,
            "corners": [[float(x), float(y)] for x, y in self.corners],
            "walls": [
                {"theta": w.theta, "d": w.d, "occluded": o}
                for w, o in zip(self.walls, self.occluded)
            ],
            "world": self.world,
        }

        if self.camera is not None:
            data["camera"] = self.camera.to_dict()
        if self.diagnostics:
            data["diagnostics"] = self.diagnostics

        return data

    @staticmethod
    def from_dict(data):

        try:
            h_c = float(data["h_c"])
            h_f = float(data["h_f"])
            corners = np.array(data["corners"], dtype=float).reshape(-1, 2)
            walls = [Wall.from_angle(float(w["theta"]), float(w["d"]), h_c, h_f)
                     for w in data["walls"]]
            occluded = [bool(w.get("occluded", False)) for w in data["walls"]]
            world = data.get("world", "atlanta")
        except (KeyError, TypeError, ValueError) as ex:
            raise Layout.FormatError("Invalid layout description: {}".format(ex))

        if len(walls) != len(corners):
            raise Layout.FormatError("{} walls but {} corners".format(
                len(walls), len(corners)))
        if world not in Layout.WORLDS:
            raise Layout.FormatError("Unknown world '{}'".format(world))

        camera = None
        if "camera" in data:
            camera = CameraModel.from_dict(data["camera"])

        return Layout(walls, corners, h_c, h_f, occluded, world, camera,
                      data.get("diagnostics", {}))

    @staticmethod
    def from_file(file_name):
        """
        Loads a layout.json file
        """
        logging.info("Loading layout from '{}'".format(file_name))

        if not os.path.isfile(file_name):
            raise InputError("Layout file '{}' not found".format(file_name))

        with open(file_name, "r") as fp:
            try:
                data = json.load(fp)
            except ValueError as ex:
                raise Layout.FormatError("Malformed layout file '{}': {}".format(
                    file_name, ex))

        return Layout.from_dict(data)

    def to_file(self, file_name):
        with open(file_name, "w") as fp:
            json.dump(self.to_dict(), fp, indent=2)
            fp.write("\n")

    def __repr__(self):
        return "Layout({}, {} walls, h_c={:.4f}, h_f={:.4f})".format(
            self.world, len(self.walls), self.h_c, self.h_f)

# =============================================================================


def intersect_walls(a, b):
    """
    Floor-plan intersection point of two wall planes
    """
    normals = np.array([a.normal, b.normal])
    det = np.linalg.det(normals)
    if abs(det) < 1e-12:
        raise Layout.InvalidGeometry("Consecutive walls are parallel ({}, {})".format(a, b))

    return np.linalg.solve(normals, np.array([a.d, b.d]))


def walls_from_polygon(corners, h_c, h_f):
    """
    Canonical walls along the edges of a floor polygon. Wall k runs from
    corner k to corner k+1.
    """

    corners = np.array(corners, dtype=float).reshape(-1, 2)
    n = len(corners)

    walls = []
    for k in range(n):
        p, q = corners[k], corners[(k + 1) % n]
        direction = q - p
        length = np.linalg.norm(direction)
        assert length > 0.0, (p, q)

        u = direction / length
        normal = np.array([-u[1], u[0]])
        walls.append(Wall(u, float(np.dot(normal, p)), h_c, h_f).canonical())

    return walls


def angle_difference(a, b, period=2.0 * math.pi):
    """
    Smallest signed difference a - b modulo the period
    """
    return (a - b + 0.5 * period) % period - 0.5 * period
