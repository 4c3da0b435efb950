#!/usr/bin/env python3
"""
Non-central circular panorama camera model. Optical centers lie on a
horizontal circle of radius Rc around the vertical axis; every image column is
locally central.
"""
import os
import json
import logging
import math

import numpy as np

from .errors import NclLayoutException, InputError
from .plucker import PluckerRay

# =============================================================================

# Tolerance used when range-checking angles against the fields of view
ANGLE_EPS = 1e-12

# =============================================================================


class PixelCoord():
    """
    A continuous pixel coordinate. Sub-pixel values are legal.
    """

    def __init__(self, i, j):
        self.i = float(i)
        self.j = float(j)

    def __iter__(self):
        yield self.i
        yield self.j

    def __repr__(self):
        return "PixelCoord(i={:.6f}, j={:.6f})".format(self.i, self.j)


class CameraModel():
    """
    Immutable description of a non-central circular panorama: optical-center
    circle radius, image resolution and fields of view.
    """

    class InsideCircle(NclLayoutException):
        """
        The point lies at or inside the optical-center circle
        """
        pass

    class OutOfView(NclLayoutException):
        """
        The projection angles fall outside the configured field of view
        """
        pass

    class OutOfBounds(NclLayoutException):
        """
        Pixel coordinates outside the image
        """
        pass

    def __init__(self, rc=1.0, rows=512, cols=1024,
                 phi=(-math.pi / 2, math.pi / 2),
                 varphi=(-math.pi, math.pi)):

        rc = float(rc)
        rows = int(rows)
        cols = int(cols)
        phi_ini, phi_end = (float(v) for v in phi)
        varphi_ini, varphi_end = (float(v) for v in varphi)

        if rc < 0.0:
            raise InputError("Camera radius must be non-negative ({})".format(rc))
        if rows < 2 or cols < 2:
            raise InputError("Image resolution too small ({}x{})".format(
                rows, cols))
        if not (-math.pi / 2 - ANGLE_EPS <= phi_ini < phi_end <= math.pi / 2 + ANGLE_EPS):
            raise InputError("Invalid vertical field of view [{}, {}]".format(
                phi_ini, phi_end))
        if not varphi_ini < varphi_end or \
           varphi_end - varphi_ini > 2.0 * math.pi + 1e-9:
            raise InputError("Invalid horizontal field of view [{}, {}]".format(
                varphi_ini, varphi_end))

        self._rc = rc
        self._rows = rows
        self._cols = cols
        self._phi = (phi_ini, phi_end)
        self._varphi = (varphi_ini, varphi_end)

    # Read-only accessors, the model never changes after construction
    @property
    def rc(self):
        return self._rc

    @property
    def rows(self):
        return self._rows

    @property
    def cols(self):
        return self._cols

    @property
    def phi(self):
        return self._phi

    @property
    def varphi(self):
        return self._varphi

    @property
    def full_panorama(self):
        """
        True when the horizontal field of view covers the whole circle. Column
        adjacency is then cyclic.
        """
        span = self._varphi[1] - self._varphi[0]
        return abs(span - 2.0 * math.pi) < 1e-9

    @staticmethod
    def default():
        """
        The default camera: Rc=1 m, 512x1024, full vertical and horizontal
        field of view.
        """
        return CameraModel()

    def scaled(self, factor):
        """
        Returns the same camera with the optical-center circle scaled
        """
        return CameraModel(self._rc * factor, self._rows, self._cols,
                           self._phi, self._varphi)

    # =========================================================================

    def elevation_to_row(self, phi):
        phi_ini, phi_end = self._phi
        return self._rows * (np.asarray(phi) - phi_ini) / (phi_end - phi_ini)

    def row_to_elevation(self, i):
        phi_ini, phi_end = self._phi
        return np.asarray(i) * (phi_end - phi_ini) / self._rows + phi_ini

    def azimuth_to_col(self, varphi):
        varphi_ini, varphi_end = self._varphi
        return self._cols * (np.asarray(varphi) - varphi_ini) / \
            (varphi_end - varphi_ini)

    def col_to_azimuth(self, j):
        varphi_ini, varphi_end = self._varphi
        return np.asarray(j) * (varphi_end - varphi_ini) / self._cols + \
            varphi_ini

    def column_azimuths(self):
        """
        Azimuth sampled by every integer column (pixel-centre convention,
        column j samples the continuous coordinate j + 0.5).
        """
        return self.col_to_azimuth(np.arange(self._cols) + 0.5)

    def wrap_azimuth(self, varphi):
        """
        Brings azimuths into [varphi_ini, varphi_ini + 2*pi)
        """
        varphi_ini = self._varphi[0]
        return varphi_ini + np.mod(np.asarray(varphi) - varphi_ini, 2.0 * math.pi)

    # =========================================================================

    def to_dict(self):
        return {
            "rc": self._rc,
            "rows": self._rows,
            "cols": self._cols,
            "phi": list(self._phi),
            "varphi": list(self._varphi),
        }

    @staticmethod
    def from_dict(data):
        try:
            return CameraModel(
                rc=data["rc"],
                rows=data["rows"],
                cols=data["cols"],
                phi=data["phi"],
                varphi=data["varphi"],
            )
        except (KeyError, TypeError, ValueError) as ex:
            raise InputError("Invalid camera description: {}".format(ex))

    @staticmethod
    def from_file(file_name):
        """
        Loads a camera.json file
        """
        logging.info("Loading camera from '{}'".format(file_name))

        if not os.path.isfile(file_name):
            raise InputError("Camera file '{}' not found".format(file_name))

        with open(file_name, "r") as fp:
            try:
                data = json.load(fp)
            except ValueError as ex:
                raise InputError("Malformed camera file '{}': {}".format(
                    file_name, ex))

        return CameraModel.from_dict(data)

    def to_file(self, file_name):
        with open(file_name, "w") as fp:
            json.dump(self.to_dict(), fp, indent=2)
            fp.write("\n")

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self._rc, self._rows, self._cols, self._phi, self._varphi))

    def __repr__(self):
        return "CameraModel(rc={}, rows={}, cols={}, phi={}, varphi={})".format(
            self._rc, self._rows, self._cols, self._phi, self._varphi)

# =============================================================================


def project_points(cam, points):
    """
    Forward projection of an (N, 3) or (N, 4) array of points. Returns the
    continuous row and column arrays.
    """

    points = np.atleast_2d(np.asarray(points, dtype=float))
    assert points.shape[1] in [3, 4], points.shape

    if points.shape[1] == 3:
        x, y, z = points.T
        w = np.ones_like(x)
    else:
        # A homogeneous point and its negation are the same point
        sign = np.where(points[:, 3] < 0.0, -1.0, 1.0)
        x, y, z, w = (points * sign[:, None]).T

    if np.any((x == 0) & (y == 0) & (z == 0) & (w == 0)):
        raise InputError("The null vector is not a homogeneous point")

    r = np.hypot(x, y)
    if np.any(r <= w * cam.rc):
        raise CameraModel.InsideCircle(
            "Point at or inside the optical-center circle (Rc={})".format(cam.rc))

    phi = np.arctan2(z, r - w * cam.rc)
    varphi = np.arctan2(y, x)

    if cam.full_panorama:
        varphi = cam.wrap_azimuth(varphi)
    else:
        varphi_ini, varphi_end = cam.varphi
        if np.any((varphi < varphi_ini - ANGLE_EPS) | (varphi > varphi_end + ANGLE_EPS)):
            raise CameraModel.OutOfView("Azimuth outside the horizontal field of view")

    phi_ini, phi_end = cam.phi
    if np.any((phi < phi_ini - ANGLE_EPS) | (phi > phi_end + ANGLE_EPS)):
        raise CameraModel.OutOfView("Elevation outside the vertical field of view")

    return cam.elevation_to_row(phi), cam.azimuth_to_col(varphi)


def project_point(cam, p):
    """
    Forward projection of a single homogeneous point (x, y, z, w)
    """
    p = np.asarray(p, dtype=float)
    i, j = project_points(cam, p.reshape(1, -1))
    return PixelCoord(i[0], j[0])


def backproject_pixels(cam, i, j):
    """
    Backward projection of arrays of continuous pixel coordinates. Returns the
    (N, 3) unit directions and (N, 3) moments of the projecting rays.
    """

    i = np.atleast_1d(np.asarray(i, dtype=float))
    j = np.atleast_1d(np.asarray(j, dtype=float))
    assert i.shape == j.shape, (i.shape, j.shape)

    if np.any((i < 0.0) | (i > cam.rows) | (j < 0.0) | (j > cam.cols)) or \
       not np.all(np.isfinite(i)) or not np.all(np.isfinite(j)):
        raise CameraModel.OutOfBounds(
            "Pixel outside the {}x{} image".format(cam.rows, cam.cols))

    phi = cam.row_to_elevation(i)
    varphi = cam.col_to_azimuth(j)

    cphi, sphi = np.cos(phi), np.sin(phi)
    cvar, svar = np.cos(varphi), np.sin(varphi)

    xi = np.stack([cphi * cvar, cphi * svar, sphi], axis=-1)
    xibar = np.stack([
        cam.rc * sphi * svar,
        -cam.rc * sphi * cvar,
        np.zeros_like(phi)
    ], axis=-1)

    return xi, xibar


def backproject_pixel(cam, px):
    """
    Projecting ray of a single pixel as a PluckerRay
    """
    i, j = px
    xi, xibar = backproject_pixels(cam, [i], [j])
    return PluckerRay(xi[0], xibar[0])


def optical_centers(cam, azimuths):
    """
    Optical centers (N, 3) of the columns looking along the given azimuths
    """
    azimuths = np.asarray(azimuths, dtype=float)
    return np.stack([
        cam.rc * np.cos(azimuths),
        cam.rc * np.sin(azimuths),
        np.zeros_like(azimuths)
    ], axis=-1)
