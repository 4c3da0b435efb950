#!/usr/bin/env python3
"""
Linear wall solvers. A wall is a vertical plane carrying two horizontal lines,
the ceiling line at height h_c and the floor line at height h_f. All solvers
stack side-operator constraints between those lines and the projecting rays
into a homogeneous system and read the solution from its null space.

Unknown vector layout of the single-wall and Manhattan systems:

  (u_x, u_y, v_x, v_y, w_x, w_y, d_1, ..., d_N),  v = h_c * u,  w = h_f * u

Unknown vector layout of the Atlanta system:

  (1, h_c, h_f, d_1, ..., d_N)
"""
import logging
import math

import numpy as np

from .errors import NclLayoutException
from .plucker import PluckerLine, PluckerRay
from .camera import backproject_pixels

# =============================================================================

# Relative singular value threshold of the rank tests
RANK_RTOL = 1e-8

# Below this magnitude (relative to the basis norms) a lambda quadratic
# coefficient is treated as zero
LINEAR_EPS = 1e-12

# Largest lambda gap between the two quadratics still reported as paired
PAIRING_TOL = 1e-6

# 90 degree rotation in the horizontal plane
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])

# =============================================================================


class RankDeficient(NclLayoutException):
    """
    The stacked constraint system does not determine the walls
    """
    pass


class NoValidRoot(NclLayoutException):
    """
    No lambda root gives a ceiling above the floor
    """
    pass


class ComplexRoots(NclLayoutException):
    """
    The parallelism quadratics have no real root
    """
    pass


class DehomogenizationFailure(NclLayoutException):
    """
    The first component of the Atlanta null vector vanishes
    """
    pass

# =============================================================================


class Wall():
    """
    A vertical wall. u is the unit horizontal direction of its ceiling and
    floor lines, d the signed distance of its plane to the origin measured
    along e2 = (-u_y, u_x). h_c and h_f are the ceiling and floor heights.
    """

    def __init__(self, u, d, h_c, h_f):
        u = np.array(u, dtype=float).reshape(2)
        norm = np.linalg.norm(u)
        assert norm > 0.0, u

        self.u = u / norm
        self.d = float(d)
        self.h_c = float(h_c)
        self.h_f = float(h_f)

    @staticmethod
    def from_angle(theta, d, h_c, h_f):
        return Wall((math.cos(theta), math.sin(theta)), d, h_c, h_f)

    @property
    def theta(self):
        return math.atan2(self.u[1], self.u[0])

    @property
    def e1(self):
        return np.array([self.u[0], self.u[1], 0.0])

    @property
    def e2(self):
        return np.array([-self.u[1], self.u[0], 0.0])

    @property
    def normal(self):
        """
        Horizontal unit normal e2 of the wall plane
        """
        return np.array([-self.u[1], self.u[0]])

    def canonical(self):
        """
        Returns the same wall oriented so that d >= 0 (facing the camera)
        """
        if self.d < 0.0:
            return Wall(-self.u, -self.d, self.h_c, self.h_f)
        return Wall(self.u, self.d, self.h_c, self.h_f)

    def with_heights(self, h_c, h_f):
        return Wall(self.u, self.d, h_c, h_f)

    def _line(self, height):
        e3 = np.array([0.0, 0.0, 1.0])
        return PluckerLine(self.e1, height * self.e2 - self.d * e3)

    def ceiling_line(self):
        return self._line(self.h_c)

    def floor_line(self):
        return self._line(self.h_f)

    def plane_distance(self, points):
        """
        Signed horizontal distance of (N, 2) points to the wall plane
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return points[:, :2] @ self.normal - self.d

    def radial_distance(self, azimuths):
        """
        Distance from the vertical axis at which the half-plane of each
        azimuth meets the wall plane. NaN when it does not.
        """
        azimuths = np.asarray(azimuths, dtype=float)
        sinv = np.sin(azimuths - self.theta)

        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.d / sinv

        return np.where((np.abs(sinv) > 1e-12) & (r > 0.0), r, np.nan)

    def predicted_rows(self, cam, azimuths):
        """
        Ceiling and floor boundary rows the wall produces in the columns
        looking along the given azimuths. NaN where the wall is not in front
        of the column's optical center.
        """
        r = self.radial_distance(azimuths)
        r = np.where(r > cam.rc + 1e-9, r, np.nan)
        depth = r - cam.rc

        ceiling = cam.elevation_to_row(np.arctan2(self.h_c, depth))
        floor = cam.elevation_to_row(np.arctan2(self.h_f, depth))
        return ceiling, floor

    def to_dict(self):
        return {"theta": self.theta, "d": self.d}

    def __repr__(self):
        return "Wall(theta={:.6f}, d={:.6f}, h_c={:.6f}, h_f={:.6f})".format(
            self.theta, self.d, self.h_c, self.h_f)


class RaySet():
    """
    Ceiling and floor projecting rays of one wall, stored as (N, 3) direction
    and moment arrays together with the columns they come from.
    """

    def __init__(self, ceiling_xi, ceiling_xibar, floor_xi, floor_xibar,
                 ceiling_columns=None, floor_columns=None):

        self.ceiling_xi = np.asarray(ceiling_xi, dtype=float).reshape(-1, 3)
        self.ceiling_xibar = np.asarray(ceiling_xibar, dtype=float).reshape(-1, 3)
        self.floor_xi = np.asarray(floor_xi, dtype=float).reshape(-1, 3)
        self.floor_xibar = np.asarray(floor_xibar, dtype=float).reshape(-1, 3)

        assert self.ceiling_xi.shape == self.ceiling_xibar.shape
        assert self.floor_xi.shape == self.floor_xibar.shape

        if ceiling_columns is None:
            ceiling_columns = np.full(len(self.ceiling_xi), -1)
        if floor_columns is None:
            floor_columns = np.full(len(self.floor_xi), -1)

        self.ceiling_columns = np.asarray(ceiling_columns, dtype=int)
        self.floor_columns = np.asarray(floor_columns, dtype=int)

    @staticmethod
    def empty():
        return RaySet(np.zeros((0, 3)), np.zeros((0, 3)),
                      np.zeros((0, 3)), np.zeros((0, 3)))

    @staticmethod
    def from_rays(ceiling, floor):
        """
        Builds a ray set from lists of PluckerRay objects
        """
        def stack(rays, attr):
            return np.array([getattr(r, attr) for r in rays]).reshape(-1, 3)

        return RaySet(stack(ceiling, "l"), stack(ceiling, "lbar"),
                      stack(floor, "l"), stack(floor, "lbar"))

    @staticmethod
    def from_columns(cam, bm, columns):
        """
        Backprojects the ceiling and floor boundaries of the given columns,
        one ray per line and column.
        """
        columns = np.asarray(columns, dtype=int)
        j = columns + 0.5

        c_xi, c_xibar = backproject_pixels(cam, bm.ceiling_row[columns], j)
        f_xi, f_xibar = backproject_pixels(cam, bm.floor_row[columns], j)

        return RaySet(c_xi, c_xibar, f_xi, f_xibar, columns, columns)

    def subset(self, index):
        """
        Ray set restricted to the paired ceiling/floor rays at `index`
        """
        assert len(self.ceiling_xi) == len(self.floor_xi), \
            (len(self.ceiling_xi), len(self.floor_xi))
        return RaySet(self.ceiling_xi[index], self.ceiling_xibar[index],
                      self.floor_xi[index], self.floor_xibar[index],
                      self.ceiling_columns[index], self.floor_columns[index])

    @property
    def ceiling(self):
        return [PluckerRay(a, b) for a, b in zip(self.ceiling_xi, self.ceiling_xibar)]

    @property
    def floor(self):
        return [PluckerRay(a, b) for a, b in zip(self.floor_xi, self.floor_xibar)]

    @property
    def is_empty(self):
        return len(self.ceiling_xi) == 0 and len(self.floor_xi) == 0

    def __len__(self):
        return len(self.ceiling_xi) + len(self.floor_xi)


class WallSolution():
    """
    Result of the single-wall solver together with its diagnostics
    """

    def __init__(self, wall, lam, basis, residual, roots=None,
                 pairing_gap=None, singular_values=None):
        self.wall = wall
        self.lam = lam
        self.basis = basis
        self.residual = residual
        self.roots = roots or {}
        self.pairing_gap = pairing_gap
        self.singular_values = singular_values

        # Filled in by the RANSAC stage
        self.columns = None
        self.inliers = None
        self.segment = None

    def __repr__(self):
        return "WallSolution({}, lambda={:.6g}, rms={:.3e})".format(
            self.wall, self.lam, self.residual)


class ManhattanSolution():
    """
    Joint Manhattan solution: one axis direction u, shared heights and one
    wall per input ray set (None for ray sets left empty).
    """

    def __init__(self, u, h_c, h_f, d, walls, residual, lam, basis):
        self.u = u
        self.h_c = h_c
        self.h_f = h_f
        self.d = d
        self.walls = walls
        self.residual = residual
        self.lam = lam
        self.basis = basis


class AtlantaSolution():
    """
    Joint Atlanta solution: shared heights and per-wall distances for known
    wall directions.
    """

    def __init__(self, h_c, h_f, d, walls, residual, singular_values):
        self.h_c = h_c
        self.h_f = h_f
        self.d = d
        self.walls = walls
        self.residual = residual
        self.singular_values = singular_values

# =============================================================================


def _side_coefficients(xi, xibar, rotation):
    """
    Linear side-constraint coefficients of rays against a horizontal line
    whose direction is rotation @ u. Returns the coefficients multiplying u,
    the height-scaled direction (v or w) and the wall distance.
    """
    coef_u = xibar[:, :2] @ rotation
    coef_h = xi[:, :2] @ rotation @ ROT90
    coef_d = -xi[:, 2]
    return coef_u, coef_h, coef_d


def _normalize_rows(A):
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0.0] = 1.0
    return A / norms[:, None]


def _null_basis(A, size):
    """
    Right singular vectors of the `size` smallest singular values, smallest
    first, and the singular values padded to the number of unknowns. The
    null space may have up to `size` dimensions, RankDeficient is raised
    when it is larger.
    """
    ncols = A.shape[1]
    if A.shape[0] < ncols - size:
        raise RankDeficient("Only {} constraints for {} unknowns".format(
            A.shape[0], ncols))

    _, s, vt = np.linalg.svd(A, full_matrices=True)

    s_full = np.zeros(ncols)
    s_full[:len(s)] = s
    rank = int(np.sum(s_full > RANK_RTOL * s_full[0]))
    if rank < ncols - size:
        raise RankDeficient("Constraint rank {} < {}".format(rank, ncols - size))

    basis = np.array([vt[-1 - k] for k in range(size)])
    return basis, s_full


def null_dimension(singular_values):
    """
    Numerical null space dimension from padded singular values
    """
    s = np.asarray(singular_values, dtype=float)
    return int(np.sum(s <= RANK_RTOL * s[0]))


def _cross2(p, q):
    return p[0] * q[1] - p[1] * q[0]


def _parallel_quadratic(w0, w1, sl):
    """
    Coefficients (a, b, c) of cross(u(lambda), x(lambda)) = 0 where x is the
    height-scaled direction stored at slice `sl`.
    """
    u0, u1 = w0[0:2], w1[0:2]
    x0, x1 = w0[sl], w1[sl]
    a = _cross2(u1, x1)
    b = _cross2(u0, x1) + _cross2(u1, x0)
    c = _cross2(u0, x0)
    return a, b, c


def _real_roots(a, b, c, eps=LINEAR_EPS):
    """
    Real roots of a*x^2 + b*x + c. Returns (roots, status) where status is
    "ok", "complex" (negative discriminant), "none" (a nonzero constant) or
    "degenerate" (every x is a root).
    """
    if abs(a) < eps:
        if abs(b) < eps:
            if abs(c) < eps:
                return [], "degenerate"
            return [], "none"
        return [-c / b], "ok"

    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        # Tangency lost to round-off
        if disc > -1e-12 * (b * b + abs(4.0 * a * c)):
            return [-b / (2.0 * a)], "ok"
        return [], "complex"

    sq = math.sqrt(disc)
    # Numerically stable pair
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a]
    if q != 0.0:
        roots.append(c / q)
    else:
        roots.append(-b / (2.0 * a))
    return roots, "ok"


def _lambda_candidates(basis, singular_values):
    """
    Solves both parallelism quadratics and returns the candidate lambdas, the
    root sets and the gap of the best-paired roots. lambda = 0 is a candidate
    whenever the null space is one-dimensional, basis[0] is then the
    solution itself.
    """
    w0, w1 = basis[0], basis[1]
    eps = LINEAR_EPS * np.linalg.norm(w0) * np.linalg.norm(w1)

    roots_v, status_v = _real_roots(*_parallel_quadratic(w0, w1, slice(2, 4)), eps=eps)
    roots_w, status_w = _real_roots(*_parallel_quadratic(w0, w1, slice(4, 6)), eps=eps)

    candidates = list(roots_v) + list(roots_w)
    pairing_gap = None

    for rv in roots_v:
        if not roots_w:
            break
        rw = min(roots_w, key=lambda r: abs(r - rv))
        gap = abs(rv - rw)
        if pairing_gap is None or gap < pairing_gap:
            pairing_gap = gap
        candidates.append(0.5 * (rv + rw))

    if status_v == "degenerate" and status_w == "degenerate":
        pairing_gap = 0.0

    if null_dimension(singular_values) <= 1 or \
       (not candidates and "complex" not in (status_v, status_w)):
        candidates.append(0.0)

    if not candidates:
        raise ComplexRoots("No real lambda root (v: {}, w: {})".format(
            status_v, status_w))

    roots = {"v": roots_v, "w": roots_w}
    return candidates, roots, pairing_gap


def _check_pairing(lam, roots, pairing_gap):
    if pairing_gap is not None and pairing_gap > PAIRING_TOL * max(1.0, abs(lam)):
        logging.debug("Unpaired lambda roots, gap {:.3e} (v: {}, w: {})".format(
            pairing_gap, roots["v"], roots["w"]))


def _heights_from_vector(vector):
    """
    Extracts (u, h_c, h_f, scale) from a (u, v, w, ...) vector. Returns None
    when the direction part vanishes.
    """
    u_raw = vector[0:2]
    nu2 = float(np.dot(u_raw, u_raw))
    if nu2 < 1e-24:
        return None

    h_c = float(np.dot(vector[2:4], u_raw) / nu2)
    h_f = float(np.dot(vector[4:6], u_raw) / nu2)
    scale = math.sqrt(nu2)
    return u_raw / scale, h_c, h_f, scale


def side_residuals(wall, rays):
    """
    Side-operator values between the wall lines and the rays of a ray set
    """
    ceiling = wall.ceiling_line()
    floor = wall.floor_line()

    res_c = rays.ceiling_xi @ ceiling.lbar + rays.ceiling_xibar @ ceiling.l
    res_f = rays.floor_xi @ floor.lbar + rays.floor_xibar @ floor.l
    return np.concatenate([res_c, res_f])


def _rms(values):
    values = np.concatenate([np.atleast_1d(v) for v in values]) \
        if values else np.zeros(0)
    if len(values) == 0:
        return 0.0
    return float(np.sqrt(np.mean(values ** 2)))

# =============================================================================


def extract_wall(rays):
    """
    Single vertical wall from at least 3 ceiling and 3 floor rays
    """

    n_c = len(rays.ceiling_xi)
    n_f = len(rays.floor_xi)
    if n_c < 3 or n_f < 3:
        raise RankDeficient("Need at least 3 rays per line ({} / {})".format(
            n_c, n_f))

    A = np.zeros((n_c + n_f, 7))

    cu, cv, cd = _side_coefficients(rays.ceiling_xi, rays.ceiling_xibar, np.eye(2))
    A[:n_c, 0:2] = cu
    A[:n_c, 2:4] = cv
    A[:n_c, 6] = cd

    fu, fw, fd = _side_coefficients(rays.floor_xi, rays.floor_xibar, np.eye(2))
    A[n_c:, 0:2] = fu
    A[n_c:, 4:6] = fw
    A[n_c:, 6] = fd

    basis, s = _null_basis(_normalize_rows(A), 2)
    candidates, roots, pairing_gap = _lambda_candidates(basis, s)

    best = None
    for lam in candidates:
        vector = basis[0] + lam * basis[1]

        heights = _heights_from_vector(vector)
        if heights is None:
            continue

        u, h_c, h_f, scale = heights
        if not h_c > h_f:
            continue

        wall = Wall(u, vector[6] / scale, h_c, h_f).canonical()
        residual = _rms([side_residuals(wall, rays)])

        if best is None or residual < best[1]:
            best = (wall, residual, lam)

    if best is None:
        raise NoValidRoot("No lambda root with h_c > h_f (roots {})".format(roots))

    wall, residual, lam = best
    _check_pairing(lam, roots, pairing_gap)
    logging.debug("Wall {}, lambda={:.6g}, rms={:.3e}".format(wall, lam, residual))

    return WallSolution(wall, lam, basis, residual, roots, pairing_gap, s)


def solve_manhattan(walls, labels):
    """
    Joint Manhattan solver. Walls labelled 0 run along the axis u, walls
    labelled 1 along its perpendicular. Empty ray sets (occluded walls) are
    carried through with a None wall and a NaN distance.
    """

    assert len(walls) == len(labels), (len(walls), len(labels))

    visible = [k for k, rays in enumerate(walls) if not rays.is_empty]
    if not visible:
        raise RankDeficient("No wall with rays")

    ncols = 6 + len(visible)
    blocks = []

    for index, k in enumerate(visible):
        rays = walls[k]
        rotation = np.eye(2) if labels[k] == 0 else ROT90

        for xi, xibar, sl in [
            (rays.ceiling_xi, rays.ceiling_xibar, slice(2, 4)),
            (rays.floor_xi, rays.floor_xibar, slice(4, 6)),
        ]:
            block = np.zeros((len(xi), ncols))
            coef_u, coef_h, coef_d = _side_coefficients(xi, xibar, rotation)
            block[:, 0:2] = coef_u
            block[:, sl] = coef_h
            block[:, 6 + index] = coef_d
            blocks.append(block)

    A = np.concatenate(blocks, axis=0)
    basis, s = _null_basis(_normalize_rows(A), 2)
    candidates, roots, pairing_gap = _lambda_candidates(basis, s)

    best = None
    for lam in candidates:
        vector = basis[0] + lam * basis[1]

        heights = _heights_from_vector(vector)
        if heights is None:
            continue

        u, h_c, h_f, scale = heights
        if not h_c > h_f:
            continue

        solved = [None] * len(walls)
        residuals = []
        for index, k in enumerate(visible):
            direction = u if labels[k] == 0 else ROT90 @ u
            wall = Wall(direction, vector[6 + index] / scale, h_c, h_f)
            solved[k] = wall.canonical()
            residuals.append(side_residuals(solved[k], walls[k]))

        residual = _rms(residuals)
        if best is None or residual < best[1]:
            best = (solved, residual, lam, u, h_c, h_f)

    if best is None:
        raise NoValidRoot("No lambda root with h_c > h_f (roots {})".format(roots))

    solved, residual, lam, u, h_c, h_f = best
    _check_pairing(lam, roots, pairing_gap)
    d = [w.d if w is not None else float("nan") for w in solved]

    logging.debug("Manhattan u=({:.6f}, {:.6f}), h_c={:.6f}, h_f={:.6f}, rms={:.3e}".format(
        u[0], u[1], h_c, h_f, residual))

    return ManhattanSolution(u, h_c, h_f, d, solved, residual, lam, basis)


def solve_atlanta(walls, directions):
    """
    Joint Atlanta solver for walls of known horizontal directions
    """

    assert len(walls) == len(directions), (len(walls), len(directions))
    if not walls:
        raise RankDeficient("No wall given")

    n = len(walls)
    ncols = 3 + n
    blocks = []
    units = []

    for k, (rays, direction) in enumerate(zip(walls, directions)):
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        units.append(u)

        if len(rays.ceiling_xi) < 1 or len(rays.floor_xi) < 1:
            raise RankDeficient("Wall {} lacks ceiling or floor rays".format(k))

        e1 = np.array([u[0], u[1], 0.0])
        e2 = np.array([-u[1], u[0], 0.0])

        for xi, xibar, column in [
            (rays.ceiling_xi, rays.ceiling_xibar, 1),
            (rays.floor_xi, rays.floor_xibar, 2),
        ]:
            # Rays expressed in the wall frame
            block = np.zeros((len(xi), ncols))
            block[:, 0] = xibar @ e1
            block[:, column] = xi @ e2
            block[:, 3 + k] = -xi[:, 2]
            blocks.append(block)

    A = np.concatenate(blocks, axis=0)
    basis, s = _null_basis(_normalize_rows(A), 1)
    vector = basis[0]

    if abs(vector[0]) < 1e-12 * np.linalg.norm(vector):
        raise DehomogenizationFailure(
            "First null-vector component vanishes ({:.3e})".format(vector[0]))

    vector = vector / vector[0]
    h_c, h_f = float(vector[1]), float(vector[2])

    solved = []
    residuals = []
    for k, u in enumerate(units):
        wall = Wall(u, vector[3 + k], h_c, h_f).canonical()
        solved.append(wall)
        residuals.append(side_residuals(wall, walls[k]))

    residual = _rms(residuals)
    d = [w.d for w in solved]

    logging.debug("Atlanta h_c={:.6f}, h_f={:.6f}, rms={:.3e}".format(
        h_c, h_f, residual))

    return AtlantaSolution(h_c, h_f, d, solved, residual, s)
