#!/usr/bin/env python3
"""
Plücker line algebra. A line is stored as a direction l and a moment
lbar = p x l, p being any point of the line.
"""
import numpy as np

from .errors import NclLayoutException

# =============================================================================

# Relative singular value threshold of the four-ray rank test
RANK_RTOL = 1e-8

# Default coplanarity tolerance of intersect_coplanar_lines()
COPLANAR_TOL = 1e-6

# =============================================================================


class DegenerateRays(NclLayoutException):
    """
    The rays do not provide four independent constraints
    """
    pass


class NoRealSolution(NclLayoutException):
    """
    The line pencil does not meet the Plücker quadric in real points
    """
    pass


class ParallelLines(NclLayoutException):
    """
    The two lines are parallel
    """
    pass


class NotCoplanar(NclLayoutException):
    """
    The two lines are skew
    """
    pass

# =============================================================================


class PluckerLine():
    """
    A 3D line in Plücker coordinates (l, lbar). Projective: (l, lbar) and
    (s*l, s*lbar) denote the same line.
    """

    def __init__(self, l, lbar):
        self.l = np.array(l, dtype=float).reshape(3)
        self.lbar = np.array(lbar, dtype=float).reshape(3)
        assert np.linalg.norm(self.l) > 0.0, self.l

    @staticmethod
    def from_point_direction(point, direction):
        """
        Line through a point along a direction
        """
        direction = np.asarray(direction, dtype=float)
        point = np.asarray(point, dtype=float)
        return PluckerLine(direction, np.cross(point, direction))

    @staticmethod
    def from_points(p1, p2):
        """
        Line through two distinct points, directed from p1 to p2
        """
        return PluckerLine.from_point_direction(
            p1, np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float))

    @staticmethod
    def from_vector(vector):
        vector = np.asarray(vector, dtype=float).reshape(6)
        return PluckerLine(vector[:3], vector[3:])

    @property
    def vector(self):
        return np.concatenate([self.l, self.lbar])

    def normalized(self):
        """
        Returns the same line scaled to a unit direction
        """
        norm = np.linalg.norm(self.l)
        return PluckerLine(self.l / norm, self.lbar / norm)

    @property
    def direction(self):
        return self.l / np.linalg.norm(self.l)

    @property
    def depth(self):
        """
        Distance of the line to the origin
        """
        return np.linalg.norm(self.lbar) / np.linalg.norm(self.l)

    def closest_point_to_origin(self):
        return np.cross(self.l, self.lbar) / np.dot(self.l, self.l)

    def point_at(self, t):
        """
        Point of the line at signed distance t from its point closest to the
        origin
        """
        return self.closest_point_to_origin() + t * self.direction

    def quadric(self):
        """
        Plücker constraint value l . lbar, zero for real lines
        """
        return float(np.dot(self.l, self.lbar))

    def distance_to_point(self, point):
        point = np.asarray(point, dtype=float)
        base = self.closest_point_to_origin()
        return np.linalg.norm(np.cross(point - base, self.direction))

    def __repr__(self):
        return "PluckerLine(l={}, lbar={})".format(
            np.array2string(self.l, precision=6),
            np.array2string(self.lbar, precision=6))


class PluckerRay(PluckerLine):
    """
    A projecting ray. Always stored with a unit direction.
    """

    def __init__(self, xi, xibar):
        xi = np.array(xi, dtype=float).reshape(3)
        xibar = np.array(xibar, dtype=float).reshape(3)
        norm = np.linalg.norm(xi)
        assert norm > 0.0, xi
        super().__init__(xi / norm, xibar / norm)

    @property
    def xi(self):
        return self.l

    @property
    def xibar(self):
        return self.lbar

# =============================================================================


def side(a, b):
    """
    The side operator. Zero iff the two lines are coplanar.
    """
    return float(np.dot(a.l, b.lbar) + np.dot(a.lbar, b.l))


def line_from_four_rays(rays):
    """
    Computes the lines meeting four generic rays. Returns a list with zero,
    one or two unit-direction lines. The caller disambiguates.
    """

    assert len(rays) == 4, len(rays)

    # Each row evaluates side(ray, L) for L = (l, lbar)
    A = np.array([np.concatenate([ray.lbar, ray.l]) for ray in rays])

    _, s, vt = np.linalg.svd(A)
    if s[3] < RANK_RTOL * s[0]:
        raise DegenerateRays("Rays do not give four independent constraints "
                             "(singular values {})".format(s))

    n1 = vt[4]
    n2 = vt[5]

    # Restrict the Plücker quadric to the pencil alpha*n1 + beta*n2
    a = np.dot(n1[:3], n1[3:])
    b = np.dot(n1[:3], n2[3:]) + np.dot(n2[:3], n1[3:])
    c = np.dot(n2[:3], n2[3:])

    # Solve for the ratio with the larger leading coefficient
    if abs(a) >= abs(c):
        lead, mid, const = a, b, c
        first, second = n1, n2
    else:
        lead, mid, const = c, b, a
        first, second = n2, n1

    if lead == 0.0:
        raise DegenerateRays("Every line of the pencil satisfies the quadric")

    disc = mid * mid - 4.0 * lead * const
    if disc < -1e-12 * (mid * mid + abs(4.0 * lead * const)):
        raise NoRealSolution("Negative discriminant ({:.3e})".format(disc))

    disc = max(disc, 0.0)
    roots = [(-mid + np.sqrt(disc)) / (2.0 * lead)]
    if disc > 0.0:
        roots.append((-mid - np.sqrt(disc)) / (2.0 * lead))

    lines = []
    for t in roots:
        vector = t * first + second
        if np.linalg.norm(vector[:3]) < 1e-12 * np.linalg.norm(vector):
            # A line at infinity, not a real solution
            continue
        lines.append(PluckerLine.from_vector(vector).normalized())

    return lines


def _closest_parameter(line, other):
    """
    Returns the point of `line` nearest to `other`, together with the common
    normal and the offset between the two base points.
    """

    line = line.normalized()
    other = other.normalized()

    p1 = line.closest_point_to_origin()
    p2 = other.closest_point_to_origin()
    d1 = line.l
    d2 = other.l

    n = np.cross(d1, d2)
    nn = np.dot(n, n)
    if nn < 1e-18:
        raise ParallelLines("Lines are parallel")

    t = np.dot(np.cross(p2 - p1, d2), n) / nn
    return p1 + t * d1, n, p2 - p1


def closest_point_on_line_to_ray(line, ray):
    """
    The point of `line` nearest to `ray` in Euclidean distance
    """
    point, _, _ = _closest_parameter(line, ray)
    return point


def line_to_ray_distance(line, ray):
    """
    The Euclidean gap between a line and a non-parallel ray
    """
    _, n, offset = _closest_parameter(line, ray)
    return abs(np.dot(offset, n)) / np.linalg.norm(n)


def intersect_coplanar_lines(a, b, tol=COPLANAR_TOL):
    """
    The common point of two coplanar, non-parallel lines
    """

    a = a.normalized()
    b = b.normalized()

    scale = 1.0 + max(a.depth, b.depth)
    if abs(side(a, b)) / scale >= tol:
        raise NotCoplanar("Lines are skew (side={:.3e})".format(side(a, b)))

    point, _, _ = _closest_parameter(a, b)
    return point
