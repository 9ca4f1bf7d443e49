"""Points, tangent frames, and chart geometry on a sphere of radius L.

A point is stored as a unit direction vector plus the sphere radius; all
distances are arc lengths on the radius-L sphere. The chart at p maps tangent
coordinates X = (X1, X2) to the sphere point

    Psi_p(X) = X1 e1 + X2 e2 + sqrt(L^2 - |X|^2) * unit_p,

the inverse of orthogonal projection onto the tangent plane at p. Its inverse
is plain projection: X_i = <x, e_i>. Within |X| <= L/2 the chart distorts
distances by at most a factor 2.
"""

from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-12


class GeometryError(ValueError):
    pass


def _as_unit(vec):
    v = np.asarray(vec, dtype=float)
    if v.shape != (3,):
        raise GeometryError("expected a 3-vector, got shape %r" % (v.shape,))
    n = np.linalg.norm(v)
    if abs(n - 1.0) > _UNIT_TOL:
        raise GeometryError("direction must be unit length (|v| = %.3e)" % n)
    return v


@dataclass(frozen=True)
class SpherePoint:
    """A point on the sphere of radius ``radius_L``."""

    unit: np.ndarray
    radius_L: float

    def __post_init__(self):
        object.__setattr__(self, "unit", _as_unit(self.unit))
        if not self.radius_L > 0:
            raise GeometryError("radius_L must be positive")

    @classmethod
    def from_vector(cls, vec, radius_L):
        """Normalize an arbitrary nonzero 3-vector onto the sphere."""
        v = np.asarray(vec, dtype=float)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise GeometryError("cannot normalize the zero vector")
        return cls(v / n, float(radius_L))

    def distance(self, other):
        if abs(self.radius_L - other.radius_L) > _UNIT_TOL * max(1.0, self.radius_L):
            raise GeometryError("points live on spheres of different radius")
        c = float(np.clip(np.dot(self.unit, other.unit), -1.0, 1.0))
        return self.radius_L * np.arccos(c)

    def antipode(self):
        return SpherePoint(-self.unit, self.radius_L)

    @property
    def xyz(self):
        """Ambient coordinates (radius included)."""
        return self.unit * self.radius_L


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal tangent basis (e1, e2) at a base direction."""

    base: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        base = _as_unit(self.base)
        e1 = _as_unit(self.e1)
        e2 = _as_unit(self.e2)
        for a, b in ((e1, base), (e2, base), (e1, e2)):
            if abs(np.dot(a, b)) > 1e-12:
                raise GeometryError("frame vectors must be mutually orthogonal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "e1", e1)
        object.__setattr__(self, "e2", e2)

    def rotate_by(self, angle):
        """Rotate (e1, e2) within the tangent plane."""
        c, s = np.cos(angle), np.sin(angle)
        return TangentFrame(self.base, c * self.e1 + s * self.e2,
                            -s * self.e1 + c * self.e2)


def frame_at(unit):
    """Deterministic right-handed tangent frame at a unit direction.

    e2 = unit x e1, so (e1, e2, unit) is right-handed; chart orientation is
    counterclockwise seen from outside the sphere.
    """
    u = _as_unit(unit)
    axis = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, u)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return TangentFrame(u, e1, e2)


def theta_phi_frame(unit):
    """Colatitude/longitude orthonormal frame (e_theta, e_phi) at a point.

    Undefined at the coordinate poles; callers keep sin(theta) > 0.
    """
    u = _as_unit(unit)
    st = np.hypot(u[0], u[1])
    if st == 0.0:
        raise GeometryError("theta-phi frame undefined at the poles")
    cp, sp = u[0] / st, u[1] / st
    ct = u[2]
    e_theta = np.array([ct * cp, ct * sp, -st])
    e_phi = np.array([-sp, cp, 0.0])
    return e_theta, e_phi


def chart_point(point, frame, X):
    """Map tangent coordinates X to the sphere (inverse projection chart)."""
    L = point.radius_L
    x1, x2 = float(X[0]), float(X[1])
    r2 = x1 * x1 + x2 * x2
    if r2 >= L * L:
        raise GeometryError("chart coordinates leave the hemisphere")
    vec = x1 * frame.e1 + x2 * frame.e2 + np.sqrt(L * L - r2) * point.unit
    return SpherePoint(vec / L, L)


def chart_coords(point, frame, other):
    """Tangent coordinates of another sphere point (orthogonal projection)."""
    x = other.unit * other.radius_L
    return np.array([np.dot(x, frame.e1), np.dot(x, frame.e2)])


def rotation_matrix(axis, angle):
    """Rotation by ``angle`` about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise GeometryError("rotation axis must be nonzero")
    x, y, z = a / n
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def random_rotation(rng):
    """Haar-uniform random rotation (QR of a Gaussian matrix, sign-fixed)."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0.0:
        q[:, 0] = -q[:, 0]
    return q


def units_to_angles(units):
    """cos(theta), sin(theta), phi arrays for an (N, 3) array of directions."""
    u = np.atleast_2d(np.asarray(units, dtype=float))
    ct = np.clip(u[:, 2], -1.0, 1.0)
    st = np.hypot(u[:, 0], u[:, 1])
    ph = np.arctan2(u[:, 1], u[:, 0])
    return ct, st, ph
