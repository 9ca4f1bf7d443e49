"""Shared oracles for the test suite.

Everything here is an independent route to the quantity under test: finite
differences for jets, and exact linear maps (coefficients to observables,
built by evaluating unit-coefficient fields) for covariance checks.
"""

import numpy as np

from nodalstats.field import Jet2, coeff_order, unpack_coeffs
from nodalstats.geometry import chart_point, frame_at


def random_units(rng, n):
    u = rng.standard_normal((n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def fd_jet(sample, p, frame, h):
    """Central finite differences of the chart composition, step h."""

    def F(x1, x2):
        q = chart_point(p, frame, np.array([x1, x2]))
        return sample.value_at(q)

    f0 = F(0.0, 0.0)
    g = np.array([(F(h, 0) - F(-h, 0)) / (2 * h),
                  (F(0, h) - F(0, -h)) / (2 * h)])
    hxx = (F(h, 0) - 2 * f0 + F(-h, 0)) / h ** 2
    hyy = (F(0, h) - 2 * f0 + F(0, -h)) / h ** 2
    hxy = (F(h, h) - F(h, -h) - F(-h, h) + F(-h, -h)) / (4 * h ** 2)
    return f0, g, np.array([[hxx, hxy], [hxy, hyy]])


def observable_operator(spec, observables):
    """Exact linear map packed coefficients -> observables.

    ``observables`` is a list of callables FieldSample -> float. The map is
    exact because every observable used in tests is linear in the
    coefficients.
    """
    n = len(coeff_order(spec))
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        s = unpack_coeffs(spec, e)
        cols.append([obs(s) for obs in observables])
    return np.array(cols).T


def jet_observables(points_frames):
    """Observables (value, grad1, grad2) per (point, frame) pair."""
    obs = []
    for p, fr in points_frames:
        obs.append(lambda s, p=p, fr=fr: s.jet(p, fr).value)
        obs.append(lambda s, p=p, fr=fr: s.jet(p, fr).grad[0])
        obs.append(lambda s, p=p, fr=fr: s.jet(p, fr).grad[1])
    return obs


def force_small_value(f, g, kind="saddle", target=0.0, iters=8):
    """Real-ensemble sample with one critical point's value driven to target.

    Newton iteration on the mixing weight c of ``f - c g``: each step
    relocates the tracked critical point (nearest of the right kind) and
    updates c by its value over g there.  Returns ``(sample, point)`` with
    ``point.value - target`` at Newton-limit accuracy.  The result is a
    plain coefficient combination, so every downstream tool treats it as an
    ordinary sample.
    """
    from nodalstats.critical import find_critical_points
    from nodalstats.field import FieldSample

    pts = find_critical_points(f)
    p0 = min((p for p in pts if p.kind == kind), key=lambda p: abs(p.value))
    c = 0.0
    cur = f
    track = p0
    for _ in range(iters):
        pts_c = find_critical_points(cur)
        track = min(
            (p for p in pts_c if p.kind == kind),
            key=lambda p: float(np.arccos(np.clip(
                p.location.unit @ p0.location.unit, -1.0, 1.0))))
        gv = float(g.values(track.location.unit[None, :])[0])
        if abs(track.value - target) < 1e-12:
            break
        c += (track.value - target) / gv
        cur = FieldSample(spec=f.spec, coeffs=f.coeffs - c * g.coeffs,
                          seed=("forced", kind, target))
    if not abs(track.value - target) < 1e-8:
        raise RuntimeError(
            "value forcing did not converge (start too far from target); "
            "reached %.3e" % (track.value,))
    return cur, track


class _DuckSpec:
    """Minimal stand-in for an ensemble spec on a hand-built field."""

    def __init__(self, mean_degree, grad_sigma2, radius):
        self.mean_degree = float(mean_degree)
        self.grad_sigma2 = float(grad_sigma2)
        self.radius_L = float(radius)
        self.wavelength_angle = (2.0 * np.pi
                                 / np.sqrt(mean_degree * (mean_degree + 1.0)))


class PolyField:
    """Deterministic test field: an explicit function of the unit vector.

    ``value_fn``, ``grad_fn`` and ``hess_fn`` are the unconstrained ambient
    derivatives of the defining function P; the restriction to the sphere
    (tangential projection, chart Hessian with the curvature term) is done
    here.  Exposes the same evaluation surface as a real sample, so grids,
    censuses, critical-point search, and curve tracing all run on it.
    """

    def __init__(self, value_fn, grad_fn, hess_fn, *, mean_degree=2.0,
                 grad_sigma2=1.0, radius=1.0, lmax=2):
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._hess_fn = hess_fn
        self.spec = _DuckSpec(mean_degree, grad_sigma2, radius)
        self.lmax = int(lmax)
        self._cache = {}

    @property
    def radius_L(self):
        return self.spec.radius_L

    def values(self, units):
        u = np.atleast_2d(np.asarray(units, dtype=float))
        return self._value_fn(u)

    def value_at(self, point):
        return float(self.values(point.unit[None, :])[0])

    def gradients(self, units):
        u = np.atleast_2d(np.asarray(units, dtype=float))
        g = self._grad_fn(u)
        g_tan = g - np.einsum("ij,ij->i", g, u)[:, None] * u
        return g_tan / self.radius_L

    def jet(self, point, frame=None):
        if frame is None:
            frame = frame_at(point.unit)
        u = point.unit
        L = self.radius_L
        val = float(self._value_fn(u[None, :])[0])
        g = self._grad_fn(u[None, :])[0]
        H = self._hess_fn(u[None, :])[0]
        grad = np.array([g @ frame.e1, g @ frame.e2]) / L
        gn = g @ u
        hess = np.empty((2, 2))
        for i, ei in enumerate((frame.e1, frame.e2)):
            for j, ej in enumerate((frame.e1, frame.e2)):
                hess[i, j] = (ei @ H @ ej - (1.0 if i == j else 0.0) * gn) \
                    / L ** 2
        return Jet2(value=val, grad=grad, hess=hess)

    def rotated(self, R):
        """The same field composed with a rotation of the sphere."""
        R = np.asarray(R, dtype=float)
        return PolyField(
            lambda u: self._value_fn(u @ R.T),
            lambda u: self._grad_fn(u @ R.T) @ R,
            lambda u: np.einsum("ki,nkl,lj->nij", R, self._hess_fn(u @ R.T), R),
            mean_degree=self.spec.mean_degree,
            grad_sigma2=self.spec.grad_sigma2,
            radius=self.spec.radius_L, lmax=self.lmax)

    def third_derivative_scale(self, units):
        u = np.atleast_2d(np.asarray(units, dtype=float))
        M = 4 * (self.lmax + 1)
        tk = 2.0 * np.pi * np.arange(M) / M
        ctk = np.cos(tk)[:, None]
        stk = np.sin(tk)[:, None]
        best = 0.0
        for i in range(u.shape[0]):
            fr = frame_at(u[i])
            for v in (fr.e1, fr.e2):
                pts = ctk * u[i][None, :] + stk * v[None, :]
                c = np.fft.rfft(self.values(pts))
                j = np.arange(c.shape[0])
                b = -2.0 * c.imag / M
                d3 = -float(np.dot(j ** 3, b))
                best = max(best, abs(d3))
        return best / self.radius_L ** 3


def two_saddle_field(eps=0.3, c=0.3002):
    """Quadratic-on-the-sphere field with two low-value saddles.

    P(u) = z^2 - c + eps (x^2 - y^2): maxima at +-e_z (value 1 - c), minima
    at +-e_y (value -eps - c), saddles at +-e_x (value eps - c).  For c
    slightly above eps the zero set is two closed curves around +-e_z, each
    passing through both saddle neighborhoods.
    """

    def value(u):
        return u[:, 2] ** 2 - c + eps * (u[:, 0] ** 2 - u[:, 1] ** 2)

    def grad(u):
        g = np.empty_like(u)
        g[:, 0] = 2.0 * eps * u[:, 0]
        g[:, 1] = -2.0 * eps * u[:, 1]
        g[:, 2] = 2.0 * u[:, 2]
        return g

    def hess(u):
        H = np.zeros((u.shape[0], 3, 3))
        H[:, 0, 0] = 2.0 * eps
        H[:, 1, 1] = -2.0 * eps
        H[:, 2, 2] = 2.0
        return H

    return PolyField(value, grad, hess)


def tilted_bowl_field(tilt=1e-4, bowl=0.5, squeeze=0.15):
    """Bowl-shaped field whose two polar minima have tiny opposite values.

    P(u) = tilt z + bowl (x^2 + y^2) + squeeze (x^2 - y^2): minima at -+e_z
    with values -+tilt, maxima at +-e_x (bowl + squeeze), saddles near +-e_y
    (bowl - squeeze).  The south minimum sits below zero, so a small oval of
    the zero set encircles it; the north minimum does not carry one.
    """

    def value(u):
        return (tilt * u[:, 2] + bowl * (u[:, 0] ** 2 + u[:, 1] ** 2)
                + squeeze * (u[:, 0] ** 2 - u[:, 1] ** 2))

    def grad(u):
        g = np.empty_like(u)
        g[:, 0] = 2.0 * (bowl + squeeze) * u[:, 0]
        g[:, 1] = 2.0 * (bowl - squeeze) * u[:, 1]
        g[:, 2] = tilt
        return g

    def hess(u):
        H = np.zeros((u.shape[0], 3, 3))
        H[:, 0, 0] = 2.0 * (bowl + squeeze)
        H[:, 1, 1] = 2.0 * (bowl - squeeze)
        return H

    return PolyField(value, grad, hess)
