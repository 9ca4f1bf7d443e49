"""Gaussian random fields on the sphere: ensembles, samples, covariance, jets.

An ensemble is a rotation-invariant centered Gaussian field with unit
variance. Two kinds are supported:

* ``spherical_harmonic`` -- the random degree-n eigenfunction ensemble on the
  sphere of radius L = n;
* ``band_limited`` -- mixture over degrees with nonnegative variance weights
  and an explicit radius.

With fully normalized (geodesy) basis functions a sample is

    f = sum_l c_l sum_{m=-l..l} a_{l,m} Y_{l,m},     a_{l,m} iid N(0,1),

with c_l^2 (2l+1) equal to the normalized degree weight, so E[f^2] = 1 and the
covariance between points at angle s is kappa(cos s) = sum_l w_l P_l(cos s).

Jets (value, gradient, Hessian of the chart composition at the base point) are
computed analytically. The primary path evaluates theta/phi partial
derivatives through the associated-Legendre derivative recurrences and
converts to the requested tangent frame; the covariant frame components at the
base point equal the chart derivatives. Points within ~1e-3 rad of a
coordinate pole take an equally analytic great-circle path: the restriction of
a band-limited field to a great circle is a trigonometric polynomial of the
same degree, so exact derivatives come from an FFT of 2(lmax+1) samples.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import (SpherePoint, TangentFrame, frame_at, theta_phi_frame,
                       units_to_angles)

MAX_DEGREE = 10_000
POLE_SIN = 1e-3


class InvalidSpecError(ValueError):
    pass


# --------------------------------------------------------------------------
# ensemble specification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Rotation-invariant unit-variance Gaussian ensemble on a sphere.

    ``weights`` holds (degree, variance weight) pairs; they are normalized to
    sum to one. ``decay_gamma`` is the declared power-decay exponent of the
    covariance envelope, used only for reporting and property checks.
    """

    kind: str
    weights: tuple
    radius: float
    decay_gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("spherical_harmonic", "band_limited"):
            raise InvalidSpecError("unknown ensemble kind %r" % (self.kind,))
        if not self.weights:
            raise InvalidSpecError("ensemble needs at least one degree weight")
        for l, w in self.weights:
            if int(l) != l or l < 0:
                raise InvalidSpecError("degrees must be nonnegative integers")
            if l > MAX_DEGREE:
                raise InvalidSpecError("degree %d exceeds the supported maximum %d"
                                       % (l, MAX_DEGREE))
            if not (w >= 0.0) or not np.isfinite(w):
                raise InvalidSpecError("degree weights must be finite and >= 0")
        if sum(w for _, w in self.weights) <= 0.0:
            raise InvalidSpecError("at least one degree weight must be positive")
        if not (self.radius > 0.0):
            raise InvalidSpecError("radius must be positive")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def spherical_harmonic(degree):
        """Degree-n random eigenfunction ensemble on the radius-n sphere."""
        if int(degree) != degree or degree < 1:
            raise InvalidSpecError("spherical_harmonic needs integer degree >= 1")
        degree = int(degree)
        if degree > MAX_DEGREE:
            raise InvalidSpecError("degree %d exceeds the supported maximum %d"
                                   % (degree, MAX_DEGREE))
        return EnsembleSpec(kind="spherical_harmonic",
                            weights=((degree, 1.0),),
                            radius=float(degree))

    @staticmethod
    def band_limited(weights, radius, decay_gamma=0.5):
        """Mixture ensemble from a {degree: weight} mapping."""
        items = tuple(sorted((int(l), float(w)) for l, w in dict(weights).items()))
        return EnsembleSpec(kind="band_limited", weights=items,
                            radius=float(radius), decay_gamma=float(decay_gamma))

    @staticmethod
    def gaussian_band(center, sigma, radius=None, decay_gamma=0.5):
        """Default band profile: w_l ~ exp(-(l-center)^2 / (2 sigma^2)).

        Degrees range over [center - 3 sigma, center + 3 sigma], floored at 1.
        """
        if center < 1 or sigma <= 0:
            raise InvalidSpecError("gaussian_band needs center >= 1, sigma > 0")
        lo = max(1, int(np.floor(center - 3.0 * sigma)))
        hi = min(MAX_DEGREE, int(np.ceil(center + 3.0 * sigma)))
        ws = {l: float(np.exp(-0.5 * ((l - center) / sigma) ** 2))
              for l in range(lo, hi + 1)}
        if radius is None:
            radius = float(center)
        return EnsembleSpec.band_limited(ws, radius, decay_gamma=decay_gamma)

    # -- derived quantities ------------------------------------------------

    @property
    def radius_L(self):
        return self.radius

    @property
    def lmax(self):
        return max(l for l, _ in self.weights)

    @property
    def degree(self):
        """The single active degree (spherical_harmonic kind only)."""
        active = [l for l, w in self.weights if w > 0]
        if len(active) != 1:
            raise InvalidSpecError("degree is defined only for single-degree specs")
        return active[0]

    def weight_vector(self):
        """Normalized variance weights over degrees 0..lmax."""
        w = np.zeros(self.lmax + 1)
        for l, wl in self.weights:
            w[l] += wl
        return w / w.sum()

    def coeff_scales(self):
        """c_l with c_l^2 (2l+1) = normalized weight."""
        w = self.weight_vector()
        l = np.arange(self.lmax + 1)
        return np.sqrt(w / (2.0 * l + 1.0))

    @property
    def mean_degree(self):
        w = self.weight_vector()
        return float(np.dot(w, np.arange(self.lmax + 1)))

    @property
    def wavelength_angle(self):
        """Characteristic angular wavelength 2 pi / sqrt(n(n+1))."""
        n = self.mean_degree
        return 2.0 * np.pi / np.sqrt(n * (n + 1.0))

    def kappa_derivs_at_one(self):
        """(kappa(1), kappa'(1), kappa''(1)) in closed form."""
        w = self.weight_vector()
        l = np.arange(self.lmax + 1, dtype=float)
        k1 = float(np.dot(w, l * (l + 1.0) / 2.0))
        k2 = float(np.dot(w, (l - 1.0) * l * (l + 1.0) * (l + 2.0) / 8.0))
        return 1.0, k1, k2

    @property
    def grad_sigma2(self):
        """Variance of each gradient component, kappa'(1)/L^2."""
        _, k1, _ = self.kappa_derivs_at_one()
        return k1 / self.radius ** 2

    def kappa(self, t, nderiv=0):
        """kappa and derivatives in t = cos(angle); vectorized in t."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        w = self.weight_vector()
        p, dp, ddp = _legendre_all(self.lmax, t)
        out = [p.T @ w, dp.T @ w, ddp.T @ w][: nderiv + 1]
        if scalar:
            out = [float(o[0]) for o in out]
        return out[0] if nderiv == 0 else tuple(out)

    # -- serialization -----------------------------------------------------

    def to_config(self):
        cfg = {"kind": self.kind, "radius": self.radius,
               "decay_gamma": self.decay_gamma}
        if self.kind == "spherical_harmonic":
            cfg["degree"] = self.degree
        else:
            cfg["weights"] = {str(l): w for l, w in self.weights}
        return cfg

    @staticmethod
    def from_config(cfg):
        kind = cfg.get("kind")
        if kind == "spherical_harmonic":
            spec = EnsembleSpec.spherical_harmonic(int(cfg["degree"]))
            if "radius" in cfg and abs(cfg["radius"] - spec.radius) > 1e-12:
                raise InvalidSpecError("spherical_harmonic radius is fixed to the degree")
            return spec
        if kind == "band_limited":
            ws = {int(l): float(w) for l, w in cfg["weights"].items()}
            return EnsembleSpec.band_limited(ws, float(cfg["radius"]),
                                             decay_gamma=float(cfg.get("decay_gamma", 0.5)))
        raise InvalidSpecError("unknown ensemble kind %r" % (kind,))

    def to_json(self):
        return json.dumps(self.to_config(), sort_keys=True)

    @staticmethod
    def from_json(text):
        return EnsembleSpec.from_config(json.loads(text))


def _legendre_all(lmax, t):
    """Legendre P_l, P_l', P_l'' for l = 0..lmax at t (vectorized)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = t.shape[0]
    p = np.zeros((lmax + 1, n))
    dp = np.zeros((lmax + 1, n))
    ddp = np.zeros((lmax + 1, n))
    p[0] = 1.0
    if lmax >= 1:
        p[1] = t
        dp[1] = 1.0
    for l in range(2, lmax + 1):
        p[l] = ((2 * l - 1) * t * p[l - 1] - (l - 1) * p[l - 2]) / l
        dp[l] = ((2 * l - 1) * (p[l - 1] + t * dp[l - 1]) - (l - 1) * dp[l - 2]) / l
        ddp[l] = ((2 * l - 1) * (2 * dp[l - 1] + t * ddp[l - 1]) - (l - 1) * ddp[l - 2]) / l
    return p, dp, ddp


# --------------------------------------------------------------------------
# jets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    """Second-order jet of the chart composition at the chart origin."""

    value: float
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        grad = np.asarray(self.grad, dtype=float).reshape(2)
        hess = np.asarray(self.hess, dtype=float).reshape(2, 2)
        scale = max(1.0, float(np.max(np.abs(hess))))
        if abs(hess[0, 1] - hess[1, 0]) > 1e-10 * scale:
            raise ValueError("Hessian must be symmetric")
        hess = 0.5 * (hess + hess.T)
        grad.setflags(write=False)
        hess.setflags(write=False)
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", hess)

    @property
    def inv_hess_norm(self):
        """1 / min |eigenvalue|; inf for singular Hessians."""
        mu = np.linalg.eigvalsh(self.hess)
        m = float(np.min(np.abs(mu)))
        return np.inf if m == 0.0 else 1.0 / m


# --------------------------------------------------------------------------
# field samples
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FieldSample:
    """One realization of an ensemble: immutable coefficients plus its spec.

    ``coeffs[l, lmax + m]`` is the iid standard normal coefficient a_{l,m};
    the normalization scales c_l are applied at synthesis time.
    """

    spec: EnsembleSpec
    coeffs: np.ndarray
    seed: object = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        lmax = self.spec.lmax
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (lmax + 1, 2 * lmax + 1):
            raise InvalidSpecError("coeffs must have shape (lmax+1, 2*lmax+1)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # packed cos/sin coefficient tables with c_l applied
    def _packed(self):
        cs = self._cache.get("packed")
        if cs is None:
            lmax = self.spec.lmax
            scales = self.spec.coeff_scales()
            cc = np.zeros((lmax + 1, lmax + 1))
            sc = np.zeros((lmax + 1, lmax + 1))
            for l in range(lmax + 1):
                if scales[l] == 0.0:
                    continue
                cc[l, 0] = scales[l] * self.coeffs[l, lmax]
                for m in range(1, l + 1):
                    cc[l, m] = scales[l] * self.coeffs[l, lmax + m]
                    sc[l, m] = scales[l] * self.coeffs[l, lmax - m]
            cs = (cc, sc)
            self._cache["packed"] = cs
        return cs

    @property
    def radius_L(self):
        return self.spec.radius_L

    @property
    def lmax(self):
        return self.spec.lmax

    def values(self, units):
        """Field values at an (N, 3) array of unit directions."""
        u = np.atleast_2d(np.asarray(units, dtype=float))
        cc, sc = self._packed()
        ct, st, ph = units_to_angles(u)
        return kernels.synth_values(cc, sc, self.lmax, ct, st, ph)

    def value_at(self, point):
        return float(self.values(point.unit[None, :])[0])

    def theta_phi_jets(self, units):
        """Raw (f, ft, fp, ftt, ftp, fpp) rows; caller avoids the poles."""
        u = np.atleast_2d(np.asarray(units, dtype=float))
        cc, sc = self._packed()
        ct, st, ph = units_to_angles(u)
        if np.any(st < POLE_SIN):
            raise ValueError("theta_phi_jets called at a pole-adjacent point")
        return kernels.synth_jets(cc, sc, self.lmax, ct, st, ph)

    def gradients(self, units):
        """Ambient (N, 3) gradient vectors (per unit arc length on S^2(L))."""
        u = np.atleast_2d(np.asarray(units, dtype=float))
        n = u.shape[0]
        out = np.zeros((n, 3))
        ct, st, ph = units_to_angles(u)
        ok = st >= POLE_SIN
        if np.any(ok):
            raw = self.theta_phi_jets(u[ok])
            stk = st[ok]
            cp = np.cos(ph[ok])
            sp = np.sin(ph[ok])
            e_th = np.stack([ct[ok] * cp, ct[ok] * sp, -stk], axis=1)
            e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
            g1 = raw[:, 1] / self.radius_L
            g2 = raw[:, 2] / (stk * self.radius_L)
            out[ok] = g1[:, None] * e_th + g2[:, None] * e_ph
        for i in np.nonzero(~ok)[0]:
            p = SpherePoint(u[i] / np.linalg.norm(u[i]), self.radius_L)
            fr = frame_at(p.unit)
            j = self._circle_jet(p, fr)
            out[i] = j.grad[0] * fr.e1 + j.grad[1] * fr.e2
        return out

    def jet(self, point, frame=None):
        """Exact chart jet at a point, in the given tangent frame."""
        if self.lmax > MAX_DEGREE:
            raise InvalidSpecError("degree beyond supported maximum")
        if frame is None:
            frame = frame_at(point.unit)
        st = np.hypot(point.unit[0], point.unit[1])
        if st < POLE_SIN:
            return self._circle_jet(point, frame)
        raw = self.theta_phi_jets(point.unit[None, :])[0]
        f, ft, fp, ftt, ftp, fpp = raw
        L = self.radius_L
        ct = point.unit[2]
        g_tp = np.array([ft, fp / st]) / L
        h11 = ftt
        h12 = ftp / st - ct * fp / st ** 2
        h22 = fpp / st ** 2 + ct / st * ft
        h_tp = np.array([[h11, h12], [h12, h22]]) / L ** 2
        e_th, e_ph = theta_phi_frame(point.unit)
        rot = np.array([[np.dot(frame.e1, e_th), np.dot(frame.e1, e_ph)],
                        [np.dot(frame.e2, e_th), np.dot(frame.e2, e_ph)]])
        return Jet2(f, rot @ g_tp, rot @ h_tp @ rot.T)

    def _circle_jet(self, point, frame):
        """Great-circle spectral jet: exact for band-limited fields."""
        lmax = self.lmax
        M = 2 * (lmax + 1)
        tk = 2.0 * np.pi * np.arange(M) / M
        ctk = np.cos(tk)[:, None]
        stk = np.sin(tk)[:, None]
        w = (frame.e1 + frame.e2) / np.sqrt(2.0)
        d1 = np.empty(3)
        d2 = np.empty(3)
        val = None
        for idx, v in enumerate((frame.e1, frame.e2, w)):
            pts = ctk * point.unit[None, :] + stk * v[None, :]
            vals = self.values(pts)
            c = np.fft.rfft(vals)
            j = np.arange(c.shape[0])
            a = 2.0 * c.real / M
            a[0] = c[0].real / M
            if M % 2 == 0:
                a[-1] = c[-1].real / M
            b = -2.0 * c.imag / M
            d1[idx] = float(np.dot(j, b))
            d2[idx] = float(-np.dot(j * j, a))
            if val is None:
                val = float(vals[0])
        L = self.radius_L
        h11 = d2[0]
        h22 = d2[1]
        h12 = d2[2] - 0.5 * (d2[0] + d2[1])
        return Jet2(val,
                    np.array([d1[0], d1[1]]) / L,
                    np.array([[h11, h12], [h12, h22]]) / L ** 2)

    def third_derivative_scale(self, units):
        """max over points/directions of |d^3/dt^3 f(great circle)| / L^3."""
        u = np.atleast_2d(np.asarray(units, dtype=float))
        lmax = self.lmax
        M = 2 * (lmax + 1)
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


def sample_field(spec, seed, sample_index=0):
    """Draw a field sample; deterministic in (spec, seed, sample_index)."""
    if spec.kind == "spherical_harmonic" and spec.degree < 1:
        raise InvalidSpecError("sampling requires degree >= 1")
    active = [l for l, w in zip(range(spec.lmax + 1), spec.weight_vector()) if w > 0]
    if max(active) < 1:
        raise InvalidSpecError("sampling requires a degree >= 1 in the band")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(sample_index),))
    rng = np.random.default_rng(ss)
    lmax = spec.lmax
    coeffs = np.zeros((lmax + 1, 2 * lmax + 1))
    for l in active:
        coeffs[l, lmax - l: lmax + l + 1] = rng.standard_normal(2 * l + 1)
    return FieldSample(spec=spec, coeffs=coeffs, seed=(int(seed), int(sample_index)))


# --------------------------------------------------------------------------
# covariance operations
# --------------------------------------------------------------------------

def covariance(spec, d):
    """Covariance of field values at arc distance d on the radius-L sphere."""
    d = np.asarray(d, dtype=float)
    L = spec.radius_L
    if np.any(d < 0) or np.any(d > np.pi * L * (1 + 1e-12)):
        raise ValueError("distance must lie in [0, pi L]")
    t = np.cos(np.minimum(d / L, np.pi))
    return spec.kappa(t)


def pair_covariance_matrix(spec, p, q, frame_p=None, frame_q=None):
    """6x6 covariance of (f(p), grad f(p), f(q), grad f(q)) in given frames.

    Entries follow from differentiating kappa(<u(X), v(Y)>) through the two
    charts; at the base points the chart map has unit tangential differential
    and second differential -delta_ij * unit / L.
    """
    if frame_p is None:
        frame_p = frame_at(p.unit)
    if frame_q is None:
        frame_q = frame_at(q.unit)
    L = spec.radius_L
    t0 = float(np.clip(np.dot(p.unit, q.unit), -1.0, 1.0))
    k0, k1, k2 = spec.kappa(t0, nderiv=2)
    ep = (frame_p.e1, frame_p.e2)
    eq = (frame_q.e1, frame_q.e2)

    def block(pu, qu, ea, eb, same):
        """3x3 block: rows (f, d1, d2) at (pu, ea), cols at (qu, eb)."""
        tt = 1.0 if same else t0
        kk0, kk1, kk2 = (spec.kappa(tt, nderiv=2))
        b = np.empty((3, 3))
        b[0, 0] = kk0
        for i in (0, 1):
            b[i + 1, 0] = kk1 * np.dot(ea[i], qu) / L
            b[0, i + 1] = kk1 * np.dot(pu, eb[i]) / L
        for i in (0, 1):
            for j in (0, 1):
                b[i + 1, j + 1] = (kk2 * np.dot(ea[i], qu) * np.dot(pu, eb[j])
                                   + kk1 * np.dot(ea[i], eb[j])) / L ** 2
        return b

    m = np.empty((6, 6))
    m[:3, :3] = block(p.unit, p.unit, ep, ep, True)
    m[3:, 3:] = block(q.unit, q.unit, eq, eq, True)
    cross = block(p.unit, q.unit, ep, eq, False)
    m[:3, 3:] = cross
    m[3:, :3] = cross.T
    return 0.5 * (m + m.T)


def value_hessian_covariance(spec):
    """4x4 covariance of (f, H11, H22, H12) at a point, exact.

    Var H_ii = (3 kappa'' + kappa')/L^4, Cov(H11, H22) = (kappa'' + kappa')/L^4,
    Var H12 = kappa''/L^4, Cov(f, H_ii) = -kappa'/L^2, H12 independent.
    """
    _, k1, k2 = spec.kappa_derivs_at_one()
    L2 = spec.radius_L ** 2
    L4 = L2 * L2
    m = np.zeros((4, 4))
    m[0, 0] = 1.0
    m[0, 1] = m[1, 0] = -k1 / L2
    m[0, 2] = m[2, 0] = -k1 / L2
    m[1, 1] = m[2, 2] = (3.0 * k2 + k1) / L4
    m[1, 2] = m[2, 1] = (k2 + k1) / L4
    m[3, 3] = k2 / L4
    return m


def covariance_decay_report(spec, distances, window=0.25):
    """Envelope |kappa| near each distance and the fitted log-log slope.

    The covariance oscillates, so each distance reports the max |kappa| over
    a +-window neighborhood (window in radius-L arc units).
    """
    distances = np.asarray(distances, dtype=float)
    env = np.empty_like(distances)
    for i, d in enumerate(distances):
        grid = np.linspace(max(0.0, d - window), d + window, 101)
        env[i] = float(np.max(np.abs(covariance(spec, grid))))
    x = np.log(distances)
    y = np.log(np.maximum(env, 1e-300))
    slope = float(np.polyfit(x, y, 1)[0])
    return {"distances": distances.tolist(), "envelope": env.tolist(),
            "slope": slope, "declared_gamma": spec.decay_gamma}


# --------------------------------------------------------------------------
# basis matrix (linear map coefficients -> values), used by tests and oracles
# --------------------------------------------------------------------------

def coeff_order(spec):
    """Flattened coefficient order [(l, m)] matching pack_coeffs."""
    order = []
    w = spec.weight_vector()
    for l in range(spec.lmax + 1):
        if w[l] == 0.0:
            continue
        for m in range(-l, l + 1):
            order.append((l, m))
    return order


def pack_coeffs(sample):
    order = coeff_order(sample.spec)
    lmax = sample.spec.lmax
    return np.array([sample.coeffs[l, lmax + m] for l, m in order])


def unpack_coeffs(spec, flat):
    order = coeff_order(spec)
    lmax = spec.lmax
    coeffs = np.zeros((lmax + 1, 2 * lmax + 1))
    for val, (l, m) in zip(flat, order):
        coeffs[l, lmax + m] = val
    return FieldSample(spec=spec, coeffs=coeffs)


def basis_values(spec, units):
    """(N, ncoef) matrix: values = basis_values @ packed coefficients."""
    u = np.atleast_2d(np.asarray(units, dtype=float))
    order = coeff_order(spec)
    scales = spec.coeff_scales()
    ct, st, ph = units_to_angles(u)
    lmax = spec.lmax
    sect, arec, brec, _c1, _c2, _d0 = kernels.legendre_tables(lmax)
    L1 = lmax + 1
    P = np.zeros((L1, L1, u.shape[0]))
    P[0, 0] = 1.0
    for m in range(L1):
        if m == 1:
            P[1, 1] = np.sqrt(3.0) * st
        elif m >= 2:
            P[m, m] = P[m - 1, m - 1] * st * sect[m]
        if m + 1 <= lmax:
            P[m + 1, m] = np.sqrt(2.0 * m + 3.0) * ct * P[m, m]
        for l in range(m + 2, L1):
            P[l, m] = arec[l, m] * ct * P[l - 1, m] - brec[l, m] * P[l - 2, m]
    cols = []
    for l, m in order:
        if m >= 0:
            cols.append(scales[l] * P[l, m] * np.cos(m * ph))
        else:
            cols.append(scales[l] * P[l, -m] * np.sin(-m * ph))
    return np.stack(cols, axis=1)
