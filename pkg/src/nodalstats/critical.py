"""Critical points of sphere fields: location, refinement, classification.

Pipeline: candidate cells are grid triangles on which both tangent-frame
gradient components change sign; each candidate is polished by Newton's
method using exact analytic jets (a frozen-Hessian fixed-point variant is
available); converged points are deduplicated, classified by Hessian
signature, and filtered into value/gradient/curvature-bounded subsets.

Unit conventions.  Locations are :class:`~nodalstats.geometry.SpherePoint`
objects on the sphere of radius ``L``.  Every other quantity reported by
this module is expressed in *correlation-scaled* ("natural") units that make
a unit-variance field dimensionless: with ``sigma_g = sqrt(kappa'(1))`` the
per-radian gradient scale,

* lengths are geodesic angles multiplied by ``sigma_g``,
* gradients are divided by ``sigma_g`` (per-component unit variance),
* Hessian eigenvalues are divided by ``sigma_g**2``.

In these units the characteristic wavelength, the gradient, and the Hessian
of any ensemble are all O(1), so thresholds and filter parameters transfer
across degrees unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .census import build_level
from .field import POLE_SIN, value_hessian_covariance
from .geometry import GeometryError, SpherePoint, TangentFrame, chart_point

__all__ = [
    "CriticalPoint",
    "CrSet",
    "ChartRefineResult",
    "AlmostSingularResult",
    "HessianTailTable",
    "InfeasibleParametersError",
    "find_critical_points",
    "newton_refine_chart",
    "fixed_chart_jet_fn",
    "almost_singular_probe",
    "cr_filter",
    "min_separation",
    "measure_c3_scale",
    "natural_length_scale",
    "morse_counts",
    "antipodal_partner_map",
    "critical_csv_row",
    "critical_summary",
    "CRITICAL_CSV_HEADER",
]

# Residual acceptance: |grad| in natural units must not exceed this times
# the band limit (refined points sit at machine precision, far below).
RESID_FACTOR = 1e-10
# Natural-unit Hessian eigenvalue below which a point is "degenerate".
DEGENERATE_MU = 1e-8
# Merge radius constant: duplicates within MERGE_C / (A * min(inv_hess))
# natural units collapse to the better-converged representative.
MERGE_C = 0.2
# Unconditional dedup radius (natural units) for degenerate points whose
# curvature-based merge radius collapses to zero.
ABS_DEDUP = 1e-8
# Frozen-Hessian probes are guaranteed only when c3 * cap**2 * grad <= this.
REGIME_CONST = 0.1
NEWTON_MAX_STEPS = 50
STEP_TOL_NAT = 1e-13

CRITICAL_CSV_HEADER = "ux,uy,uz,value,mu1,mu2,kind,grad_residual"


class InfeasibleParametersError(ValueError):
    """Conditioning event too rare for the requested Monte Carlo."""


def natural_length_scale(spec):
    """Natural-unit lengths per radian of geodesic angle: sqrt(kappa'(1))."""
    _, k1, _ = spec.kappa_derivs_at_one()
    return float(np.sqrt(k1))


# --------------------------------------------------------------------------
# point and set containers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalPoint:
    """A refined (or probed) critical point with Hessian classification.

    ``grad_residual``, ``mu1 <= mu2`` and ``inv_hess_norm`` are in natural
    units; ``kind`` is one of ``min| max | saddle | degenerate``.
    """

    location: SpherePoint
    value: float
    grad_residual: float
    mu1: float
    mu2: float
    kind: str
    inv_hess_norm: float

    def __post_init__(self):
        if self.kind not in ("min", "max", "saddle", "degenerate"):
            raise ValueError("unknown classification %r" % (self.kind,))
        if self.mu1 > self.mu2:
            raise ValueError("eigenvalues must be sorted ascending")

    @staticmethod
    def from_jet(location, value, grad_residual, mu1, mu2):
        """Classify from sorted natural-unit eigenvalues."""
        mu_min = min(abs(mu1), abs(mu2))
        if mu_min < DEGENERATE_MU:
            kind = "degenerate"
            inv = np.inf if mu_min == 0.0 else 1.0 / mu_min
        else:
            inv = 1.0 / mu_min
            if mu1 > 0.0:
                kind = "min"
            elif mu2 < 0.0:
                kind = "max"
            else:
                kind = "saddle"
        return CriticalPoint(location, float(value), float(grad_residual),
                             float(mu1), float(mu2), kind, float(inv))


@dataclass(frozen=True)
class CrSet:
    """Critical or near-critical points surviving value/gradient/curvature
    filters, together with their minimum pairwise separation."""

    alpha: float
    beta: float | None
    delta_cap: float | None
    members: tuple
    min_separation: float

    def __post_init__(self):
        for p in self.members:
            if not abs(p.value) <= self.alpha:
                raise ValueError("member violates the value filter")
            if self.beta and not p.grad_residual <= self.beta:
                raise ValueError("member violates the gradient filter")
            if self.delta_cap is not None and np.isfinite(self.delta_cap):
                if p.kind == "degenerate" or p.inv_hess_norm > self.delta_cap:
                    raise ValueError("member violates the curvature filter")


# --------------------------------------------------------------------------
# batched exact jets in vectorized tangent frames
# --------------------------------------------------------------------------

def _frames(units):
    """Vectorized tangent frames matching :func:`geometry.frame_at`."""
    u = np.atleast_2d(np.asarray(units, dtype=float))
    axis = np.zeros_like(u)
    polar = np.abs(u[:, 2]) >= 0.9
    axis[~polar, 2] = 1.0
    axis[polar, 0] = 1.0
    e1 = np.cross(axis, u)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(u, e1)
    return e1, e2

def _batch_jets(sample, units):
    """Values, chart gradients and Hessians (ambient units) at many points.

    Returns ``(values, grads (n,2), hessians (n,2,2), e1, e2)`` where the
    2-vectors live in the per-point frames ``(e1, e2)`` from :func:`_frames`.
    """
    u = np.atleast_2d(np.asarray(units, dtype=float))
    n = u.shape[0]
    L = sample.radius_L
    vals = np.empty(n)
    grads = np.empty((n, 2))
    hesss = np.empty((n, 2, 2))
    e1, e2 = _frames(u)
    st = np.hypot(u[:, 0], u[:, 1])
    # duck-typed samples (test fields) may only provide per-point jets
    if not hasattr(sample, "theta_phi_jets"):
        ok = np.zeros(n, dtype=bool)
    else:
        ok = st >= POLE_SIN
    if np.any(ok):
        raw = sample.theta_phi_jets(u[ok])
        f, ft, fp, ftt, ftp, fpp = raw.T
        s = st[ok]
        ct = u[ok, 2]
        g1 = ft / L
        g2 = fp / (s * L)
        h11 = ftt / L ** 2
        h12 = (ftp / s - ct * fp / s ** 2) / L ** 2
        h22 = (fpp / s ** 2 + ct / s * ft) / L ** 2
        ph = np.arctan2(u[ok, 1], u[ok, 0])
        cp = np.cos(ph)
        sp = np.sin(ph)
        e_th = np.stack([ct * cp, ct * sp, -s], axis=1)
        e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
        r11 = np.einsum("ij,ij->i", e1[ok], e_th)
        r12 = np.einsum("ij,ij->i", e1[ok], e_ph)
        r21 = np.einsum("ij,ij->i", e2[ok], e_th)
        r22 = np.einsum("ij,ij->i", e2[ok], e_ph)
        vals[ok] = f
        grads[ok, 0] = r11 * g1 + r12 * g2
        grads[ok, 1] = r21 * g1 + r22 * g2
        a = r11 * h11 + r12 * h12
        b = r11 * h12 + r12 * h22
        c = r21 * h11 + r22 * h12
        d = r21 * h12 + r22 * h22
        hesss[ok, 0, 0] = a * r11 + b * r12
        hesss[ok, 0, 1] = a * r21 + b * r22
        hesss[ok, 1, 0] = hesss[ok, 0, 1]
        hesss[ok, 1, 1] = c * r21 + d * r22
    for i in np.nonzero(~ok)[0]:
        p = SpherePoint(u[i], L)
        fr = TangentFrame(u[i], e1[i], e2[i])
        j = sample.jet(p, fr)
        vals[i] = j.value
        grads[i] = j.grad
        hesss[i] = j.hess
    return vals, grads, hesss, e1, e2


# --------------------------------------------------------------------------
# C^3 scale measurement
# --------------------------------------------------------------------------

def measure_c3_scale(sample, level=3):
    """Natural-unit C^3 scale: max of |f|, |grad|, ||Hess||, |d^3 f| over a
    coarse grid.  Cached per sample."""
    key = ("c3_scale", level)
    cached = sample._cache.get(key)
    if cached is not None:
        return cached
    s1 = np.sqrt(sample.spec.grad_sigma2)
    grid = build_level(level, "sphere")
    vals, g, H, _, _ = _batch_jets(sample, grid.vertices)
    gn = np.hypot(g[:, 0], g[:, 1]) / s1
    mean = 0.5 * (H[:, 0, 0] + H[:, 1, 1])
    rad = np.hypot(0.5 * (H[:, 0, 0] - H[:, 1, 1]), H[:, 0, 1])
    op = (np.abs(mean) + rad) / s1 ** 2
    coarse = build_level(max(1, level - 1), "sphere")
    third = sample.third_derivative_scale(coarse.vertices) / s1 ** 3
    a = float(max(np.max(np.abs(vals)), np.max(gn), np.max(op), third))
    sample._cache[key] = a
    return a


# --------------------------------------------------------------------------
# detection and refinement
# --------------------------------------------------------------------------

def _seed_triangles(sample, grid):
    """Triangles where both tangential gradient components change sign."""
    g = sample.gradients(grid.vertices)
    cen = grid.centroids()
    e1, e2 = _frames(cen)
    tri = grid.triangles
    g1 = np.einsum("tcj,tj->tc", g[tri], e1)
    g2 = np.einsum("tcj,tj->tc", g[tri], e2)
    flip1 = (g1.min(axis=1) <= 0.0) & (g1.max(axis=1) >= 0.0)
    flip2 = (g2.min(axis=1) <= 0.0) & (g2.max(axis=1) >= 0.0)
    return np.nonzero(flip1 & flip2)[0]

def _refine_batch(sample, seeds, max_steps):
    """Batched Newton refinement; returns (final units, diverged mask)."""
    u = np.array(seeds, dtype=float)
    n = u.shape[0]
    L = sample.radius_L
    lam = sample.spec.wavelength_angle
    s_amb = np.sqrt(sample.spec.grad_sigma2)
    step_cap = min(0.35 * lam, 1.0) * L
    travel_cap = np.cos(min(3.0 * lam, np.pi * 0.9))
    start = u.copy()
    active = np.ones(n, dtype=bool)
    diverged = np.zeros(n, dtype=bool)
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        _, g, H, e1, e2 = _batch_jets(sample, u[idx])
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
        bad = (det == 0.0) | ~np.isfinite(det)
        with np.errstate(divide="ignore", invalid="ignore"):
            s1 = (-g[:, 0] * H[:, 1, 1] + g[:, 1] * H[:, 0, 1]) / det
            s2 = (-g[:, 1] * H[:, 0, 0] + g[:, 0] * H[:, 0, 1]) / det
        norm = np.hypot(s1, s2)
        bad |= ~np.isfinite(norm)
        scale = np.where(norm > step_cap, step_cap / np.maximum(norm, 1e-300), 1.0)
        s1 = np.where(bad, 0.0, s1 * scale)
        s2 = np.where(bad, 0.0, s2 * scale)
        X = s1[:, None] * e1 + s2[:, None] * e2
        z = np.sqrt(np.maximum(L * L - s1 ** 2 - s2 ** 2, 0.0))
        moved = X + z[:, None] * u[idx]
        moved /= np.linalg.norm(moved, axis=1, keepdims=True)
        u[idx] = moved
        far = np.einsum("ij,ij->i", moved, start[idx]) < travel_cap
        done = (norm * scale) * s_amb < STEP_TOL_NAT
        diverged[idx[bad | far]] = True
        active[idx] = ~(bad | far | done)
    diverged |= active  # never settled within the step budget
    return u, diverged

def find_critical_points(sample, grid=None, *, oversample=6.0,
                         max_steps=NEWTON_MAX_STEPS, diagnostics=None):
    """Locate, refine, classify, and deduplicate all critical points.

    Returns a list of :class:`CriticalPoint` sorted by value.  When
    ``diagnostics`` is a dict it receives seed/divergence counters, the
    per-kind census, ``morse_ok`` (#min + #max − #saddles == 2; ``None``
    when degenerate points were found), and the measured C^3 scale.
    """
    from .census import grid_for_sample

    if grid is None:
        grid = grid_for_sample(sample, oversample)
    L = sample.radius_L
    spec = sample.spec
    s_amb = np.sqrt(spec.grad_sigma2)
    sigma_angle = s_amb * L
    cen = grid.centroids()
    seeds = cen[_seed_triangles(sample, grid)]
    n_seeds = seeds.shape[0]
    if n_seeds == 0:
        if diagnostics is not None:
            diagnostics.update({"n_seeds": 0, "n_diverged": 0, "n_merged": 0,
                                "counts": {}, "morse_ok": False})
        return []
    final, diverged = _refine_batch(sample, seeds, max_steps)
    keep = ~diverged
    vals, g, H, _, _ = _batch_jets(sample, final[keep])
    resid = np.hypot(g[:, 0], g[:, 1]) / s_amb
    resid_tol = RESID_FACTOR * max(1, sample.lmax)
    ok = resid <= resid_tol
    n_diverged = int(np.sum(diverged)) + int(np.sum(~ok))
    units = final[keep][ok]
    vals = vals[ok]
    resid = resid[ok]
    Hn = H[ok] / s_amb ** 2
    mean = 0.5 * (Hn[:, 0, 0] + Hn[:, 1, 1])
    rad = np.hypot(0.5 * (Hn[:, 0, 0] - Hn[:, 1, 1]), Hn[:, 0, 1])
    mu1 = mean - rad
    mu2 = mean + rad
    mu_min = np.minimum(np.abs(mu1), np.abs(mu2))
    with np.errstate(divide="ignore"):
        inv = np.where(mu_min > 0.0, 1.0 / mu_min, np.inf)

    a_scale = measure_c3_scale(sample)
    order = np.argsort(resid, kind="stable")
    kept: list[int] = []
    kept_units = np.empty((0, 3))
    kept_inv = np.empty(0)
    n_merged = 0
    for i in order:
        if kept:
            cosd = np.clip(kept_units @ units[i], -1.0, 1.0)
            d_nat = np.arccos(cosd) * sigma_angle
            radius = MERGE_C / (a_scale * np.minimum(kept_inv, inv[i]))
            radius = np.maximum(radius, ABS_DEDUP)
            if np.any(d_nat < radius):
                n_merged += 1
                continue
        kept.append(i)
        kept_units = np.vstack([kept_units, units[i]])
        kept_inv = np.append(kept_inv, inv[i])

    points = [CriticalPoint.from_jet(SpherePoint(units[i], L), vals[i],
                                     resid[i], mu1[i], mu2[i]) for i in kept]
    points.sort(key=lambda p: p.value)
    if diagnostics is not None:
        counts = morse_counts(points)
        degenerate = counts.get("degenerate", 0) > 0
        morse_ok = None if degenerate else (
            counts.get("min", 0) + counts.get("max", 0)
            - counts.get("saddle", 0) == 2)
        diagnostics.update({
            "n_seeds": n_seeds,
            "n_diverged": n_diverged,
            "n_merged": n_merged,
            "counts": counts,
            "morse_ok": morse_ok,
            "c3_scale": a_scale,
        })
    return points

def morse_counts(points):
    counts: dict[str, int] = {}
    for p in points:
        counts[p.kind] = counts.get(p.kind, 0) + 1
    return counts


# --------------------------------------------------------------------------
# single-chart Newton refinement (generic jet functions)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ChartRefineResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    step_norms: tuple
    contraction_ratios: tuple
    converged: bool

def newton_refine_chart(jet_fn, x0=(0.0, 0.0), *, frozen_hessian=False,
                        max_steps=NEWTON_MAX_STEPS, step_tol=STEP_TOL_NAT,
                        ratio_floor=1e-11):
    """Newton iteration for a chart function given by ``jet_fn(x) ->
    (value, grad, hess)``.

    With ``frozen_hessian=True`` the Hessian is evaluated once at ``x0`` and
    reused (``jet_fn`` may return ``hess=None`` away from ``x0``), giving the
    fixed-point map ``x - H(x0)^{-1} grad(x)`` whose successive-step ratios
    are recorded for contraction diagnostics.  Ratios are measured only
    while steps remain above ``ratio_floor``.
    """
    x = np.asarray(x0, dtype=float).copy()
    value, grad, hess = jet_fn(x)
    h_frozen = None if hess is None else np.asarray(hess, dtype=float)
    steps: list[float] = []
    converged = False
    for _ in range(max_steps):
        h = h_frozen if frozen_hessian else np.asarray(hess, dtype=float)
        if h is None:
            raise ValueError("jet_fn returned no Hessian where one is needed")
        try:
            s = np.linalg.solve(h, -np.asarray(grad, dtype=float))
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(s)):
            break
        x = x + s
        steps.append(float(np.hypot(s[0], s[1])))
        value, grad, hess = jet_fn(x)
        if steps[-1] < step_tol:
            converged = True
            break
    ratios = tuple(steps[i + 1] / steps[i] for i in range(len(steps) - 1)
                   if steps[i] > ratio_floor and steps[i + 1] > ratio_floor)
    return ChartRefineResult(x, float(value),
                             np.asarray(grad, dtype=float), tuple(steps),
                             ratios, converged)

def fixed_chart_jet_fn(sample, point, frame):
    """Chart function for ``sample`` in the fixed chart at ``point``.

    The gradient is exact at every chart position (ambient gradient pulled
    back through the chart differential); the Hessian is supplied only at
    the chart origin, which is all the frozen-Hessian iteration needs.
    """
    L = point.radius_L
    origin_jet = sample.jet(point, frame)

    def jet_fn(x):
        x1, x2 = float(x[0]), float(x[1])
        if x1 == 0.0 and x2 == 0.0:
            return origin_jet.value, origin_jet.grad.copy(), origin_jet.hess
        q = chart_point(point, frame, (x1, x2))
        z = np.sqrt(L * L - x1 * x1 - x2 * x2)
        d1 = frame.e1 - (x1 / z) * point.unit
        d2 = frame.e2 - (x2 / z) * point.unit
        g = sample.gradients(q.unit[None, :])[0]
        val = float(sample.values(q.unit[None, :])[0])
        return val, np.array([g @ d1, g @ d2]), None

    return jet_fn


# --------------------------------------------------------------------------
# almost-singular probes (frozen-Hessian contraction)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AlmostSingularResult:
    """Outcome of a frozen-Hessian probe started at a near-critical point."""

    point: CriticalPoint | None
    distance: float
    alpha: float
    beta: float
    delta_cap: float
    c3_scale: float
    regime_core: bool
    regime_value: bool
    converged: bool
    distance_ok: bool
    value_ok: bool
    max_ratio: float
    verdict: str

def almost_singular_probe(sample, p, alpha, beta, delta_cap):
    """Run the frozen-Hessian iteration from a near-critical point ``p``.

    Preconditions (checked): in natural units, |f(p)| <= alpha,
    |grad f(p)| <= beta, and 1/min|Hessian eigenvalue| <= delta_cap.

    When the measured-scale predicate ``c3 * delta_cap**2 * beta <= 0.1``
    holds, the iteration is a contraction and the limit is a critical point
    within ``2 * delta_cap * beta`` of ``p``; its value additionally stays
    within ``2 * alpha`` when ``c3 * delta_cap**2 * beta**2 <= 0.1 * alpha``.
    Outside those regimes the probe reports without asserting.
    """
    from .geometry import frame_at

    spec = sample.spec
    s_amb = np.sqrt(spec.grad_sigma2)
    sigma_angle = s_amb * p.radius_L
    frame = frame_at(p.unit)
    j = sample.jet(p, frame)
    g_nat = float(np.hypot(j.grad[0], j.grad[1])) / s_amb
    mu = np.linalg.eigvalsh(j.hess / s_amb ** 2)
    inv = np.inf if np.min(np.abs(mu)) == 0.0 else 1.0 / np.min(np.abs(mu))
    if abs(j.value) > alpha:
        raise ValueError("probe point violates the value bound")
    if g_nat > beta:
        raise ValueError("probe point violates the gradient bound")
    if inv > delta_cap:
        raise ValueError("probe point violates the curvature bound")

    a_scale = measure_c3_scale(sample)
    regime_core = a_scale * delta_cap ** 2 * beta <= REGIME_CONST
    regime_value = a_scale * delta_cap ** 2 * beta ** 2 <= REGIME_CONST * alpha

    # The iteration works in natural units: rescale the ambient chart jets.
    raw = fixed_chart_jet_fn(sample, p, frame)

    def jet_fn(x_nat):
        x_amb = np.asarray(x_nat, dtype=float) / s_amb
        val, grad, hess = raw(x_amb)
        grad = grad / s_amb
        hess = None if hess is None else hess / s_amb ** 2
        return val, grad, hess

    try:
        res = newton_refine_chart(jet_fn, (0.0, 0.0), frozen_hessian=True)
        failed = False
    except GeometryError:
        res = None
        failed = True

    if failed:
        point = None
        distance = np.inf
        converged = False
        max_ratio = np.inf
    else:
        x_amb = res.x / s_amb
        q = chart_point(p, frame, x_amb)
        vals, g2, H2, _, _ = _batch_jets(sample, q.unit[None, :])
        resid = float(np.hypot(g2[0, 0], g2[0, 1])) / s_amb
        mu_q = np.linalg.eigvalsh(H2[0] / s_amb ** 2)
        point = CriticalPoint.from_jet(q, vals[0], resid, mu_q[0], mu_q[1])
        distance = p.distance(q) / p.radius_L * sigma_angle
        resid_tol = RESID_FACTOR * max(1, sample.lmax)
        converged = res.converged and resid <= resid_tol
        max_ratio = max(res.contraction_ratios, default=0.0)

    distance_ok = distance <= 2.0 * delta_cap * beta
    value_ok = point is not None and abs(point.value) <= 2.0 * alpha
    if not regime_core:
        verdict = "regime-violated"
    elif converged and distance_ok and (value_ok or not regime_value):
        verdict = "confirmed"
    else:
        verdict = "counterexample"
    return AlmostSingularResult(point, float(distance), float(alpha),
                                float(beta), float(delta_cap), a_scale,
                                regime_core, regime_value, converged,
                                distance_ok, value_ok, float(max_ratio),
                                verdict)


# --------------------------------------------------------------------------
# filtered sets and separations
# --------------------------------------------------------------------------

def min_separation(points, *, projective=False, length_scale=1.0):
    """Minimum pairwise geodesic separation, in radians * length_scale.

    In projective mode antipodal copies are identified: pair distances use
    ``min(d, pi - d)`` and pairs that ARE mutual antipodes are skipped.
    """
    if len(points) < 2:
        return np.inf
    units = np.array([p.location.unit for p in points])
    cosd = np.clip(units @ units.T, -1.0, 1.0)
    ang = np.arccos(cosd)
    iu = np.triu_indices(len(points), k=1)
    d = ang[iu]
    if projective:
        d = np.minimum(d, np.pi - d)
        d = d[d > 1e-6]
        if d.size == 0:
            return np.inf
    return float(np.min(d) * length_scale)

def cr_filter(points, alpha, beta=None, delta_cap=None, *,
              projective=False, length_scale=1.0):
    """Filter points by |value| <= alpha, gradient residual <= beta, and
    inverse-Hessian norm <= delta_cap; beta in (None, 0) and delta_cap in
    (None, inf) disable their filters.  Degenerate points survive only when
    the curvature filter is off."""
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    if beta is not None and beta != 0.0 and not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if delta_cap is not None and np.isfinite(delta_cap) and delta_cap < 1.0:
        raise ValueError("delta_cap must be >= 1")
    use_beta = beta is not None and beta > 0.0
    use_delta = delta_cap is not None and np.isfinite(delta_cap)
    members = []
    for p in points:
        if abs(p.value) > alpha:
            continue
        if use_beta and p.grad_residual > beta:
            continue
        if use_delta and (p.kind == "degenerate"
                          or p.inv_hess_norm > delta_cap):
            continue
        members.append(p)
    sep = min_separation(members, projective=projective,
                         length_scale=length_scale)
    return CrSet(float(alpha), beta, delta_cap, tuple(members), sep)

def antipodal_partner_map(points, *, tol_angle=1e-6):
    """Index of each point's antipodal partner, or -1 when none matches.

    The default tolerance sits above the arccos resolution floor
    (~2e-8 rad near zero angle) and far below any genuine separation.
    """
    units = np.array([p.location.unit for p in points])
    partner = np.full(len(points), -1, dtype=int)
    if len(points) == 0:
        return partner
    cosd = units @ (-units.T)
    for i in range(len(points)):
        jbest = int(np.argmax(cosd[i]))
        if np.arccos(np.clip(cosd[i, jbest], -1.0, 1.0)) <= tol_angle:
            partner[i] = jbest
    return partner


# --------------------------------------------------------------------------
# conditional Hessian tails
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HessianTailTable:
    """P{inverse-Hessian norm > delta | |f| <= alpha, |grad f| <= beta}."""

    delta: tuple
    tail: tuple
    se: tuple
    n_samples: int
    acceptance_rate: float

def hessian_conditional_stats(spec, alpha, beta, delta_grid, n_samples,
                              seed=0):
    """Monte Carlo conditional tail of the inverse-Hessian norm on the
    near-singular event, via exact sampling of the conditional law.

    At a point, the gradient is independent of (value, Hessian), so
    conditioning on |grad| <= beta changes nothing but the acceptance rate;
    conditioning on |f| <= alpha draws the value from a truncated normal and
    the Hessian from its exact Gaussian conditional given that value.  All
    quantities are in natural units.
    """
    if n_samples < 10_000:
        raise ValueError("at least 10,000 conditional samples are required")
    delta_grid = np.asarray(delta_grid, dtype=float)
    if np.any(delta_grid < 1.0):
        raise ValueError("delta grid entries must be >= 1")
    from scipy.special import erf

    p_val = float(erf(alpha / np.sqrt(2.0)))
    p_grad = 1.0 - np.exp(-0.5 * beta ** 2)
    acceptance = p_val * p_grad
    if acceptance < 1e-6:
        raise InfeasibleParametersError(
            "conditioning event has probability %.3g < 1e-6" % acceptance)

    cov = value_hessian_covariance(spec)  # order: f, H11, H22, H12
    s2 = spec.grad_sigma2
    scale = np.array([1.0, 1.0 / s2, 1.0 / s2, 1.0 / s2])
    cov = cov * np.outer(scale, scale)
    cross = cov[1:, 0]
    hess_cov = cov[1:, 1:] - np.outer(cross, cross) / cov[0, 0]
    chol = np.linalg.cholesky(hess_cov + 1e-15 * np.eye(3))

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    a = -alpha / np.sqrt(cov[0, 0])
    f = truncnorm.rvs(a, -a, scale=np.sqrt(cov[0, 0]), size=n_samples,
                      random_state=rng)
    h = (f[:, None] * (cross / cov[0, 0])[None, :]
         + rng.standard_normal((n_samples, 3)) @ chol.T)
    mean = 0.5 * (h[:, 0] + h[:, 1])
    rad = np.hypot(0.5 * (h[:, 0] - h[:, 1]), h[:, 2])
    mu_min = np.minimum(np.abs(mean - rad), np.abs(mean + rad))
    tail = np.array([np.mean(mu_min < 1.0 / d) for d in delta_grid])
    se = np.sqrt(tail * (1.0 - tail) / n_samples)
    if np.any(np.diff(tail) > 0.0):
        raise AssertionError("conditional tail must be non-increasing")
    return HessianTailTable(tuple(delta_grid), tuple(tail), tuple(se),
                            int(n_samples), acceptance)


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------

def critical_csv_row(point):
    u = point.location.unit
    return "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%.17g" % (
        u[0], u[1], u[2], point.value, point.mu1, point.mu2, point.kind,
        point.grad_residual)

def critical_summary(points, *, projective=False, length_scale=1.0):
    counts = morse_counts(points)
    morse_ok = None if counts.get("degenerate", 0) else (
        counts.get("min", 0) + counts.get("max", 0)
        - counts.get("saddle", 0) == 2)
    return {
        "n_min": counts.get("min", 0),
        "n_max": counts.get("max", 0),
        "n_saddle": counts.get("saddle", 0),
        "n_degenerate": counts.get("degenerate", 0),
        "morse_ok": morse_ok,
        "min_separation": min_separation(points, projective=projective,
                                         length_scale=length_scale),
    }
