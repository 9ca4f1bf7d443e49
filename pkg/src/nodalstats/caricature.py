"""Saddle joints, traced nodal graphs, and the perturbation loop accounting.

The machinery here replaces a sample's nodal picture near its almost-singular
critical points by a combinatorial caricature:

* every low-value saddle is boxed into a small chart region (a *joint*)
  bounded by level curves of the frozen Hessian quadratic, which the zero set
  enters and leaves through four marked *terminals*;
* zero curves are traced between terminals, producing a 4-regular graph whose
  vertices are the joints;
* every low-value extremum may carry a tiny circle around it whose presence
  is decided by a sign rule;
* the total loop count of a slightly perturbed field then splits into
  stable loops + circles at low extrema + loops read off the resolved graph,
  and the split is checked against a direct census of the perturbed field.

All chart work is done in natural units (unit wavelength scale), matching
the critical-point module.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.spatial import cKDTree

from . import census
from .critical import (CriticalPoint, CrSet, find_critical_points,
                       measure_c3_scale)
from .field import POLE_SIN, FieldSample
from .geometry import TangentFrame, chart_point, frame_at

__all__ = [
    "CaricatureError", "JointOverlapError", "TraceError",
    "GraphConsistencyError", "Joint", "NodalGraph", "PerturbationExperiment",
    "build_joints", "joint_boundary_signs", "trace_edges", "perturb",
    "blinking_count", "resolve_graph", "caricature_decomposition",
    "graph_to_text", "signs_to_text", "parse_graph_text",
]

# geometry of a joint, in multiples of its chart scale delta
TERMINAL_INNER = 2.0          # |X1| where terminals begin
TERMINAL_OUTER = 3.0          # |X1| where the joint ends
C_JOINT_DEFAULT = 0.1
JOINT_MARGIN = 1.05           # safety factor in the disjointness test

# curve tracer
STEP_WAVELENGTH_FRACTION = 0.1
STEP_DELTA_FRACTION = 0.25
CORRECTOR_TOL = 1e-11         # |f| after projection back onto the zero set
CORRECTOR_MAX_NEWTON = 6
MAX_STEP_HALVINGS = 16
RUNAWAY_ANGLE = 10.0          # arc length bound, radians (10 sphere radii)

# census support: a saddle with value f0 and eigenvalue magnitudes (a, b)
# carries an avoided-crossing channel of half-width w = sqrt(2|f0|/b) running
# the length of the joint (~delta).  The marching census resolves the
# crossing correctly when grid vertices land inside the channel strip; the
# expected number is about 8 w delta / h^2, so the grid is sized by the
# geometric mean of the two scales.  h <= 0.7 sqrt(w delta) keeps the
# expectation around 16; a rotation sweep (see tests) showed no failures
# down to about 4.
RESOLVE_SAFETY = 0.7
MIN_TRACE_OVERSAMPLE = 6.0


class CaricatureError(RuntimeError):
    """A caricature-stage operation could not complete."""


class JointOverlapError(CaricatureError):
    """Joints stayed overlapping after the allowed shrinking attempts."""

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = tuple(pairs)


class TraceError(CaricatureError):
    """The curve tracer failed to advance or ran away."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class GraphConsistencyError(CaricatureError):
    """A structural identity of the traced graph failed."""


# --------------------------------------------------------------------------
# joints
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Joint:
    """Chart box around an almost-singular saddle.

    In the Hessian-aligned tangent frame the field is modeled by
    ``value + sign_axis1 * (a*X1^2 - b*X2^2) / 2`` with natural-unit
    coordinates; ``a <= b`` are the eigenvalue magnitudes and ``sign_axis1``
    is the sign of the eigenvalue along ``e1``.  The joint region is
    ``{|a*X1^2 - b*X2^2| <= a*delta^2, |X1| <= 3*delta}``; its four
    terminals are the quadrant pieces with ``2*delta <= |X1| <= 3*delta``,
    numbered counterclockwise from the (+,+) quadrant.
    """

    saddle: CriticalPoint
    frame: TangentFrame
    a: float
    b: float
    sign_axis1: int
    delta: float
    sigma_angle: float

    def __post_init__(self):
        if not (0.0 < self.a <= self.b):
            raise CaricatureError("eigenvalue magnitudes must satisfy 0 < a <= b")
        if self.sign_axis1 not in (-1, 1):
            raise CaricatureError("sign_axis1 must be -1 or +1")
        if not self.delta > 0.0:
            raise CaricatureError("delta must be positive")

    @property
    def unit(self):
        return self.saddle.location.unit

    @property
    def radius_L(self):
        return self.saddle.location.radius_L

    @property
    def outer_radius(self):
        """Largest natural distance from the center to a joint point."""
        return self.delta * np.sqrt(TERMINAL_OUTER ** 2 + 10.0 * self.a / self.b)

    def chart(self, units):
        """Natural-unit chart coordinates of unit vectors (n, 3) -> (n, 2)."""
        u = np.atleast_2d(np.asarray(units, dtype=float))
        x1 = u @ self.frame.e1
        x2 = u @ self.frame.e2
        return np.stack([x1, x2], axis=1) * self.sigma_angle

    def point_at(self, X):
        """Unit vector at natural chart coordinates (inverse of chart)."""
        x_amb = np.asarray(X, dtype=float) * (self.radius_L / self.sigma_angle)
        return chart_point(self.saddle.location, self.frame, x_amb).unit

    def hyperbola(self, X):
        """The unsigned separating form a*X1^2 - b*X2^2."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.a * X[:, 0] ** 2 - self.b * X[:, 1] ** 2

    def quad_form(self, X):
        """Signed frozen-Hessian quadratic ``<Hess X, X>`` (natural units)."""
        return self.sign_axis1 * self.hyperbola(X)

    def in_joint(self, X, pad=0.0):
        """Membership in the joint region (vectorized)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        h = self.hyperbola(X)
        lim = self.a * self.delta ** 2
        return ((np.abs(h) <= lim + pad * lim)
                & (np.abs(X[:, 0]) <= self.delta * (TERMINAL_OUTER + pad)))

    def terminal_slot(self, X):
        """Terminal index 0..3 of a chart point, or -1 when not in one."""
        X = np.asarray(X, dtype=float).reshape(2)
        if not self.in_joint(X[None, :])[0]:
            return -1
        if not TERMINAL_INNER * self.delta <= abs(X[0]) <= TERMINAL_OUTER * self.delta:
            return -1
        if X[1] == 0.0:
            return -1
        if X[0] > 0.0:
            return 0 if X[1] > 0.0 else 3
        return 1 if X[1] > 0.0 else 2

    def terminal_outer_segment(self, slot):
        """Endpoints of the outer vertical face of a terminal.

        Returns ``(X_plus, X_minus)`` in natural chart coordinates, where the
        separating form equals ``+a*delta^2`` at ``X_plus`` and
        ``-a*delta^2`` at ``X_minus``; the traced zero curve crosses this
        segment exactly once.
        """
        if slot not in (0, 1, 2, 3):
            raise ValueError("terminal slot must be 0..3")
        s1 = 1.0 if slot in (0, 3) else -1.0
        s2 = 1.0 if slot in (0, 1) else -1.0
        d = self.delta
        x1 = s1 * TERMINAL_OUTER * d
        ratio = self.a / self.b
        lo = s2 * np.sqrt((TERMINAL_OUTER ** 2 - 1.0) * ratio) * d
        hi = s2 * np.sqrt((TERMINAL_OUTER ** 2 + 1.0) * ratio) * d
        return np.array([x1, lo]), np.array([x1, hi])

    def state_for_sign(self, sign_value):
        """Avoided-crossing state selected by the sign of the field value.

        State 0 pairs terminals (0,1) and (2,3) (branches open along the
        ``X2`` axis); state 1 pairs (0,3) and (1,2).  The zero level of
        ``value + sign_axis1*(a*X1^2 - b*X2^2)/2`` opens along ``X2``
        exactly when ``value*sign_axis1 > 0``.
        """
        s = int(np.sign(sign_value))
        if s == 0:
            raise CaricatureError("cannot resolve a joint from a zero value")
        return 0 if s * self.sign_axis1 > 0 else 1


def _joint_for_saddle(sample, point, c_joint, scale_bound, sigma_angle):
    """Construct the Hessian-aligned joint of one saddle."""
    frame0 = frame_at(point.location.unit)
    jet = sample.jet(point.location, frame0)
    s_amb = sigma_angle / point.location.radius_L
    hess_nat = np.asarray(jet.hess, dtype=float) / s_amb ** 2
    w, v = np.linalg.eigh(hess_nat)
    if not w[0] < 0.0 < w[1]:
        raise CaricatureError("joint requested at a non-saddle point")
    i_small = int(np.argmin(np.abs(w)))
    a = float(abs(w[i_small]))
    b = float(abs(w[1 - i_small]))
    e1 = v[0, i_small] * frame0.e1 + v[1, i_small] * frame0.e2
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(point.location.unit, e1)
    frame = TangentFrame(point.location.unit, e1, e2)
    delta = c_joint / (scale_bound * (1.0 / a))
    return Joint(saddle=point, frame=frame, a=a, b=b,
                 sign_axis1=int(np.sign(w[i_small])), delta=float(delta),
                 sigma_angle=float(sigma_angle))


def _saddle_members(saddles):
    members = saddles.members if isinstance(saddles, CrSet) else tuple(saddles)
    for p in members:
        if p.kind != "saddle":
            raise CaricatureError("build_joints needs saddle points, got %r"
                                  % (p.kind,))
    return members


def build_joints(sample, saddles, c_joint=C_JOINT_DEFAULT, *,
                 max_halvings=3, all_points=None, diagnostics=None):
    """Joints for the given saddles, shrunk until pairwise disjoint.

    ``c_joint`` sets the chart scale ``delta = c_joint * a / A`` per saddle
    (the inverse smallest-eigenvalue magnitude times the measured third-
    derivative scale bound).  If two joints overlap, ``c_joint`` is halved
    for all of them, at most ``max_halvings`` times, after which
    :class:`JointOverlapError` reports the offending pairs.  When
    ``all_points`` (the sample's full critical list) is given, each joint is
    verified to contain exactly one critical point.
    """
    members = _saddle_members(saddles)
    if not 0.0 < c_joint < 1.0:
        raise ValueError("c_joint must lie in (0, 1)")
    spec = sample.spec
    sigma_angle = float(np.sqrt(spec.grad_sigma2)) * sample.radius_L
    if not members:
        if diagnostics is not None:
            diagnostics.update({"n_joints": 0, "c_joint_used": c_joint,
                                "n_halvings": 0})
        return ()
    scale = measure_c3_scale(sample)
    scale = max(scale, max(max(abs(p.mu1), abs(p.mu2)) for p in members))

    units = np.array([p.location.unit for p in members])
    cosd = np.clip(units @ units.T, -1.0, 1.0)
    sep_nat = np.arccos(cosd) * sigma_angle

    c_used = c_joint
    n_halvings = 0
    while True:
        joints = tuple(_joint_for_saddle(sample, p, c_used, scale, sigma_angle)
                       for p in members)
        radii = np.array([j.outer_radius for j in joints])
        need = JOINT_MARGIN * (radii[:, None] + radii[None, :])
        bad = (sep_nat <= need) & ~np.eye(len(joints), dtype=bool)
        if not bad.any():
            break
        if n_halvings >= max_halvings:
            pairs = [(int(i), int(j), float(sep_nat[i, j]), float(need[i, j]))
                     for i, j in zip(*np.nonzero(np.triu(bad)))]
            raise JointOverlapError(
                "joints still overlap after %d halvings; saddles too close "
                "for the regime (worst pair separation %.3g, needed %.3g)"
                % (n_halvings, min(p[2] for p in pairs),
                   max(p[3] for p in pairs)), pairs)
        c_used *= 0.5
        n_halvings += 1

    if all_points is not None:
        all_units = np.array([p.location.unit for p in all_points])
        for idx, j in enumerate(joints):
            # chart containment only means anything on the near side
            ang = np.arccos(np.clip(all_units @ j.unit, -1.0, 1.0))
            close = all_units[ang * sigma_angle <= 1.5 * j.outer_radius]
            inside = int(np.count_nonzero(j.in_joint(j.chart(close)))) \
                if close.size else 0
            if inside != 1:
                raise CaricatureError(
                    "joint %d contains %d critical points instead of 1"
                    % (idx, inside))

    if diagnostics is not None:
        off = np.where(np.eye(len(joints), dtype=bool), np.inf, sep_nat)
        diagnostics.update({
            "n_joints": len(joints), "c_joint_used": c_used,
            "n_halvings": n_halvings, "scale_bound": scale,
            "min_separation": float(off.min()) if len(joints) > 1 else np.inf,
        })
    return joints


def joint_boundary_signs(sample, joint, n_points=64):
    """Sign check of the field on the curvilinear joint boundary.

    On ``{|a*X1^2 - b*X2^2| = a*delta^2, |X1| <= 3*delta}`` the field must
    be nonzero with the sign of the frozen quadratic.  Returns a report with
    the violation count and the smallest correctly-signed margin.
    """
    d = joint.delta
    ratio = joint.a / joint.b
    quarter = max(2, n_points // 4)
    eighth = max(1, quarter // 2)
    XX = []
    expected = []
    # two hyperbola arms where the form is +a*delta^2
    for arm in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            x1 = arm * np.linspace(1.0, TERMINAL_OUTER, eighth) * d
            x2 = s2 * np.sqrt(np.maximum(x1 ** 2 - d ** 2, 0.0) * ratio)
            XX.append(np.stack([x1, x2], axis=1))
            expected.append(np.full(eighth, joint.sign_axis1))
    # two branches where the form is -a*delta^2
    for s2 in (1.0, -1.0):
        x1 = np.linspace(-TERMINAL_OUTER, TERMINAL_OUTER, quarter) * d
        x2 = s2 * np.sqrt((x1 ** 2 + d ** 2) * ratio)
        XX.append(np.stack([x1, x2], axis=1))
        expected.append(np.full(quarter, -joint.sign_axis1))
    X = np.concatenate(XX)
    want = np.concatenate(expected)
    pts = np.array([joint.point_at(x) for x in X])
    vals = sample.values(pts)
    signed = vals * want
    n_viol = int(np.count_nonzero(signed <= 0.0))
    return {"ok": n_viol == 0, "n_checked": int(X.shape[0]),
            "n_violations": n_viol,
            "min_margin": float(signed.min()),
            "predicted_margin": float(joint.a * d ** 2 / 2.0)}


# --------------------------------------------------------------------------
# traced nodal graph
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NodalGraph:
    """4-regular graph of joints connected by traced zero-curve arcs.

    Half-edge ``4*v + k`` is terminal ``k`` (counterclockwise) of joint
    ``v``; ``pairing`` is the fixed-point-free involution matching the two
    ends of every traced arc.  ``free_loops`` counts the zero-set components
    that touch no joint, out of ``census_loops`` marching-census curves.
    """

    joints: tuple
    pairing: np.ndarray
    edges: tuple
    arcs: tuple = dataclass_field(repr=False, default=())
    free_loops: int = 0
    census_loops: int = 0
    claimed_curves: tuple = ()
    grid: object = dataclass_field(repr=False, default=None)
    grid_signs: np.ndarray = dataclass_field(repr=False, default=None)
    diagnostics: dict = dataclass_field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.joints)

    @property
    def n_edges(self):
        return len(self.edges)

    def resolve(self, signs):
        return resolve_graph(self, signs)


def _evaluate_many(sample, units):
    """Values and ambient gradients in one synthesis pass when possible."""
    u = np.atleast_2d(np.asarray(units, dtype=float))
    st = np.hypot(u[:, 0], u[:, 1])
    if hasattr(sample, "theta_phi_jets") and np.all(st >= POLE_SIN):
        raw = sample.theta_phi_jets(u)
        ct = u[:, 2]
        ph = np.arctan2(u[:, 1], u[:, 0])
        cp, sp = np.cos(ph), np.sin(ph)
        e_th = np.stack([ct * cp, ct * sp, -st], axis=1)
        e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
        L = sample.radius_L
        g = ((raw[:, 1] / L)[:, None] * e_th
             + (raw[:, 2] / (st * L))[:, None] * e_ph)
        return raw[:, 0], g
    return sample.values(u), sample.gradients(u)


def _find_terminal_crossings(sample, joints):
    """Zero crossing on the outer vertical face of every terminal.

    Uses bisection between the segment endpoints, whose signs are opposite
    by the boundary sign rule; a wrong endpoint sign aborts (the field value
    at the saddle is too large for the joint scale).
    """
    n = len(joints)
    lo = np.empty((4 * n, 2))
    hi = np.empty((4 * n, 2))
    owner = []
    for j, joint in enumerate(joints):
        for k in range(4):
            xp, xm = joint.terminal_outer_segment(k)
            lo[4 * j + k] = xp
            hi[4 * j + k] = xm
            owner.append((j, k))

    def points_at(X):
        return np.array([joints[j].point_at(X[4 * j + k])
                         for j, k in owner])

    f_lo = sample.values(points_at(lo))
    f_hi = sample.values(points_at(hi))
    for h, (j, k) in enumerate(owner):
        s = joints[j].sign_axis1
        if not (f_lo[h] * s > 0.0 and f_hi[h] * s < 0.0):
            raise CaricatureError(
                "zero curve does not cross terminal %d of joint %d as the "
                "boundary sign rule requires (values %.3g, %.3g); the saddle "
                "value is too large for the joint scale" % (k, j, f_lo[h],
                                                            f_hi[h]))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = sample.values(points_at(mid))
        take_lo = f_mid * f_lo > 0.0
        lo[take_lo] = mid[take_lo]
        hi[~take_lo] = mid[~take_lo]
    mid = 0.5 * (lo + hi)
    return mid, np.array([joints[j].point_at(mid[4 * j + k])
                          for j, k in owner])


def _resolving_scale(joints, values):
    """Natural grid arc that separates every joint's zero strands.

    ``values`` are the field values at the joint saddles (of whichever field
    the census will run on).
    """
    scales = []
    for j, v in zip(joints, values):
        if v == 0.0:
            raise CaricatureError(
                "saddle value is exactly zero; strand separation undefined")
        w = np.sqrt(2.0 * abs(v) / j.b)
        scales.append(np.sqrt(w * j.delta))
    return RESOLVE_SAFETY * min(scales)


def _grid_for_widths(spec, h_req_angle, max_level):
    n = max(1, round(spec.mean_degree))
    lam = census.wavelength_for_degree(n)
    oversample = max(MIN_TRACE_OVERSAMPLE,
                     lam / (h_req_angle * census.GRID_SAFETY))
    return census.build_grid(n, oversample, max_level=max_level)


def _grid_for_trace(sample, joints, grid, max_level):
    """Census grid fine enough to separate every joint's zero strands."""
    if grid is not None:
        return grid
    spec = sample.spec
    if not joints:
        return census.grid_for_sample(sample, MIN_TRACE_OVERSAMPLE,
                                      max_level=max_level)
    sigma_angle = float(np.sqrt(spec.grad_sigma2)) * sample.radius_L
    h_req = _resolving_scale(joints, [j.saddle.value for j in joints])
    return _grid_for_widths(spec, h_req / sigma_angle, max_level)


def trace_edges(sample, joints, step=None, *, grid=None,
                max_level=census.DEFAULT_MAX_LEVEL, diagnostics=None):
    """Trace the zero set between terminals and assemble the nodal graph.

    Every terminal's crossing is followed outward by a tangent predictor and
    a Newton corrector until it enters a terminal of some joint (possibly
    its own source joint).  Tracing both directions of every arc gives a
    reciprocity check for free.  The marching census on a grid fine enough
    to separate all joint strands supplies the total curve count; arcs are
    matched to census curves by nearest-crossing majority vote, the
    unmatched curves are the free loops, and the count of matched curves
    must equal the graph's loop count under the true field signs.
    """
    joints = tuple(joints)
    spec = sample.spec
    sigma_angle = float(np.sqrt(spec.grad_sigma2)) * sample.radius_L
    lam_nat = spec.wavelength_angle * sigma_angle
    grid = _grid_for_trace(sample, joints, grid, max_level)
    curves = census.nodal_curves(sample, grid)
    diag = {
        "grid_level": grid.level,
        "census_loops": int(curves.n_curves),
        "n_joints": len(joints),
    }

    if not joints:
        if diagnostics is not None:
            diagnostics.update(diag)
        return NodalGraph(joints=(), pairing=np.zeros(0, dtype=np.int64),
                          edges=(), arcs=(), free_loops=int(curves.n_curves),
                          census_loops=int(curves.n_curves),
                          claimed_curves=(), grid=grid,
                          grid_signs=curves.signs, diagnostics=diag)

    base_step = step if step is not None \
        else STEP_WAVELENGTH_FRACTION * lam_nat
    if not base_step > 0.0:
        raise ValueError("step must be positive")

    n_half = 4 * len(joints)
    crossings_X, starts = _find_terminal_crossings(sample, joints)
    centers = np.array([j.unit for j in joints])
    radii = np.array([j.outer_radius for j in joints])
    deltas = np.array([j.delta for j in joints])

    # outward pseudo-tangent: +e1 side for slots 0,3; -e1 for slots 1,2
    prev_tan = np.empty((n_half, 3))
    for h in range(n_half):
        j, k = divmod(h, 4)
        prev_tan[h] = (1.0 if k in (0, 3) else -1.0) * joints[j].frame.e1

    pos = starts.copy()
    steps = np.full(n_half, base_step)
    active = np.ones(n_half, dtype=bool)
    departed = np.zeros(n_half, dtype=bool)
    lengths = np.zeros(n_half)
    halvings = np.zeros(n_half, dtype=np.int64)
    retried = np.zeros(n_half, dtype=bool)
    arrival = np.full(n_half, -1, dtype=np.int64)
    polylines = [[starts[h].copy()] for h in range(n_half)]
    min_grad_nat = np.inf
    n_steps_total = 0
    runaway_nat = RUNAWAY_ANGLE * sigma_angle

    while active.any():
        idx = np.nonzero(active)[0]
        P = pos[idx]
        valsP, gradsP = _evaluate_many(sample, P)
        gnorm = np.linalg.norm(gradsP, axis=1)
        min_grad_nat = min(min_grad_nat, float(gnorm.min()) /
                           (sigma_angle / sample.radius_L))
        if np.any(gnorm <= 0.0):
            h = idx[int(np.argmin(gnorm))]
            raise TraceError("vanishing gradient on a traced arc",
                             location=pos[h].copy())
        tang = np.cross(P, gradsP)
        tang /= np.linalg.norm(tang, axis=1, keepdims=True)
        flip = np.einsum("ij,ij->i", tang, prev_tan[idx]) < 0.0
        tang[flip] *= -1.0

        # step limiter: approach a joint's capture zone gradually, and move
        # in small fractions of delta inside it, so no step can jump across
        # a terminal band
        cosd = np.clip(P @ centers.T, -1.0, 1.0)
        d_nat = np.arccos(cosd) * sigma_angle
        eff = np.minimum(steps[idx], base_step)
        for col in range(len(joints)):
            fine = STEP_DELTA_FRACTION * deltas[col]
            gap = d_nat[:, col] - (radii[col] + 4.0 * deltas[col])
            eff = np.minimum(eff, np.maximum(gap, fine))
        theta = eff / sigma_angle

        Q = P + theta[:, None] * tang
        Q /= np.linalg.norm(Q, axis=1, keepdims=True)
        L = sample.radius_L
        conv = np.zeros(idx.size, dtype=bool)
        for _ in range(CORRECTOR_MAX_NEWTON):
            valsQ, gradsQ = _evaluate_many(sample, Q)
            conv = np.abs(valsQ) <= CORRECTOR_TOL
            if conv.all():
                break
            move = ~conv
            g = gradsQ[move]
            g2 = np.einsum("ij,ij->i", g, g) * L
            Q[move] -= (valsQ[move] / g2)[:, None] * g
            Q[move] /= np.linalg.norm(Q[move], axis=1, keepdims=True)
        if not conv.all():
            valsQ = sample.values(Q)
            conv = np.abs(valsQ) <= CORRECTOR_TOL

        n_steps_total += int(conv.sum())
        for i, h in enumerate(idx):
            if not conv[i]:
                steps[h] *= 0.5
                halvings[h] += 1
                if halvings[h] > MAX_STEP_HALVINGS:
                    raise TraceError(
                        "corrector failed to converge after %d step halvings"
                        % MAX_STEP_HALVINGS, location=pos[h].copy())
                continue
            adv = float(np.arccos(np.clip(np.dot(pos[h], Q[i]), -1.0, 1.0)))
            lengths[h] += adv * sigma_angle
            pos[h] = Q[i]
            prev_tan[h] = tang[i]
            polylines[h].append(Q[i].copy())
            steps[h] = min(base_step, steps[h] * 1.3)

            src = h // 4
            if not departed[h]:
                dsrc = np.arccos(np.clip(np.dot(Q[i], centers[src]),
                                         -1.0, 1.0)) * sigma_angle
                if dsrc > 1.2 * radii[src]:
                    departed[h] = True
            cosj = np.clip(centers @ Q[i], -1.0, 1.0)
            dj = np.arccos(cosj) * sigma_angle
            for col in np.nonzero(dj <= radii * 1.01)[0]:
                if col == src and not departed[h]:
                    continue
                X = joints[col].chart(Q[i][None, :])[0]
                if not joints[col].in_joint(X[None, :], pad=1e-9)[0]:
                    continue
                slot = joints[col].terminal_slot(X)
                if slot < 0:
                    # grazing the core: back off and retry with smaller step
                    steps[h] *= 0.5
                    halvings[h] += 1
                    pos[h] = polylines[h][-2]
                    polylines[h].pop()
                    if halvings[h] > MAX_STEP_HALVINGS:
                        raise TraceError("arc entered a joint core without "
                                         "crossing a terminal",
                                         location=Q[i].copy())
                    break
                arrival[h] = 4 * col + slot
                active[h] = False
                break
            if active[h] and lengths[h] > runaway_nat:
                if retried[h]:
                    raise TraceError("arc exceeded the runaway length bound",
                                     location=pos[h].copy())
                retried[h] = True
                pos[h] = starts[h]
                j0, k0 = divmod(h, 4)
                prev_tan[h] = (1.0 if k0 in (0, 3) else -1.0) * \
                    joints[j0].frame.e1
                lengths[h] = 0.0
                departed[h] = False
                steps[h] = 0.5 * base_step
                polylines[h] = [starts[h].copy()]

    pairing = arrival
    if np.any(pairing < 0):
        raise GraphConsistencyError("untraced terminal remained")
    if np.any(pairing == np.arange(n_half)):
        raise GraphConsistencyError("arc returned to its own terminal")
    if not np.array_equal(pairing[pairing], np.arange(n_half)):
        raise GraphConsistencyError(
            "forward and backward traces disagree on the terminal pairing")

    edges = tuple((int(h), int(pairing[h])) for h in range(n_half)
                  if h < pairing[h])
    arcs = tuple(np.array(polylines[h]) for h, _ in edges)

    # match every arc to a census curve by nearest-crossing majority vote
    tree = cKDTree(curves.points)
    clear_nat = 1.5 * radii
    claims = {}
    vote_margins = []
    for h in range(n_half):
        pts = np.array(polylines[h])
        cosd = np.clip(pts @ centers.T, -1.0, 1.0)
        dj = np.arccos(cosd) * sigma_angle
        keep = np.all(dj > clear_nat[None, :], axis=1)
        if not keep.any():
            keep[:] = True
        _, nearest = tree.query(pts[keep])
        labels, counts = np.unique(curves.labels[nearest], return_counts=True)
        top = int(np.argmax(counts))
        margin = counts[top] / counts.sum()
        vote_margins.append(float(margin))
        if margin < 0.6:
            raise GraphConsistencyError(
                "ambiguous arc-to-curve vote (margin %.2f) for half-edge %d"
                % (margin, h))
        claims[h] = int(labels[top])
    for h, h2 in edges:
        if claims[h] != claims[h2]:
            raise GraphConsistencyError(
                "the two directed traces of an edge matched different "
                "census curves (%d vs %d)" % (claims[h], claims[h2]))
    claimed = tuple(sorted(set(claims.values())))
    free_loops = int(curves.n_curves) - len(claimed)

    true_signs = {j: np.sign(joint.saddle.value)
                  for j, joint in enumerate(joints)}
    diag.update({
        "min_grad_nat": float(min_grad_nat),
        "n_steps": n_steps_total,
        "base_step": float(base_step),
        "vote_margin_min": float(min(vote_margins)),
        "n_claimed": len(claimed),
    })
    graph = NodalGraph(joints=joints, pairing=pairing, edges=edges, arcs=arcs,
                       free_loops=free_loops,
                       census_loops=int(curves.n_curves),
                       claimed_curves=claimed, grid=grid,
                       grid_signs=curves.signs, diagnostics=diag)
    resolved_true = resolve_graph(graph, true_signs)
    if resolved_true != len(claimed):
        raise GraphConsistencyError(
            "graph resolved with the true signs gives %d loops but %d census "
            "curves pass through joints (grid level %d); the census grid "
            "cannot separate some joint's strands"
            % (resolved_true, len(claimed), grid.level))
    if diagnostics is not None:
        diagnostics.update(diag)
    return graph


def resolve_graph(graph, signs):
    """Loop count of the graph once every joint is resolved by a sign.

    ``signs`` maps joint index to the (nonzero) field value or sign at the
    saddle; each joint turns into one of its two avoided crossings and the
    resulting closed curves are counted by half-edge traversal.
    """
    n = graph.n_vertices
    if n == 0:
        return 0
    missing = [v for v in range(n) if v not in signs]
    if missing:
        raise CaricatureError("missing signs for joints %r" % (missing,))
    states = [graph.joints[v].state_for_sign(signs[v]) for v in range(n)]
    pairing = graph.pairing
    visited = np.zeros(4 * n, dtype=bool)
    loops = 0
    for h0 in range(4 * n):
        if visited[h0]:
            continue
        h = h0
        while True:
            visited[h] = True
            g = int(pairing[h])
            visited[g] = True
            v, k = divmod(g, 4)
            k2 = (k ^ 1) if states[v] == 0 else (3 - k)
            h = 4 * v + k2
            if h == h0:
                break
        loops += 1
    return loops


# --------------------------------------------------------------------------
# graph export
# --------------------------------------------------------------------------

def graph_to_text(graph):
    """Plain-text export: header ``V E``, rotation lines, pairing lines."""
    lines = ["%d %d" % (graph.n_vertices, graph.n_edges)]
    for v in range(graph.n_vertices):
        lines.append("%d %d %d %d" % tuple(4 * v + k for k in range(4)))
    for h, h2 in graph.edges:
        lines.append("%d %d" % (h, h2))
    return "\n".join(lines) + "\n"


def signs_to_text(signs, n_vertices):
    """Two-column export of joint signs: ``vertex sign`` per line."""
    lines = []
    for v in range(n_vertices):
        if v not in signs:
            raise CaricatureError("missing signs for joints %r" % ([v],))
        lines.append("%d %d" % (v, 1 if signs[v] > 0 else -1))
    return "\n".join(lines) + "\n"


def parse_graph_text(text):
    """Inverse of :func:`graph_to_text`: returns (rotations, pairing)."""
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    n_v, n_e = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + n_v + n_e:
        raise ValueError("graph text has %d lines, expected %d"
                         % (len(rows), 1 + n_v + n_e))
    rotations = np.array([[int(x) for x in rows[1 + v]] for v in range(n_v)],
                         dtype=np.int64)
    pairing = np.full(4 * n_v, -1, dtype=np.int64)
    for r in rows[1 + n_v:]:
        h, h2 = int(r[0]), int(r[1])
        pairing[h] = h2
        pairing[h2] = h
    if n_e and (np.any(pairing < 0)
                or not np.array_equal(pairing[pairing],
                                      np.arange(4 * n_v))):
        raise ValueError("pairing lines do not form a full involution")
    return rotations, pairing


# --------------------------------------------------------------------------
# perturbation
# --------------------------------------------------------------------------

def perturb(f, g, alpha_prime):
    """Variance-preserving blend ``sqrt(1 - t^2) f + t g`` of two samples.

    The result is a full :class:`FieldSample` (its coefficients are the same
    blend), so jets, censuses, and critical-point machinery all apply to it
    directly.  Requires matching ensembles and ``0 <= alpha_prime <= 1``.
    """
    if f.spec.to_config() != g.spec.to_config():
        raise ValueError("samples come from different ensembles")
    t = float(alpha_prime)
    if not 0.0 <= t <= 1.0:
        raise ValueError("alpha_prime must lie in [0, 1]")
    if t == 0.0:
        return f
    if t == 1.0:
        return g
    coeffs = np.sqrt(1.0 - t * t) * f.coeffs + t * g.coeffs
    return FieldSample(f.spec, coeffs, seed=("blend", f.seed, g.seed, t))


@dataclass
class PerturbationExperiment:
    """One perturbation trial: fields, blend weight, and the loop accounting.

    ``signs`` maps ``("saddle", i)`` / ``("extremum", i)`` (indices into the
    low-value critical subsets) to the sign of the blended field there;
    ``counts`` holds N_I (stable loops), N_II (circles at low extrema),
    N_III (resolved graph loops), and N_direct (census of the blend);
    ``regime`` reports each smallness predicate with its factor-10 margin.
    """

    f: FieldSample
    g: FieldSample
    alpha_prime: float
    alpha: float
    beta: float = None
    c_joint: float = C_JOINT_DEFAULT
    tilde: FieldSample = dataclass_field(init=False, repr=False, default=None)
    signs: dict = dataclass_field(init=False, default_factory=dict)
    counts: dict = dataclass_field(init=False, default=None)
    match: bool = dataclass_field(init=False, default=None)
    regime: dict = dataclass_field(init=False, default=None)
    regime_ok: bool = dataclass_field(init=False, default=None)
    exclusions: list = dataclass_field(init=False, default_factory=list)
    records: dict = dataclass_field(init=False, default_factory=dict)

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.alpha_prime < 1.0:
            raise ValueError("alpha_prime must lie in [0, 1)")
        self.tilde = perturb(self.f, self.g, self.alpha_prime)


def blinking_count(experiment, extrema, *, verify_limit=8):
    """Number of low extrema whose blended value opposes their Hessian sign.

    A circle of the blend's zero set surrounds a low extremum exactly when
    the blended value there has the sign opposite to the (common) Hessian
    eigenvalue sign.  Up to ``verify_limit`` counted and uncounted points
    are verified by a polar mini-census of the blend on the extremum's
    chart disk; a disagreement excludes the point from the count and is
    logged on the experiment.
    """
    members = extrema.members if isinstance(extrema, CrSet) else tuple(extrema)
    for p in members:
        if p.kind not in ("min", "max"):
            raise CaricatureError(
                "blinking_count needs extrema, got %r" % (p.kind,))
    tilde = experiment.tilde
    spec = tilde.spec
    sigma_angle = float(np.sqrt(spec.grad_sigma2)) * tilde.radius_L
    scale = measure_c3_scale(experiment.f)
    verify = {"checked": [], "disagreements": []}
    n_counted = 0
    budget_on = budget_off = verify_limit

    if members:
        units = np.array([p.location.unit for p in members])
        tvals = tilde.values(units)
    for i, p in enumerate(members):
        hsign = 1.0 if p.kind == "min" else -1.0
        counted = tvals[i] * hsign < 0.0
        budget = budget_on if counted else budget_off
        if budget > 0:
            delta_p = C_JOINT_DEFAULT / (scale * p.inv_hess_norm)
            ok = _verify_blink_disk(tilde, p, counted, hsign, tvals[i],
                                    delta_p, sigma_angle)
            verify["checked"].append({"index": i, "counted": bool(counted),
                                      "ok": bool(ok)})
            if counted:
                budget_on -= 1
            else:
                budget_off -= 1
            if not ok:
                verify["disagreements"].append(i)
                experiment.exclusions.append(
                    ("blinking", i, "disk census disagrees with sign rule"))
                continue
        if counted:
            n_counted += 1
    experiment.records["blinking"] = verify
    return n_counted


def _verify_blink_disk(tilde, point, counted, hsign, center_value, delta_p,
                       sigma_angle, n_rays=24, n_radii=16):
    """Polar mini-census of the blend on the extremum's chart disk.

    With a circle present: the innermost ring (well inside the predicted
    circle radius) carries the center's sign, every ray changes sign exactly
    once, and the disk boundary carries ``hsign``.  Without one: the whole
    disk carries ``hsign``.
    """
    frame = frame_at(point.location.unit)
    phis = 2.0 * np.pi * np.arange(n_rays) / n_rays
    if counted:
        mu_hi = max(abs(point.mu1), abs(point.mu2))
        r_lo = np.sqrt(2.0 * abs(center_value) / mu_hi) / 3.0
    else:
        r_lo = delta_p / 100.0
    if not 0.0 < r_lo < delta_p:
        return False
    radii = np.geomspace(r_lo, delta_p, n_radii)
    dirs = np.stack([np.cos(phis), np.sin(phis)], axis=1)
    X = radii[:, None, None] * dirs[None, :, :]
    x_amb = X.reshape(-1, 2) * (point.location.radius_L / sigma_angle)
    pts = np.array([chart_point(point.location, frame, x).unit
                    for x in x_amb])
    vals = tilde.values(pts).reshape(n_radii, n_rays)
    signs = np.sign(vals)
    if np.any(signs == 0.0):
        return False
    if np.any(signs[-1] != hsign):
        return False
    if not counted:
        return bool(np.all(signs == hsign))
    flips = np.count_nonzero(signs[:-1] != signs[1:], axis=0)
    starts_inner = signs[0] == -hsign
    return bool(np.all(starts_inner) and np.all(flips == 1))


# --------------------------------------------------------------------------
# sub-cell circle supplement for the census
# --------------------------------------------------------------------------

def _census_circle_supplement(values_at_extrema, extrema, grid, grid_signs,
                              vertex_tree, sigma_angle, nearest_other_nat,
                              exclusions, tag):
    """Count zero-set circles around extrema that the grid cannot see.

    For each extremum whose value opposes its Hessian sign, a circle of
    radius about ``sqrt(2|v|/mu)`` surrounds it.  Circles wider than a grid
    cell are guaranteed to contain a vertex of their inner sign; smaller
    ones are checked against the actual grid signs within an enclosing
    radius, and counted as grid-missed when no inner-sign vertex exists.
    """
    h_angle = grid.h
    missed = []
    for i, p in enumerate(extrema):
        v = float(values_at_extrema[i])
        hsign = 1.0 if p.kind == "min" else -1.0
        if not v * hsign < 0.0:
            continue
        mu_lo = min(abs(p.mu1), abs(p.mu2))
        mu_hi = max(abs(p.mu1), abs(p.mu2))
        r_in_angle = np.sqrt(2.0 * abs(v) / mu_hi) / sigma_angle
        if r_in_angle >= h_angle:
            continue
        r_enc_nat = 1.5 * np.sqrt(2.0 * abs(v) / mu_lo)
        if r_enc_nat > 0.45 * nearest_other_nat[i]:
            exclusions.append((tag, i,
                               "cannot certify circle visibility: enclosing "
                               "radius reaches a neighboring critical point"))
            continue
        chord = 2.0 * np.sin(min(r_enc_nat / sigma_angle, np.pi / 2) / 2.0)
        idx = vertex_tree.query_ball_point(p.location.unit, chord)
        inner = 1 if v > 0.0 else -1
        if not any(grid_signs[q] == inner for q in idx):
            missed.append(i)
    return missed


# --------------------------------------------------------------------------
# the decomposition
# --------------------------------------------------------------------------

def _regime_report(experiment, scale, delta_meas, min_tilde_cr):
    """Factor-10 smallness predicates of the perturbation regime."""
    alpha = experiment.alpha
    ap = experiment.alpha_prime
    A, D = scale, delta_meas
    lo = 10.0 * alpha * (A * D) ** 2
    hi = np.sqrt(alpha / (10.0 * A * D ** 2))
    beta = experiment.beta if experiment.beta is not None else \
        float(np.sqrt(lo * hi)) if lo < hi else float(lo)
    regime = {
        "perturbation_small": {
            "value": A * ap, "bound": alpha / 10.0,
            "ok": A * ap <= alpha / 10.0},
        "gradient_window_low": {
            "value": lo, "bound": beta, "ok": lo <= beta},
        "gradient_window_high": {
            "value": 10.0 * A * D ** 2 * beta ** 2, "bound": alpha,
            "ok": 10.0 * A * D ** 2 * beta ** 2 <= alpha},
        "joint_scale_small": {
            "value": 10.0 * A ** 2 * D ** 3 * alpha, "bound": 1.0,
            "ok": 10.0 * A ** 2 * D ** 3 * alpha <= 1.0},
    }
    clear = {"value": min_tilde_cr, "bound": 10.0 * A * D ** 2 * alpha ** 2}
    clear["ok"] = (min_tilde_cr is None
                   or min_tilde_cr >= clear["bound"])
    regime["saddle_values_clear"] = clear
    regime["beta_used"] = beta
    regime["scale_bound"] = A
    regime["delta_measured"] = D
    return regime


def caricature_decomposition(experiment, *, grid=None,
                             max_level=census.DEFAULT_MAX_LEVEL,
                             verify_limit=8, diagnostics=None):
    """Run the full loop accounting for one perturbation experiment.

    Computes N_I (stable loops of the base field), N_II (circles at low
    extrema of the blend), N_III (graph loops resolved by the blend's signs
    at the saddles), and N_direct (marching census of the blend plus the
    sub-cell circle supplement), stores everything on the experiment, and
    returns ``{"N_I", "N_II", "N_III", "N_direct", "match"}``.

    The regime predicates are always reported; ``match`` is computed
    regardless, and an in-regime mismatch writes a full regression record
    (spec config, both coefficient arrays, all parameters) on the
    experiment instead of raising.
    """
    f = experiment.f
    tilde = experiment.tilde
    alpha = experiment.alpha
    spec = f.spec
    sigma_angle = float(np.sqrt(spec.grad_sigma2)) * f.radius_L

    points = find_critical_points(f)
    cr = [p for p in points if abs(p.value) <= alpha]
    saddles = [p for p in cr if p.kind == "saddle"]
    extrema_cr = [p for p in cr if p.kind in ("min", "max")]
    degenerate = [p for p in cr if p.kind == "degenerate"]
    for p in degenerate:
        experiment.exclusions.append(
            ("degenerate", None, "degenerate critical point in the low set"))
    all_extrema = [p for p in points if p.kind in ("min", "max")]

    scale = measure_c3_scale(f)
    delta_meas = max((p.inv_hess_norm for p in cr
                      if np.isfinite(p.inv_hess_norm)), default=1.0)
    min_tilde_cr = None
    if cr:
        cr_units = np.array([p.location.unit for p in cr])
        tilde_at_cr = tilde.values(cr_units)
        min_tilde_cr = float(np.min(np.abs(tilde_at_cr)))
    experiment.regime = _regime_report(experiment, scale, delta_meas,
                                       min_tilde_cr)
    experiment.regime_ok = all(
        v["ok"] for v in experiment.regime.values() if isinstance(v, dict))

    # signs of the blend at every low critical point
    if saddles:
        tilde_at_saddles = tilde.values(
            np.array([p.location.unit for p in saddles]))
        for i, v in enumerate(tilde_at_saddles):
            experiment.signs[("saddle", i)] = int(np.sign(v))
    if extrema_cr:
        tilde_at_ext = tilde.values(
            np.array([p.location.unit for p in extrema_cr]))
        for i, v in enumerate(tilde_at_ext):
            experiment.signs[("extremum", i)] = int(np.sign(v))

    joints = build_joints(f, saddles, experiment.c_joint, all_points=points)
    try:
        graph = trace_edges(f, joints, grid=grid, max_level=max_level)
    except census.ResourceError as exc:
        experiment.records["abort"] = {
            "stage": "trace", "reason": str(exc)}
        experiment.counts = {"N_I": None, "N_II": None, "N_III": None,
                             "N_direct": None}
        experiment.match = None
        return dict(experiment.counts, match=None)

    # distances from each extremum to its nearest other critical point,
    # capping the radius of the supplement's visibility queries
    ext_index = [i for i, p in enumerate(points) if p.kind in ("min", "max")]
    if len(points) > 1:
        all_units = np.array([p.location.unit for p in points])
        cosd = np.clip(all_units @ all_units.T, -1.0, 1.0)
        np.fill_diagonal(cosd, -1.0)
        nearest_nat = np.arccos(np.max(cosd, axis=1)) * sigma_angle
        nearest_ext = nearest_nat[ext_index]
    else:
        nearest_ext = np.full(len(all_extrema), np.inf)

    vertex_tree = cKDTree(graph.grid.vertices)
    ext_units = np.array([p.location.unit for p in all_extrema]) \
        if all_extrema else np.zeros((0, 3))
    f_at_ext = f.values(ext_units) if all_extrema else np.zeros(0)

    miss_f = _census_circle_supplement(
        f_at_ext, all_extrema, graph.grid, graph.grid_signs, vertex_tree,
        sigma_angle, nearest_ext, experiment.exclusions, "supplement_f")

    # circles present in the base field at the low extrema (not stable)
    blink_f = sum(1 for p in extrema_cr
                  if p.value * (1.0 if p.kind == "min" else -1.0) < 0.0)
    n_i = graph.free_loops + len(miss_f) - blink_f

    n_ii = blinking_count(experiment, extrema_cr, verify_limit=verify_limit)

    saddle_signs = {i: experiment.signs[("saddle", i)]
                    for i in range(len(saddles))}
    if any(s == 0 for s in saddle_signs.values()):
        experiment.records["abort"] = {
            "stage": "resolve", "reason": "blend vanishes at a saddle"}
        experiment.counts = {"N_I": n_i, "N_II": n_ii, "N_III": None,
                             "N_direct": None}
        experiment.match = None
        return dict(experiment.counts, match=None)
    n_iii = resolve_graph(graph, saddle_signs)

    # direct census of the blend; reuse the trace grid when it can separate
    # the blend's strands at every joint, otherwise escalate
    grid2 = graph.grid
    if joints:
        h_req = _resolving_scale(joints, tilde_at_saddles) / sigma_angle
        if grid2.h > h_req:
            try:
                grid2 = _grid_for_widths(spec, h_req, max_level)
            except census.ResourceError as exc:
                experiment.records["abort"] = {
                    "stage": "census", "reason": str(exc)}
                experiment.counts = {"N_I": n_i, "N_II": n_ii,
                                     "N_III": n_iii, "N_direct": None}
                experiment.match = None
                return dict(experiment.counts, match=None)
    curves_tilde = census.nodal_curves(tilde, grid2)
    tree2 = vertex_tree if grid2 is graph.grid else cKDTree(grid2.vertices)
    tilde_at_ext_all = tilde.values(ext_units) if all_extrema else np.zeros(0)
    miss_tilde = _census_circle_supplement(
        tilde_at_ext_all, all_extrema, grid2, curves_tilde.signs, tree2,
        sigma_angle, nearest_ext, experiment.exclusions, "supplement_blend")
    n_direct = int(curves_tilde.n_curves) + len(miss_tilde)

    experiment.counts = {"N_I": int(n_i), "N_II": int(n_ii),
                         "N_III": int(n_iii), "N_direct": int(n_direct)}
    experiment.match = bool(n_i + n_ii + n_iii == n_direct)
    experiment.records["graph"] = {
        "n_joints": len(joints), "free_loops": graph.free_loops,
        "census_loops": graph.census_loops, "grid_level": graph.grid.level,
        "census_level_blend": grid2.level,
        "missed_circles_base": len(miss_f),
        "missed_circles_blend": len(miss_tilde),
        "circles_in_base_at_low_extrema": blink_f,
    }
    if diagnostics is not None:
        diagnostics.update(experiment.records["graph"])
    if not experiment.match and experiment.regime_ok \
            and not experiment.exclusions:
        experiment.records["regression"] = {
            "spec": spec.to_config(),
            "f_seed": repr(experiment.f.seed),
            "g_seed": repr(experiment.g.seed),
            "f_coeffs": experiment.f.coeffs.tolist(),
            "g_coeffs": experiment.g.coeffs.tolist(),
            "alpha": alpha, "alpha_prime": experiment.alpha_prime,
            "c_joint": experiment.c_joint,
            "counts": dict(experiment.counts),
        }
    return dict(experiment.counts, match=experiment.match)
