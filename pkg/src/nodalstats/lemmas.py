"""Numerical checks of the analytic ingredients behind loop statistics.

Each operation here verifies one quantitative lemma on concrete finite
instances: the probability of the small-value small-gradient event at one
and two points of a Gaussian field, an explicit coupling that replaces
weakly correlated field values by exactly independent Gaussians, lower
bounds for degree-4 exponential sums against atomic spectral measures
(with zero-count and interval-growth comparisons), anticoncentration of
weighted Bernoulli sums, and the large-sections estimate on finite product
spaces.  Everything is exact enumeration, closed form, or seeded Monte
Carlo with reported standard errors — no symbolic manipulation.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .field import pair_covariance_matrix
from .geometry import SpherePoint, frame_at

__all__ = [
    "LemmaCheckError", "TwoPointEstimate", "SpectralMeasure", "ExpSum",
    "one_point_probability", "estimate_two_point",
    "fit_clustering_exponent", "couple_independent", "exp_sum_lower_bound",
    "langer_zero_count", "turan_comparison", "bernoulli_anticoncentration",
    "large_sections_check", "verdict_json",
]

MIN_EFFECTIVE_COUNT = 100
PILOT_DRAWS = 2000


class LemmaCheckError(RuntimeError):
    """A lemma check could not run on the given instance."""


# --------------------------------------------------------------------------
# one- and two-point functions of the small-value small-gradient event
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoPointEstimate:
    """Monte Carlo estimate of the joint small-event probability by distance.

    The event at a point is {|f| <= alpha, |grad f| <= beta}.  ``p_hat`` is
    its estimated probability (with ``p_exact`` the closed form),
    ``p_hat_xy[i]`` the joint probability at arc distance ``distances[i]``,
    and ``w_hat = p_hat_xy / p_hat**2`` the normalized two-point function.
    Standard errors come from the importance-sampling weight variance.
    """

    alpha: float
    beta: float
    distances: tuple
    p_hat: float
    p_se: float
    p_exact: float
    p_prediction: float
    p_hat_xy: tuple
    xy_se: tuple
    w_hat: tuple
    w_se: tuple
    effective_counts: tuple
    trials: int

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise LemmaCheckError("one-point probability outside [0, 1]")


def one_point_probability(spec, alpha, beta):
    """Exact P{|f| <= alpha, |grad f| <= beta} at a point.

    Value and gradient are independent; the value is standard normal and the
    gradient components are centered normal with variance kappa'(1)/L^2, so
    the gradient norm is Rayleigh.
    """
    if alpha <= 0 or beta <= 0:
        raise LemmaCheckError("alpha and beta must be positive")
    s2 = spec.grad_sigma2
    return math.erf(alpha / math.sqrt(2.0)) * (-math.expm1(-beta * beta
                                                           / (2.0 * s2)))


def _event_box_draws(alpha, beta, n_points, m, rng):
    """Uniform draws from the event box and its volume.

    Coordinates per point: value in [-alpha, alpha], gradient uniform in the
    radius-beta disk.
    """
    cols = []
    for _ in range(n_points):
        vals = rng.uniform(-alpha, alpha, size=m)
        r = beta * np.sqrt(rng.uniform(0.0, 1.0, size=m))
        th = rng.uniform(0.0, 2.0 * np.pi, size=m)
        cols.extend([vals, r * np.cos(th), r * np.sin(th)])
    vol = (2.0 * alpha * np.pi * beta * beta) ** n_points
    return np.stack(cols, axis=1), vol


def _gaussian_box_probability(cov, alpha, beta, m, rng):
    """P{Gaussian(cov) in the event box} by uniform importance sampling.

    Returns (estimate, standard error, effective sample count).
    """
    n_points = cov.shape[0] // 3
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise LemmaCheckError(
            "event covariance is not positive definite (points too close "
            "for this ensemble)")
    z, vol = _event_box_draws(alpha, beta, n_points, m, rng)
    y = np.linalg.solve(chol, z.T)
    log_norm = (-0.5 * cov.shape[0] * math.log(2.0 * math.pi)
                - float(np.sum(np.log(np.diag(chol)))))
    w = vol * np.exp(-0.5 * np.sum(y * y, axis=0) + log_norm)
    est = float(np.mean(w))
    se = float(np.std(w) / math.sqrt(m))
    total = float(np.sum(w))
    ess = total * total / float(np.sum(w * w)) if total > 0 else 0.0
    return est, se, ess


def _pair_points(spec, d, swap_points):
    L = spec.radius_L
    theta = d / L
    pole = np.array([0.0, 0.0, 1.0])
    other = np.array([math.sin(theta), 0.0, math.cos(theta)])
    if swap_points:
        pole, other = other, pole
    return SpherePoint(pole, L), SpherePoint(other, L)


def estimate_two_point(spec, alpha, beta, distances, trials, seed=0,
                       swap_points=False):
    """One- and two-point probabilities of the small event, per distance.

    Samples the exact 6-dimensional Gaussian of (value, gradient) pairs from
    the pair covariance, by uniform importance sampling over the event box
    (direct field-level rejection would almost never accept).  A pilot run
    checks that ``trials`` yields at least ``MIN_EFFECTIVE_COUNT`` effective
    samples per distance bin; distances are arc lengths on the radius-L
    sphere.
    """
    distances = tuple(float(d) for d in distances)
    if not distances:
        raise LemmaCheckError("need at least one distance bin")
    if any(d <= 0 or d >= math.pi * spec.radius_L for d in distances):
        raise LemmaCheckError("distances must lie in (0, pi L)")
    p_exact = one_point_probability(spec, alpha, beta)
    s2 = spec.grad_sigma2
    p_prediction = (alpha * math.sqrt(2.0 / math.pi)
                    * beta * beta / (2.0 * s2))

    covs = []
    for d in distances:
        p, q = _pair_points(spec, d, swap_points)
        covs.append(pair_covariance_matrix(spec, p, q))

    rng = np.random.default_rng(seed)
    pilot = min(int(trials), PILOT_DRAWS)
    if pilot < 10:
        raise LemmaCheckError("need at least 10 trials")
    worst_required = 0
    for cov in covs:
        _, _, ess = _gaussian_box_probability(cov, alpha, beta, pilot, rng)
        rate = max(ess, 1.0) / pilot
        worst_required = max(worst_required,
                             int(math.ceil(MIN_EFFECTIVE_COUNT / rate)))
    if trials < worst_required:
        raise LemmaCheckError(
            "two-point estimate infeasible at %d trials; need at least %d "
            "for %d effective samples per bin"
            % (trials, worst_required, MIN_EFFECTIVE_COUNT))

    cov1 = np.diag([1.0, s2, s2])
    p_hat, p_se, _ = _gaussian_box_probability(cov1, alpha, beta, trials,
                                               rng)
    xy, xy_se, w, w_se, counts = [], [], [], [], []
    for cov in covs:
        est, se, ess = _gaussian_box_probability(cov, alpha, beta, trials,
                                                 rng)
        xy.append(est)
        xy_se.append(se)
        denom = p_hat * p_hat
        w_val = est / denom
        rel = math.sqrt((se / est) ** 2 + 4.0 * (p_se / p_hat) ** 2) \
            if est > 0 else float("inf")
        w.append(w_val)
        w_se.append(w_val * rel if est > 0 else float("inf"))
        counts.append(ess)
    return TwoPointEstimate(
        alpha=float(alpha), beta=float(beta), distances=distances,
        p_hat=p_hat, p_se=p_se, p_exact=p_exact, p_prediction=p_prediction,
        p_hat_xy=tuple(xy), xy_se=tuple(xy_se), w_hat=tuple(w),
        w_se=tuple(w_se), effective_counts=tuple(counts),
        trials=int(trials))


def fit_clustering_exponent(estimate):
    """Weighted log-log fit of W against distance.

    Returns the slope (a nonpositive slope means clustering decays with
    distance), its standard error, and the amplitude exp(intercept)
    interpreted at unit distance.
    """
    d = np.asarray(estimate.distances)
    w = np.asarray(estimate.w_hat)
    se = np.asarray(estimate.w_se)
    if d.size < 2:
        raise LemmaCheckError("need at least two distances to fit")
    x = np.log(d)
    y = np.log(w)
    sig = se / w
    wt = 1.0 / sig ** 2
    xm = np.average(x, weights=wt)
    ym = np.average(y, weights=wt)
    sxx = float(np.sum(wt * (x - xm) ** 2))
    slope = float(np.sum(wt * (x - xm) * (y - ym)) / sxx)
    slope_se = math.sqrt(1.0 / sxx)
    intercept = ym - slope * xm
    return {"slope": slope, "slope_se": slope_se,
            "amplitude": float(math.exp(intercept))}


# --------------------------------------------------------------------------
# independence coupling for weakly correlated Gaussians
# --------------------------------------------------------------------------

def couple_independent(cov, tau):
    """Couple unit-variance Gaussians with an exactly independent family.

    Given the covariance ``cov`` of field values at separated points (unit
    diagonal, small off-diagonal entries), builds a joint Gaussian (f, xi)
    with Cov(f) = cov, xi exactly i.i.d. standard normal, and per-coordinate
    deviation E[(f_i - xi_i)^2] <= (2 tau)^2.  The construction appends
    fresh orthogonal correction directions whose Gram matrix has diagonal
    tau^2 and off-diagonal -cov[i, j]; diagonal dominance of that matrix
    (every off-diagonal row sum < tau^2) is required and then certified by
    an exact factorization.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if cov.shape != (n, n) or not np.allclose(cov, cov.T, atol=1e-12):
        raise LemmaCheckError("covariance must be square symmetric")
    if not np.allclose(np.diag(cov), 1.0, atol=1e-12):
        raise LemmaCheckError("covariance must have unit diagonal")
    if tau <= 0:
        raise LemmaCheckError("tau must be positive")
    off = np.abs(cov - np.diag(np.diag(cov)))
    row_sums = off.sum(axis=1)
    worst = int(np.argmax(row_sums))
    if row_sums[worst] >= tau * tau:
        raise LemmaCheckError(
            "coupling infeasible: row %d off-diagonal sum %.3g >= tau^2 = "
            "%.3g" % (worst, row_sums[worst], tau * tau))
    gamma = -cov + np.diag(np.diag(cov)) + tau * tau * np.eye(n)
    try:
        np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError:
        raise LemmaCheckError("correction Gram matrix is not positive "
                              "definite despite diagonal dominance")
    scale = math.sqrt(1.0 + tau * tau)
    joint = np.empty((2 * n, 2 * n))
    joint[:n, :n] = cov
    joint[:n, n:] = cov / scale
    joint[n:, :n] = cov / scale
    joint[n:, n:] = np.eye(n)
    try:
        chol = np.linalg.cholesky(joint)
    except np.linalg.LinAlgError:
        raise LemmaCheckError("joint coupling covariance is not positive "
                              "definite; cov itself may be degenerate")
    deviation_sq = 2.0 - 2.0 / scale

    def sample(m, seed=0):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((2 * n, int(m)))
        fz = chol @ z
        return fz[:n].T, fz[n:].T

    return {"sample": sample, "max_deviation_bound": 2.0 * tau,
            "deviation_sq": deviation_sq, "gamma": gamma,
            "joint_cov": joint}


# --------------------------------------------------------------------------
# spectral measures and degree-4 exponential sums
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralMeasure:
    """Finite atomic probability measure on the line.

    ``atoms`` is a tuple of (location, mass) with total mass one.  When
    ``period_L`` is set the measure is treated as periodized: its Fourier
    transform has period 2*pi*period_L and evaluation points are wrapped
    into one period first.
    """

    atoms: tuple
    period_L: float = None

    def __post_init__(self):
        atoms = tuple((float(x), float(m)) for x, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise LemmaCheckError("measure needs at least one atom")
        if any(m < 0 for _, m in atoms):
            raise LemmaCheckError("atom masses must be nonnegative")
        total = sum(m for _, m in atoms)
        if abs(total - 1.0) > 1e-12:
            raise LemmaCheckError("atom masses must sum to 1 (got %.15g)"
                                  % total)
        if self.period_L is not None and not self.period_L > 0:
            raise LemmaCheckError("period_L must be positive")

    @property
    def locations(self):
        return np.array([x for x, _ in self.atoms])

    @property
    def masses(self):
        return np.array([m for _, m in self.atoms])

    def second_moment(self):
        return float(np.dot(self.masses, self.locations ** 2))

    def fourier(self, s):
        """Fourier transform sum(mass * exp(-i s location)) at s."""
        s = np.asarray(s, dtype=float)
        if self.period_L is not None:
            period = 2.0 * math.pi * self.period_L
            s = np.mod(s + period / 2.0, period) - period / 2.0
        phase = np.multiply.outer(s, self.locations)
        return np.exp(-1j * phase) @ self.masses

    def integrate(self, fn):
        """Exact quadrature of fn over the atoms."""
        return float(np.dot(self.masses, fn(self.locations)))


@dataclass(frozen=True)
class ExpSum:
    """Degree-4 exponential sum with frequencies (+-delta/2, +-3 delta/2).

    p(xi) = a1 e^{i delta xi / 2} + a2 e^{3 i delta xi / 2}
          + b1 e^{-i delta xi / 2} + b2 e^{-3 i delta xi / 2}.
    The coefficient norm is |a1| + |a2| + |b1| + |b2|.
    """

    a1: complex
    a2: complex
    b1: complex
    b2: complex
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise LemmaCheckError("delta must be positive")

    @property
    def coeff_norm(self):
        return abs(self.a1) + abs(self.a2) + abs(self.b1) + abs(self.b2)

    @property
    def degree(self):
        return 4

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        half = 0.5 * self.delta * xi
        return (self.a1 * np.exp(1j * half)
                + self.a2 * np.exp(3j * half)
                + self.b1 * np.exp(-1j * half)
                + self.b2 * np.exp(-3j * half))


def _adversarial_quadruples(rng, count):
    """Coefficient quadruples stressing the lower bound.

    Includes the pair-cancellation family (a1 = -b1) and the triple-moment
    cancellation family (coefficients proportional to (-3, 1, 3, -1), which
    kills the value, slope, and curvature at the origin), plus random
    perturbations of both.
    """
    quads = [np.array([1.0, 0.0, -1.0, 0.0], dtype=complex),
             np.array([-3.0, 1.0, 3.0, -1.0], dtype=complex)]
    for _ in range(count):
        base = quads[rng.integers(0, 2)].copy()
        base *= np.exp(1j * rng.uniform(0, 2 * np.pi))
        base += 1e-3 * (rng.standard_normal(4)
                        + 1j * rng.standard_normal(4))
        quads.append(base)
    return quads


def exp_sum_lower_bound(rho, delta_grid, coeff_samples, seed=0):
    """Smallest ratio integral(|p|^2 d rho) / (delta^6 ||p||^2) found.

    Searches random coefficient quadruples plus adversarial
    near-cancellation families over the delta grid, evaluating the integral
    exactly over the atoms.  Degenerate zero-norm quadruples are skipped.
    The ratio is strictly positive whenever the measure is not concentrated
    at the origin.
    """
    if not isinstance(rho, SpectralMeasure):
        raise LemmaCheckError("rho must be a SpectralMeasure")
    delta_grid = [float(d) for d in delta_grid]
    if not delta_grid or any(d <= 0 for d in delta_grid):
        raise LemmaCheckError("delta grid must be positive")
    rng = np.random.default_rng(seed)
    quads = [rng.standard_normal(4) + 1j * rng.standard_normal(4)
             for _ in range(int(coeff_samples))]
    quads += _adversarial_quadruples(rng, max(4, coeff_samples // 4))
    best = None
    n_eval = 0
    for delta in delta_grid:
        for q in quads:
            s = ExpSum(a1=q[0], a2=q[1], b1=q[2], b2=q[3], delta=delta)
            norm = s.coeff_norm
            if norm == 0.0:
                continue
            integral = rho.integrate(lambda xi: np.abs(s(xi)) ** 2)
            ratio = integral / (delta ** 6 * norm * norm)
            n_eval += 1
            if best is None or ratio < best["ratio"]:
                best = {"ratio": float(ratio), "delta": delta,
                        "coefficients": [complex(c) for c in q],
                        "integral": float(integral)}
    if best is None:
        raise LemmaCheckError("all coefficient quadruples were degenerate")
    return {"min_ratio": best["ratio"], "argmin": best,
            "n_evaluated": n_eval,
            "second_moment": rho.second_moment()}


# --------------------------------------------------------------------------
# zero counts and interval growth of exponential sums
# --------------------------------------------------------------------------

def _eval_terms(terms, xs):
    total = np.zeros(xs.shape, dtype=complex)
    for coeffs, omega in terms:
        poly = np.polynomial.polynomial.polyval(xs, np.asarray(coeffs,
                                                               dtype=complex))
        total += poly * np.exp(1j * float(omega) * xs)
    return total


def langer_zero_count(terms, interval, subdivisions=10000, rounds=3):
    """Count real zeros of an exponential-polynomial sum on an interval.

    ``terms`` is a sequence of (polynomial coefficients ascending, frequency
    omega); the sum is sum_j poly_j(xi) * exp(i omega_j xi).  Zeros are
    found by sign-change bisection of the real part on a uniform grid with
    local refinement rounds near small-magnitude cells (endpoint and
    tangential zeros are caught by a relative near-zero tolerance); for
    sums that are not real-valued, roots where the imaginary part does not
    also vanish are discarded.  The classical bound is
    (N - 1) + spread * |J| / (2 pi) with N the total term count (degree + 1
    per summand) and spread the frequency range.  The count is a lower
    bound on the true number of zeros — missing one only under-counts,
    which keeps the comparison direction (zeros <= bound) valid.
    """
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise LemmaCheckError("interval must have positive length")
    terms = [(np.trim_zeros(np.asarray(c, dtype=complex), "b"), float(w))
             for c, w in terms]
    terms = [(c, w) for c, w in terms if c.size]
    if not terms:
        raise LemmaCheckError("sum is identically zero")
    n_terms = sum(c.size for c, _ in terms)
    freqs = [w for _, w in terms]
    spread = max(freqs) - min(freqs)
    bound = (n_terms - 1) + spread * (b - a) / (2.0 * math.pi)

    xs = np.linspace(a, b, int(subdivisions) + 1)
    vals = _eval_terms(terms, xs)
    scale = float(np.max(np.abs(vals)))
    if scale == 0.0:
        raise LemmaCheckError("sum is identically zero on the interval")
    is_real = float(np.max(np.abs(vals.imag))) <= 1e-8 * scale
    re = vals.real
    tiny = 1e-12 * scale

    def cell_mask(v0, v1):
        return (np.abs(v0) <= tiny) | (np.abs(v1) <= tiny) | (v0 * v1 < 0)

    v0, v1 = re[:-1], re[1:]
    mask = cell_mask(v0, v1)
    lo = list(xs[:-1][mask])
    hi = list(xs[1:][mask])
    mags = np.minimum(np.abs(v0), np.abs(v1))
    cutoff = float(np.quantile(mags, 0.005))
    sus = ~mask & (mags <= cutoff)
    sus_lo, sus_hi = xs[:-1][sus], xs[1:][sus]
    for _ in range(int(rounds)):
        if sus_lo.size == 0:
            break
        if sus_lo.size > 1000:
            mids = 0.5 * (sus_lo + sus_hi)
            order = np.argsort(np.abs(_eval_terms(terms, mids).real))[:1000]
            sus_lo, sus_hi = sus_lo[order], sus_hi[order]
        offs = np.linspace(0.0, 1.0, 11)
        grid = sus_lo[:, None] + (sus_hi - sus_lo)[:, None] * offs[None, :]
        gv = _eval_terms(terms, grid.ravel()).real.reshape(grid.shape)
        g0, g1 = gv[:, :-1], gv[:, 1:]
        gm = cell_mask(g0, g1)
        lo.extend(grid[:, :-1][gm])
        hi.extend(grid[:, 1:][gm])
        still = ~gm & (np.minimum(np.abs(g0), np.abs(g1)) <= cutoff)
        sus_lo, sus_hi = grid[:, :-1][still], grid[:, 1:][still]

    if lo:
        blo = np.array(lo)
        bhi = np.array(hi)
        flo = _eval_terms(terms, blo).real
        for _ in range(52):
            mid = 0.5 * (blo + bhi)
            fm = _eval_terms(terms, mid).real
            take = flo * fm <= 0
            bhi = np.where(take, mid, bhi)
            blo = np.where(take, blo, mid)
            flo = np.where(take, flo, fm)
        roots = np.sort(0.5 * (blo + bhi))
        if not is_real:
            resid = np.abs(_eval_terms(terms, roots))
            roots = roots[resid <= 1e-8 * scale]
    else:
        roots = np.empty(0)
    dedup = []
    tol = 1e-9 * (b - a)
    for r in roots:
        if not dedup or r - dedup[-1] > tol:
            dedup.append(float(r))
    zeros = len(dedup)
    return {"zeros": zeros, "bound": float(bound), "ok": zeros <= bound,
            "roots": dedup, "n_terms": n_terms, "spread": float(spread),
            "lower_bound_only": True}


def turan_comparison(delta, n_sums, ratios=(2, 4, 8), seed=0,
                     grid_points=2001, base_fraction=0.125):
    """Empirical growth constants of degree-4 sums on nested intervals.

    For random sums S and intervals I inside J with |J| / |I| in ``ratios``,
    measures C = (max_J |S| / max_I |S|)^(1/3) * |I| / |J|, the smallest
    constant consistent with cubic interval growth.  The inner interval
    spans ``base_fraction`` of the period of |S| (a full period would make
    both maxima coincide and the statistic trivial).  Returns per-ratio
    quantiles; the constants are finite by construction and their
    distribution is reported rather than asserted.
    """
    rng = np.random.default_rng(seed)
    if not 0 < base_fraction <= 1:
        raise LemmaCheckError("base_fraction must lie in (0, 1]")
    base_half = base_fraction * math.pi / float(delta)
    out = {}
    for ratio in ratios:
        samples = []
        for _ in range(int(n_sums)):
            q = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            s = ExpSum(a1=q[0], a2=q[1], b1=q[2], b2=q[3],
                       delta=float(delta))
            xi_i = np.linspace(-base_half, base_half, grid_points)
            xi_j = np.linspace(-ratio * base_half, ratio * base_half,
                               grid_points)
            max_i = float(np.max(np.abs(s(xi_i))))
            max_j = float(np.max(np.abs(s(xi_j))))
            if max_i == 0.0:
                continue
            samples.append((max_j / max_i) ** (1.0 / 3.0) / ratio)
        arr = np.array(samples)
        out[int(ratio)] = {
            "n": int(arr.size),
            "median": float(np.median(arr)),
            "q90": float(np.quantile(arr, 0.9)),
            "max": float(np.max(arr)),
        }
    return out


# --------------------------------------------------------------------------
# Bernoulli anticoncentration
# --------------------------------------------------------------------------

MAX_EXACT_BERNOULLI = 20


def bernoulli_anticoncentration(p_vec, q_weight=None, m_grid=None):
    """inf over m of E[(S - m)^2 Q(outcome)] for independent Bernoulli S.

    Exact enumeration over all outcomes (at most 2^20).  ``q_weight`` is a
    weight in [0, 1] per outcome: a callable on the outcome bit matrix, an
    array of length 2^N, or None for the constant weight 1.  The infimum
    over m is attained in closed form at m* = E[S Q] / E[Q]; a grid of m
    values may be supplied for reporting alongside.
    """
    p = np.asarray(p_vec, dtype=float).reshape(-1)
    n = p.size
    if n == 0:
        raise LemmaCheckError("need at least one Bernoulli variable")
    if n > MAX_EXACT_BERNOULLI:
        raise LemmaCheckError(
            "exact enumeration supports at most %d variables (got %d)"
            % (MAX_EXACT_BERNOULLI, n))
    if p.min() < 0.0 or p.max() > 1.0:
        raise LemmaCheckError("probabilities must lie in [0, 1]")
    count = 1 << n
    idx = np.arange(count, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    probs = np.ones(count)
    for j in range(n):
        probs *= np.where(bits[:, j] == 1, p[j], 1.0 - p[j])
    s = bits.sum(axis=1).astype(float)
    if q_weight is None:
        q = np.ones(count)
    elif callable(q_weight):
        q = np.asarray(q_weight(bits), dtype=float).reshape(-1)
    else:
        q = np.asarray(q_weight, dtype=float).reshape(-1)
    if q.shape != (count,):
        raise LemmaCheckError("weight table must cover all 2^N outcomes")
    if q.min() < 0.0 or q.max() > 1.0 + 1e-12:
        raise LemmaCheckError("weights must lie in [0, 1]")
    e_q = float(np.dot(probs, q))
    if e_q <= 0.0:
        raise LemmaCheckError("weight has zero expectation")
    e_sq = float(np.dot(probs, s * q))
    e_s2q = float(np.dot(probs, s * s * q))
    m_star = e_sq / e_q
    value = e_s2q - e_sq * e_sq / e_q
    out = {"value": float(value), "ratio": float(value / n),
           "m_star": float(m_star), "e_q": e_q, "n": int(n)}
    if m_grid is not None:
        grid = np.asarray(m_grid, dtype=float).reshape(-1)
        vals = [float(np.dot(probs, (s - m) ** 2 * q)) for m in grid]
        out["m_grid"] = grid.tolist()
        out["grid_values"] = vals
    return out


# --------------------------------------------------------------------------
# large sections on finite product spaces
# --------------------------------------------------------------------------

def large_sections_check(q_table, x_subset, eps, p1=None, p2=None):
    """Exact check that most of a likely set has near-full sections.

    ``q_table[i, j]`` is a weight in [0, 1] on the product of two finite
    spaces with marginal distributions ``p1``, ``p2`` (uniform by default);
    ``x_subset`` flags the rows forming the event X.  With E[Q] >= 1 - eps
    and P(X) = p >= 2 eps, the rows of X whose section average is at least
    1 - 2 eps / p must carry measure at least p / 2; the verdict reports
    the exact measure and whether the inequality holds.
    """
    q = np.asarray(q_table, dtype=float)
    if q.ndim != 2:
        raise LemmaCheckError("weight table must be 2-dimensional")
    n1, n2 = q.shape
    if q.min() < 0.0 or q.max() > 1.0 + 1e-12:
        raise LemmaCheckError("weights must lie in [0, 1]")
    p1 = np.full(n1, 1.0 / n1) if p1 is None else np.asarray(p1, dtype=float)
    p2 = np.full(n2, 1.0 / n2) if p2 is None else np.asarray(p2, dtype=float)
    for name, vec, size in (("p1", p1, n1), ("p2", p2, n2)):
        if vec.shape != (size,) or vec.min() < 0 \
                or abs(vec.sum() - 1.0) > 1e-12:
            raise LemmaCheckError("%s must be a distribution over %d points"
                                  % (name, size))
    x = np.zeros(n1, dtype=bool)
    x[np.asarray(x_subset, dtype=int)] = True
    p_x = float(p1[x].sum())
    if p_x <= 0.0:
        raise LemmaCheckError("event X has zero measure")
    e_q = float(p1 @ q @ p2)
    if e_q < 1.0 - eps - 1e-12:
        raise LemmaCheckError("E[Q] = %.6g below 1 - eps = %.6g"
                              % (e_q, 1.0 - eps))
    if eps > p_x / 2.0 + 1e-12:
        raise LemmaCheckError("eps = %.6g exceeds P(X)/2 = %.6g"
                              % (eps, p_x / 2.0))
    sections = q @ p2
    section_threshold = 1.0 - 2.0 * eps / p_x
    good = x & (sections >= section_threshold - 1e-12)
    measure = float(p1[good].sum())
    return {"holds": measure >= p_x / 2.0 - 1e-12,
            "measure": measure, "threshold": p_x / 2.0,
            "section_threshold": section_threshold,
            "p_x": p_x, "e_q": e_q}


# --------------------------------------------------------------------------
# verdict serialization
# --------------------------------------------------------------------------

def verdict_json(lemma_id, parameters, constants, passed):
    """One lemma verdict as a JSON line."""
    return json.dumps({"lemma": str(lemma_id), "parameters": parameters,
                       "constants": constants, "pass": bool(passed)},
                      sort_keys=True)
