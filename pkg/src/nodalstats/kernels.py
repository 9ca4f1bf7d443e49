"""Hot numeric kernels.

Two backends (see :mod:`nodalstats.backend`):

* numba build: the ``@njit``-decorated functions below compile when numba is
  active; the spherical-harmonic synthesis kernels parallelize over points.
* numpy fallback: when numba is disabled the ``@njit`` decorator is a no-op,
  so the combinatorial kernels (union-find, marching curves, loop counting)
  run as plain interpreted loops, and the synthesis entry points dispatch to
  vectorized numpy implementations instead of the scalar loops.

All synthesis uses fully normalized associated Legendre functions (geodesy
normalization, no Condon-Shortley factor), stable to degree ~2000:

    P_00 = 1,  P_11 = sqrt(3) sin(theta)
    P_mm = sin(theta) * sqrt((2m+1)/(2m)) * P_(m-1,m-1)
    P_(m+1,m) = sqrt(2m+3) cos(theta) P_mm
    P_lm = a_lm cos(theta) P_(l-1,m) - b_lm P_(l-2,m)

with sum_m P_lm(cos t)^2 = 2l+1. A field sample is

    f = sum_l sum_{m=0..l} P_lm(cos theta) (cc[l,m] cos(m phi) + sc[l,m] sin(m phi)).
"""

import numpy as np

from .backend import HAVE_NUMBA, njit, prange

_SQRT3 = np.sqrt(3.0)

# --------------------------------------------------------------------------
# recurrence coefficient tables, cached per lmax
# --------------------------------------------------------------------------

_TABLES = {}


def legendre_tables(lmax):
    """Coefficient tables for the fully normalized recurrences.

    Returns (sect, arec, brec, c1, c2, d0):
      sect[m]   sectoral factor sqrt((2m+1)/(2m)), m >= 2
      arec[l,m] l-recurrence cos(theta) coefficient
      brec[l,m] l-recurrence lag coefficient
      c1[l,m]   theta-derivative coefficient of P_(l,m-1), m >= 1
      c2[l,m]   theta-derivative coefficient of P_(l,m+1), m >= 1
      d0[l]     dP_l0/dtheta = -d0[l] * P_l1
    """
    tb = _TABLES.get(lmax)
    if tb is not None:
        return tb
    L1 = lmax + 1
    sect = np.zeros(L1)
    for m in range(2, L1):
        sect[m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m))
    arec = np.zeros((L1, L1))
    brec = np.zeros((L1, L1))
    for m in range(L1):
        for l in range(m + 2, L1):
            arec[l, m] = np.sqrt((2.0 * l - 1.0) * (2.0 * l + 1.0) / ((l - m) * (l + m)))
            brec[l, m] = np.sqrt(
                (2.0 * l + 1.0) * (l + m - 1.0) * (l - m - 1.0)
                / ((l - m) * (l + m) * (2.0 * l - 3.0))
            )
    c1 = np.zeros((L1, L1))
    c2 = np.zeros((L1, L1))
    d0 = np.zeros(L1)
    for l in range(1, L1):
        d0[l] = np.sqrt(0.5 * l * (l + 1.0))
        for m in range(1, l + 1):
            fac = np.sqrt(2.0) if m == 1 else 1.0
            c1[l, m] = 0.5 * np.sqrt((l + m) * (l - m + 1.0)) * fac
            if m + 1 <= l:
                c2[l, m] = 0.5 * np.sqrt((l - m) * (l + m + 1.0))
    tb = (sect, arec, brec, c1, c2, d0)
    _TABLES[lmax] = tb
    return tb


# --------------------------------------------------------------------------
# synthesis: values
# --------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _synth_values_nb(cc, sc, sect, arec, brec, ct, st, ph, out):
    L1 = cc.shape[0]
    lmax = L1 - 1
    n = ct.shape[0]
    for i in prange(n):
        t = ct[i]
        u = st[i]
        cp = np.cos(ph[i])
        sp = np.sin(ph[i])
        cm = 1.0
        sm = 0.0
        pmm = 1.0
        total = 0.0
        for m in range(L1):
            if m == 1:
                pmm = _SQRT3 * u
                cm, sm = cp, sp
            elif m >= 2:
                pmm = pmm * u * sect[m]
                c_new = cm * cp - sm * sp
                s_new = sm * cp + cm * sp
                cm, sm = c_new, s_new
            accc = cc[m, m] * pmm
            accs = sc[m, m] * pmm
            p2 = pmm
            if m + 1 <= lmax:
                p1 = np.sqrt(2.0 * m + 3.0) * t * pmm
                accc += cc[m + 1, m] * p1
                accs += sc[m + 1, m] * p1
                for l in range(m + 2, L1):
                    p0 = arec[l, m] * t * p1 - brec[l, m] * p2
                    accc += cc[l, m] * p0
                    accs += sc[l, m] * p0
                    p2 = p1
                    p1 = p0
            total += accc * cm + accs * sm
        out[i] = total


def _synth_values_np(cc, sc, sect, arec, brec, ct, st, ph, out):
    L1 = cc.shape[0]
    lmax = L1 - 1
    total = np.zeros_like(ct)
    pmm = np.ones_like(ct)
    cm = np.ones_like(ct)
    sm = np.zeros_like(ct)
    cp = np.cos(ph)
    sp = np.sin(ph)
    for m in range(L1):
        if m == 1:
            pmm = _SQRT3 * st
            cm, sm = cp.copy(), sp.copy()
        elif m >= 2:
            pmm = pmm * st * sect[m]
            cm, sm = cm * cp - sm * sp, sm * cp + cm * sp
        accc = cc[m, m] * pmm
        accs = sc[m, m] * pmm
        p2 = pmm
        if m + 1 <= lmax:
            p1 = np.sqrt(2.0 * m + 3.0) * ct * pmm
            accc = accc + cc[m + 1, m] * p1
            accs = accs + sc[m + 1, m] * p1
            for l in range(m + 2, L1):
                p0 = arec[l, m] * ct * p1 - brec[l, m] * p2
                accc = accc + cc[l, m] * p0
                accs = accs + sc[l, m] * p0
                p2 = p1
                p1 = p0
        total += accc * cm + accs * sm
    out[:] = total


def synth_values(cc, sc, lmax, ct, st, ph):
    """Field values at points given by cos(theta), sin(theta), phi arrays."""
    sect, arec, brec, _c1, _c2, _d0 = legendre_tables(lmax)
    out = np.empty(ct.shape[0])
    if HAVE_NUMBA:
        _synth_values_nb(cc, sc, sect, arec, brec, ct, st, ph, out)
    else:
        _synth_values_np(cc, sc, sect, arec, brec, ct, st, ph, out)
    return out


# --------------------------------------------------------------------------
# synthesis: jets (value and first/second theta-phi partials)
# --------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _synth_jets_nb(cc, sc, sect, arec, brec, c1, c2, d0, ct, st, ph, out):
    L1 = cc.shape[0]
    lmax = L1 - 1
    n = ct.shape[0]
    for i in prange(n):
        t = ct[i]
        u = st[i]
        P = np.zeros((L1, L1))
        P[0, 0] = 1.0
        for m in range(L1):
            if m == 1:
                P[1, 1] = _SQRT3 * u
            elif m >= 2:
                P[m, m] = P[m - 1, m - 1] * u * sect[m]
            if m + 1 <= lmax:
                P[m + 1, m] = np.sqrt(2.0 * m + 3.0) * t * P[m, m]
            for l in range(m + 2, L1):
                P[l, m] = arec[l, m] * t * P[l - 1, m] - brec[l, m] * P[l - 2, m]
        D = np.zeros((L1, L1))
        for l in range(1, L1):
            D[l, 0] = -d0[l] * P[l, 1]
            for m in range(1, l + 1):
                v = c1[l, m] * P[l, m - 1]
                if m + 1 <= l:
                    v -= c2[l, m] * P[l, m + 1]
                D[l, m] = v
        cp = np.cos(ph[i])
        sp = np.sin(ph[i])
        cot = t / u
        usq = u * u
        f = 0.0
        ft = 0.0
        fp = 0.0
        ftt = 0.0
        ftp = 0.0
        fpp = 0.0
        cm = 1.0
        sm = 0.0
        for m in range(L1):
            if m == 1:
                cm, sm = cp, sp
            elif m >= 2:
                c_new = cm * cp - sm * sp
                s_new = sm * cp + cm * sp
                cm, sm = c_new, s_new
            for l in range(m, L1):
                a = cc[l, m]
                b = sc[l, m]
                if a == 0.0 and b == 0.0:
                    continue
                p = P[l, m]
                dp = D[l, m]
                trc = a * cm + b * sm
                trs = -a * sm + b * cm
                ddp = -cot * dp - (l * (l + 1.0) - m * m / usq) * p
                f += p * trc
                ft += dp * trc
                fp += m * p * trs
                ftt += ddp * trc
                ftp += m * dp * trs
                fpp -= m * m * p * trc
        out[i, 0] = f
        out[i, 1] = ft
        out[i, 2] = fp
        out[i, 3] = ftt
        out[i, 4] = ftp
        out[i, 5] = fpp


def _synth_jets_np(cc, sc, sect, arec, brec, c1, c2, d0, ct, st, ph, out):
    L1 = cc.shape[0]
    n = ct.shape[0]
    chunk = max(1, min(n, 4096))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        t = ct[lo:hi]
        u = st[lo:hi]
        k = hi - lo
        P = np.zeros((L1, L1, k))
        P[0, 0] = 1.0
        for m in range(L1):
            if m == 1:
                P[1, 1] = _SQRT3 * u
            elif m >= 2:
                P[m, m] = P[m - 1, m - 1] * u * sect[m]
            if m + 1 <= L1 - 1:
                P[m + 1, m] = np.sqrt(2.0 * m + 3.0) * t * P[m, m]
            for l in range(m + 2, L1):
                P[l, m] = arec[l, m] * t * P[l - 1, m] - brec[l, m] * P[l - 2, m]
        D = np.zeros((L1, L1, k))
        for l in range(1, L1):
            D[l, 0] = -d0[l] * P[l, 1]
            for m in range(1, l + 1):
                v = c1[l, m] * P[l, m - 1]
                if m + 1 <= l:
                    v = v - c2[l, m] * P[l, m + 1]
                D[l, m] = v
        cot = t / u
        usq = u * u
        f = np.zeros(k)
        ft = np.zeros(k)
        fp = np.zeros(k)
        ftt = np.zeros(k)
        ftp = np.zeros(k)
        fpp = np.zeros(k)
        phc = ph[lo:hi]
        for m in range(L1):
            cm = np.cos(m * phc)
            sm = np.sin(m * phc)
            for l in range(m, L1):
                a = cc[l, m]
                b = sc[l, m]
                if a == 0.0 and b == 0.0:
                    continue
                p = P[l, m]
                dp = D[l, m]
                trc = a * cm + b * sm
                trs = -a * sm + b * cm
                ddp = -cot * dp - (l * (l + 1.0) - m * m / usq) * p
                f += p * trc
                ft += dp * trc
                fp += m * p * trs
                ftt += ddp * trc
                ftp += m * dp * trs
                fpp -= m * m * p * trc
        out[lo:hi, 0] = f
        out[lo:hi, 1] = ft
        out[lo:hi, 2] = fp
        out[lo:hi, 3] = ftt
        out[lo:hi, 4] = ftp
        out[lo:hi, 5] = fpp


def synth_jets(cc, sc, lmax, ct, st, ph):
    """Value, f_theta, f_phi, f_theta_theta, f_theta_phi, f_phi_phi arrays.

    Callers must keep points away from the coordinate poles (sin(theta) > 0);
    the field-level wrapper handles pole-adjacent points separately.
    """
    sect, arec, brec, c1, c2, d0 = legendre_tables(lmax)
    out = np.empty((ct.shape[0], 6))
    if HAVE_NUMBA:
        _synth_jets_nb(cc, sc, sect, arec, brec, c1, c2, d0, ct, st, ph, out)
    else:
        _synth_jets_np(cc, sc, sect, arec, brec, c1, c2, d0, ct, st, ph, out)
    return out


# --------------------------------------------------------------------------
# union-find over vertices (same-sign domain labeling)
# --------------------------------------------------------------------------

@njit(cache=True)
def uf_components(n_vertices, eu, ev, active):
    """Connected components; edges with active[e] unite eu[e] and ev[e].

    Returns (labels, count) with labels relabeled consecutively in order of
    first appearance by vertex index.
    """
    parent = np.arange(n_vertices, dtype=np.int64)
    for e in range(eu.shape[0]):
        if not active[e]:
            continue
        a = eu[e]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = ev[e]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    labels = np.full(n_vertices, -1, dtype=np.int64)
    count = 0
    for v in range(n_vertices):
        r = v
        while parent[r] != r:
            r = parent[r]
        if labels[r] == -1:
            labels[r] = count
            count += 1
        labels[v] = labels[r]
    return labels, count


# --------------------------------------------------------------------------
# marching curves: components of cut edges linked within triangles
# --------------------------------------------------------------------------

@njit(cache=True)
def cut_edge_components(n_edges, tri_edges, cut):
    """Union cut edges that share a triangle.

    tri_edges: (ntri, 3) edge ids per triangle; cut: bool per edge. Each
    triangle has 0 or 2 cut edges for a proper two-coloring of vertices.
    Returns (labels over edges, -1 for non-cut, component count).
    """
    parent = np.arange(n_edges, dtype=np.int64)
    ntri = tri_edges.shape[0]
    for ti in range(ntri):
        first = -1
        for j in range(3):
            e = tri_edges[ti, j]
            if cut[e]:
                if first == -1:
                    first = e
                else:
                    a = first
                    while parent[a] != a:
                        parent[a] = parent[parent[a]]
                        a = parent[a]
                    b = e
                    while parent[b] != b:
                        parent[b] = parent[parent[b]]
                        b = parent[b]
                    if a != b:
                        if a < b:
                            parent[b] = a
                        else:
                            parent[a] = b
    labels = np.full(n_edges, -1, dtype=np.int64)
    count = 0
    for e in range(n_edges):
        if not cut[e]:
            continue
        r = e
        while parent[r] != r:
            r = parent[r]
        if labels[r] == -1:
            labels[r] = count
            count += 1
        labels[e] = labels[r]
    return labels, count


# --------------------------------------------------------------------------
# loop counting on 4-regular maps
# --------------------------------------------------------------------------
#
# Half-edge v*4+k, slot k in rotation order. A state assignment pairs slots
# (0,1),(2,3) in state 0 and (1,2),(3,0) in state 1 -- the two pairings into
# rotation-adjacent slots. Closed curves are the cycles of
# state_partner(pairing(h)); each curve is traversed in both orientations, so
# the curve count is cycles/2.

@njit(cache=True)
def count_loops_states(pairing, states):
    n_half = pairing.shape[0]
    visited = np.zeros(n_half, dtype=np.uint8)
    cycles = 0
    for h0 in range(n_half):
        if visited[h0]:
            continue
        cycles += 1
        h = h0
        while not visited[h]:
            visited[h] = 1
            g = pairing[h]
            v = g >> 2
            k = g & 3
            if states[v] == 0:
                k2 = k ^ 1
            else:
                k2 = 3 - k
            h = (v << 2) | k2
    return cycles // 2


@njit(cache=True)
def loop_mc_counts(pairing, states_matrix, out):
    """Loop counts for a batch of state rows (trials x vertices)."""
    n_half = pairing.shape[0]
    trials = states_matrix.shape[0]
    stamp = np.full(n_half, -1, dtype=np.int64)
    for tr in range(trials):
        cycles = 0
        for h0 in range(n_half):
            if stamp[h0] == tr:
                continue
            cycles += 1
            h = h0
            while stamp[h] != tr:
                stamp[h] = tr
                g = pairing[h]
                v = g >> 2
                k = g & 3
                if states_matrix[tr, v] == 0:
                    k2 = k ^ 1
                else:
                    k2 = 3 - k
                h = (v << 2) | k2
        out[tr] = cycles // 2


@njit(cache=True)
def exact_loop_stats(pairing, p_state1, tied_partner):
    """Exact mean and variance of the loop count over all state assignments.

    p_state1[v]: probability of state 1 at vertex v. tied_partner[v]: index of
    the vertex forced to share v's state (projective tied pairs; -1 when
    free, tied_partner must be symmetric). Enumerates all assignments of the
    free generators; caller guards the generator count.
    """
    n_half = pairing.shape[0]
    n_v = p_state1.shape[0]
    gens = np.full(n_v, -1, dtype=np.int64)
    n_gen = 0
    for v in range(n_v):
        tp = tied_partner[v]
        if tp == -1 or tp >= v:
            gens[n_gen] = v
            n_gen += 1
    states = np.zeros(n_v, dtype=np.uint8)
    stamp = np.full(n_half, -1, dtype=np.int64)
    mean = 0.0
    second = 0.0
    total = np.int64(1) << n_gen
    for idx in range(total):
        prob = 1.0
        for gi in range(n_gen):
            v = gens[gi]
            bit = (idx >> gi) & 1
            states[v] = bit
            tp = tied_partner[v]
            if tp != -1:
                states[tp] = bit
            if bit == 1:
                prob *= p_state1[v]
            else:
                prob *= 1.0 - p_state1[v]
        cycles = 0
        for h0 in range(n_half):
            if stamp[h0] == idx:
                continue
            cycles += 1
            h = h0
            while stamp[h] != idx:
                stamp[h] = idx
                g = pairing[h]
                v = g >> 2
                k = g & 3
                if states[v] == 0:
                    k2 = k ^ 1
                else:
                    k2 = 3 - k
                h = (v << 2) | k2
        n_loops = cycles // 2
        mean += prob * n_loops
        second += prob * n_loops * n_loops
    return mean, second - mean * mean
