import numpy as np
import pytest

from nodalstats import kernels
from nodalstats.backend import HAVE_NUMBA
from nodalstats.field import EnsembleSpec, basis_values, pack_coeffs, sample_field
from nodalstats.geometry import units_to_angles

from helpers import random_units


def _triangle(lmax, ct, st):
    """Dense normalized associated-Legendre triangle, straight recurrences."""
    sect, arec, brec, _, _, _ = kernels.legendre_tables(lmax)
    n = ct.shape[0]
    P = np.zeros((lmax + 1, lmax + 1, n))
    P[0, 0] = 1.0
    for m in range(lmax + 1):
        if m == 1:
            P[1, 1] = np.sqrt(3.0) * st
        elif m >= 2:
            P[m, m] = P[m - 1, m - 1] * st * sect[m]
        if m + 1 <= lmax:
            P[m + 1, m] = np.sqrt(2.0 * m + 3.0) * ct * P[m, m]
        for l in range(m + 2, lmax + 1):
            P[l, m] = arec[l, m] * ct * P[l - 1, m] - brec[l, m] * P[l - 2, m]
    return P


def test_normalization_sum_rule():
    """sum_{m=-l..l} basis^2 = 2l+1 pointwise, i.e. P_l0^2 + sum_m>=1 P_lm^2."""
    rng = np.random.default_rng(0)
    u = random_units(rng, 20)
    ct, st, _ = units_to_angles(u)
    lmax = 40
    P = _triangle(lmax, ct, st)
    for l in range(lmax + 1):
        s = P[l, 0] ** 2 + np.sum(P[l, 1:l + 1] ** 2, axis=0)
        assert np.allclose(s, 2 * l + 1, rtol=1e-11)


def test_synth_values_matches_basis_matrix():
    spec = EnsembleSpec.gaussian_band(9, 1.5)
    s = sample_field(spec, 5)
    rng = np.random.default_rng(1)
    u = random_units(rng, 200)
    direct = s.values(u)
    via_basis = basis_values(spec, u) @ pack_coeffs(s)
    assert np.allclose(direct, via_basis, atol=1e-12)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba backend not active")
def test_backends_agree():
    spec = EnsembleSpec.gaussian_band(12, 2.0)
    s = sample_field(spec, 9)
    cc, sc = s._packed()
    rng = np.random.default_rng(2)
    u = random_units(rng, 150)
    ct, st, ph = units_to_angles(u)
    lmax = spec.lmax

    v_nb = np.empty(150)
    v_np = np.empty(150)
    tabs = kernels.legendre_tables(lmax)
    kernels._synth_values_nb(cc, sc, tabs[0], tabs[1], tabs[2], ct, st, ph, v_nb)
    kernels._synth_values_np(cc, sc, tabs[0], tabs[1], tabs[2], ct, st, ph, v_np)
    assert np.allclose(v_nb, v_np, atol=1e-12)

    j_nb = np.empty((150, 6))
    j_np = np.empty((150, 6))
    kernels._synth_jets_nb(cc, sc, *tabs, ct, st, ph, j_nb)
    kernels._synth_jets_np(cc, sc, *tabs, ct, st, ph, j_np)
    assert np.allclose(j_nb, j_np, atol=1e-10)


def test_union_find_components():
    # two triangles sharing no vertex, one isolated vertex
    eu = np.array([0, 1, 2, 3, 4, 5], dtype=np.int64)
    ev = np.array([1, 2, 0, 4, 5, 3], dtype=np.int64)
    active = np.ones(6, dtype=np.bool_)
    labels, count = kernels.uf_components(7, eu, ev, active)
    assert count == 3
    assert labels[0] == labels[1] == labels[2]
    assert labels[3] == labels[4] == labels[5]
    assert labels[0] != labels[3] != labels[6]
    # labels are consecutive from 0 in first-appearance order
    assert sorted({labels[0], labels[3], labels[6]}) == [0, 1, 2]

    # deactivate one edge of the first triangle: still one component
    active[0] = False
    _, count = kernels.uf_components(7, eu, ev, active)
    assert count == 3
    # deactivate two: the triangle splits
    active[1] = False
    labels, count = kernels.uf_components(7, eu, ev, active)
    assert count == 4


def test_cut_edge_components():
    # two triangles sharing edge 0; cut edges 1 and 2 live on separate
    # triangles but share edge 0, which is also cut: single curve
    tri_edges = np.array([[0, 1, 3], [0, 2, 4]], dtype=np.int64)
    cut = np.zeros(5, dtype=np.bool_)
    cut[[0, 1, 2]] = True
    labels, count = kernels.cut_edge_components(5, tri_edges, cut)
    assert count == 1
    assert labels[0] == labels[1] == labels[2]
    assert labels[3] == labels[4] == -1

    # edge 0 not cut: the two cut edges are disconnected
    cut[0] = False
    labels, count = kernels.cut_edge_components(5, tri_edges, cut)
    assert count == 2
    assert labels[1] != labels[2]


def _one_vertex_two_loops_map():
    """Figure-eight: one degree-4 vertex, two circular edges (petals).

    Slots 0..3 in rotation order; each petal leaves and re-enters on
    adjacent slots, so edge A joins (0, 3) and edge B joins (1, 2). One
    smoothing keeps the two petals separate, the other merges them.
    """
    pairing = np.array([3, 2, 1, 0], dtype=np.int64)
    return pairing


def test_count_loops_states_single_vertex():
    pairing = _one_vertex_two_loops_map()
    n0 = kernels.count_loops_states(pairing, np.zeros(1, dtype=np.int64))
    n1 = kernels.count_loops_states(pairing, np.ones(1, dtype=np.int64))
    assert sorted([n0, n1]) == [1, 2]


def test_loop_mc_matches_exact_enumeration():
    pairing = _one_vertex_two_loops_map()
    p1 = np.array([0.3])
    tied = np.array([-1], dtype=np.int64)
    mean, var = kernels.exact_loop_stats(pairing, p1, tied)
    # direct: states 0 (prob .7) and 1 (prob .3) give counts {n0, n1}
    n0 = kernels.count_loops_states(pairing, np.zeros(1, dtype=np.int64))
    n1 = kernels.count_loops_states(pairing, np.ones(1, dtype=np.int64))
    want_mean = 0.7 * n0 + 0.3 * n1
    want_var = 0.7 * n0 ** 2 + 0.3 * n1 ** 2 - want_mean ** 2
    assert abs(mean - want_mean) < 1e-12
    assert abs(var - want_var) < 1e-12

    rng = np.random.default_rng(3)
    trials = (rng.random((20000, 1)) < p1).astype(np.int64)
    out = np.empty(20000, dtype=np.int64)
    kernels.loop_mc_counts(pairing, trials, out)
    assert abs(out.mean() - want_mean) < 0.02
