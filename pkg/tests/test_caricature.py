"""Tests for saddle joints, traced nodal graphs, and the loop accounting."""

from types import SimpleNamespace

import numpy as np
import pytest
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from nodalstats import census
from nodalstats.caricature import (
    C_JOINT_DEFAULT,
    CaricatureError,
    Joint,
    JointOverlapError,
    NodalGraph,
    PerturbationExperiment,
    _census_circle_supplement,
    _find_terminal_crossings,
    _regime_report,
    _resolving_scale,
    blinking_count,
    build_joints,
    caricature_decomposition,
    graph_to_text,
    joint_boundary_signs,
    parse_graph_text,
    perturb,
    resolve_graph,
    signs_to_text,
    trace_edges,
)
from nodalstats.critical import (
    CriticalPoint,
    find_critical_points,
    measure_c3_scale,
)
from nodalstats.field import EnsembleSpec, basis_values, sample_field
from nodalstats.geometry import SpherePoint, TangentFrame

from helpers import (
    PolyField,
    force_small_value,
    tilted_bowl_field,
    two_saddle_field,
)


def _unit_joint(a=1.0, b=2.0, sign_axis1=1, delta=0.04, sigma_angle=2.0,
                value=1e-5):
    """Hand-built joint at the north pole with the frame (e_x, e_y)."""
    unit = np.array([0.0, 0.0, 1.0])
    mu_small = sign_axis1 * a
    mu_other = -sign_axis1 * b
    pt = CriticalPoint.from_jet(SpherePoint(unit, sigma_angle), value, 1e-14,
                                min(mu_small, mu_other),
                                max(mu_small, mu_other))
    frame = TangentFrame(unit, np.array([1.0, 0.0, 0.0]),
                         np.array([0.0, 1.0, 0.0]))
    return Joint(saddle=pt, frame=frame, a=a, b=b, sign_axis1=sign_axis1,
                 delta=delta, sigma_angle=sigma_angle)


@pytest.fixture(scope="module")
def two_saddle():
    sample = two_saddle_field()
    points = find_critical_points(sample)
    saddles = [p for p in points if p.kind == "saddle"]
    diag = {}
    joints = build_joints(sample, saddles, all_points=points,
                          diagnostics=diag)
    return sample, points, saddles, joints, diag


@pytest.fixture(scope="module")
def traced(two_saddle):
    sample, _, _, joints, _ = two_saddle
    return trace_edges(sample, joints)


# --------------------------------------------------------------------------
# joint geometry
# --------------------------------------------------------------------------

def test_joint_validation():
    with pytest.raises(CaricatureError):
        _unit_joint(a=2.0, b=1.0)
    with pytest.raises(CaricatureError):
        _unit_joint(sign_axis1=0)
    with pytest.raises(CaricatureError):
        _unit_joint(delta=0.0)


def test_chart_point_roundtrip():
    j = _unit_joint()
    X = np.array([[0.05, -0.03], [0.0, 0.11], [-0.08, 0.02]])
    back = j.chart(np.array([j.point_at(x) for x in X]))
    assert back == pytest.approx(X, rel=1e-3, abs=1e-6)
    # the origin maps to the saddle itself
    assert j.point_at(np.zeros(2)) == pytest.approx(j.unit)


def test_hyperbola_and_quad_form():
    j = _unit_joint(a=1.0, b=2.0, sign_axis1=-1)
    X = np.array([[0.3, 0.1]])
    assert j.hyperbola(X)[0] == pytest.approx(0.09 - 2.0 * 0.01)
    assert j.quad_form(X)[0] == pytest.approx(-(0.09 - 2.0 * 0.01))


def test_in_joint_region_and_pad():
    j = _unit_joint()
    d = j.delta
    lim = j.a * d ** 2
    inside = np.array([[0.0, 0.0], [2.5 * d, 1.75 * d]])
    outside = np.array([[3.5 * d, 0.0],      # beyond the terminal cut
                        [2.5 * d, 0.0]])     # the separating form too large
    assert j.in_joint(inside).all()
    assert not j.in_joint(outside).any()
    # a point just past the hyperbola limit enters with a pad
    x2_edge = np.sqrt((j.a * 4.0 * d ** 2 + lim * 1.005) / j.b)
    just_out = np.array([[2.0 * d, x2_edge]])
    assert not j.in_joint(just_out)[0]
    assert j.in_joint(just_out, pad=0.02)[0]


def test_terminal_slots_counterclockwise():
    j = _unit_joint()   # a/b = 0.5: terminal band has |X2/delta| in [1.62, 1.90]
    d = j.delta
    assert j.terminal_slot([2.5 * d, 1.75 * d]) == 0
    assert j.terminal_slot([-2.5 * d, 1.75 * d]) == 1
    assert j.terminal_slot([-2.5 * d, -1.75 * d]) == 2
    assert j.terminal_slot([2.5 * d, -1.75 * d]) == 3
    assert j.terminal_slot([0.0, 0.0]) == -1          # core, not a terminal
    assert j.terminal_slot([0.0, 0.5 * d]) == -1
    assert j.terminal_slot([4.0 * d, 0.0]) == -1      # outside the joint


def test_terminal_outer_segment_spans_the_crossing():
    j = _unit_joint(a=1.0, b=2.0)
    d = j.delta
    lim = j.a * d ** 2
    for slot in range(4):
        xp, xm = j.terminal_outer_segment(slot)
        assert abs(xp[0]) == pytest.approx(3.0 * d)
        assert xm[0] == xp[0]
        assert j.hyperbola(xp[None, :])[0] == pytest.approx(lim)
        assert j.hyperbola(xm[None, :])[0] == pytest.approx(-lim)
        assert j.terminal_slot(xp) == slot
    with pytest.raises(ValueError):
        j.terminal_outer_segment(4)


def test_outer_radius_is_the_far_corner():
    j = _unit_joint(a=1.0, b=2.0)
    corner = np.array([3.0 * j.delta,
                       np.sqrt(10.0 * j.a / j.b) * j.delta])
    assert j.in_joint(corner[None, :], pad=1e-12)[0]
    assert np.linalg.norm(corner) == pytest.approx(j.outer_radius)
    assert j.outer_radius == pytest.approx(np.sqrt(14.0) * j.delta)


def test_state_for_sign():
    j = _unit_joint(sign_axis1=1)
    assert j.state_for_sign(2.5) == 0
    assert j.state_for_sign(-0.3) == 1
    flipped = _unit_joint(sign_axis1=-1)
    assert flipped.state_for_sign(2.5) == 1
    assert flipped.state_for_sign(-0.3) == 0
    with pytest.raises(CaricatureError):
        j.state_for_sign(0.0)


# --------------------------------------------------------------------------
# joint construction on the two-saddle field
# --------------------------------------------------------------------------

def test_two_saddle_joint_parameters(two_saddle):
    sample, _, saddles, joints, diag = two_saddle
    assert len(saddles) == 2
    assert [p.value for p in saddles] == pytest.approx([-2e-4, -2e-4],
                                                       abs=1e-9)
    scale = measure_c3_scale(sample)
    assert scale == pytest.approx(5.077388, rel=1e-4)
    for j in joints:
        assert j.a == pytest.approx(1.2, rel=1e-6)
        assert j.b == pytest.approx(1.4, rel=1e-6)
        assert j.sign_axis1 == -1
        assert j.delta == pytest.approx(C_JOINT_DEFAULT * 1.2 / scale,
                                        rel=1e-9)
        assert j.delta == pytest.approx(0.02363420, rel=1e-5)
        # the small-eigenvalue direction is the +-e_y axis
        assert abs(j.frame.e1 @ np.array([0.0, 1.0, 0.0])) == \
            pytest.approx(1.0, abs=1e-8)
    assert diag["n_joints"] == 2
    assert diag["n_halvings"] == 0
    assert diag["c_joint_used"] == C_JOINT_DEFAULT
    assert diag["min_separation"] == pytest.approx(np.pi, rel=1e-9)


def test_boundary_sign_rule_holds_inside_budget(two_saddle):
    sample, _, _, joints, _ = two_saddle
    for j in joints:
        rep = joint_boundary_signs(sample, j)
        assert rep["ok"] and rep["n_violations"] == 0
        assert rep["n_checked"] == 64
        assert rep["predicted_margin"] == pytest.approx(
            j.a * j.delta ** 2 / 2.0)
        # measured margin = predicted minus the saddle value magnitude
        assert rep["min_margin"] == pytest.approx(1.351453e-4, rel=1e-4)


def test_saddle_value_exceeding_joint_budget_is_rejected():
    # |saddle value| = 4e-4 > a*delta^2/2 ~ 3.35e-4: the sign rule fails on
    # the low hyperbola branches and the terminal crossings refuse to bisect
    bad = two_saddle_field(c=0.3004)
    saddles = [p for p in find_critical_points(bad) if p.kind == "saddle"]
    joints = build_joints(bad, saddles)
    rep = joint_boundary_signs(bad, joints[0])
    assert not rep["ok"]
    assert rep["n_violations"] == 32
    assert rep["min_margin"] == pytest.approx(-6.48547e-5, rel=1e-3)
    with pytest.raises(CaricatureError, match="too large for the joint"):
        _find_terminal_crossings(bad, joints)


def test_joint_containment_rejects_intruders(two_saddle):
    sample, points, saddles, joints, _ = two_saddle
    intruder_unit = joints[0].point_at(np.array([0.0, 0.5 * joints[0].delta]))
    intruder = CriticalPoint.from_jet(
        SpherePoint(intruder_unit, sample.radius_L), 0.5, 1e-14, -1.0, 1.0)
    with pytest.raises(CaricatureError, match="contains 2 critical points"):
        build_joints(sample, saddles, all_points=list(points) + [intruder])


def test_coincident_saddles_raise_overlap_error(two_saddle):
    sample, _, saddles, _, _ = two_saddle
    with pytest.raises(JointOverlapError, match="after 3 halvings") as exc:
        build_joints(sample, [saddles[0], saddles[0]])
    pairs = exc.value.pairs
    assert pairs and pairs[0][:2] == (0, 1)
    assert pairs[0][2] == 0.0   # zero separation


def test_build_joints_input_validation(two_saddle):
    sample, points, saddles, _, _ = two_saddle
    not_a_saddle = [p for p in points if p.kind == "max"][0]
    with pytest.raises(CaricatureError, match="needs saddle"):
        build_joints(sample, [not_a_saddle])
    with pytest.raises(ValueError):
        build_joints(sample, saddles, 1.5)
    diag = {}
    assert build_joints(sample, [], diagnostics=diag) == ()
    assert diag["n_joints"] == 0


# --------------------------------------------------------------------------
# tracing and resolution
# --------------------------------------------------------------------------

def test_traced_graph_structure(two_saddle, traced):
    _, _, _, joints, _ = two_saddle
    graph = traced
    assert graph.n_vertices == 2 and graph.n_edges == 4
    assert graph.pairing.tolist() == [5, 4, 7, 6, 1, 0, 3, 2]
    assert graph.edges == ((0, 5), (1, 4), (2, 7), (3, 6))
    assert graph.free_loops == 0
    assert graph.census_loops == 2
    assert len(graph.claimed_curves) == 2
    assert len(graph.arcs) == 4
    # every arc runs from one terminal crossing to its partner's
    assert graph.joints == joints


def test_traced_graph_is_grid_independent(two_saddle, traced):
    sample, _, _, joints, _ = two_saddle
    finer = trace_edges(sample, joints, grid=census.build_level(8, "sphere"))
    assert finer.grid.level == 8 != traced.grid.level
    assert np.array_equal(finer.pairing, traced.pairing)
    assert finer.free_loops == traced.free_loops


def test_resolution_counts_avoided_crossing_loops(traced):
    # both saddles sit below zero; opening the other way merges the curves
    assert resolve_graph(traced, {0: -1, 1: -1}) == 2
    assert resolve_graph(traced, {0: 1, 1: 1}) == 2
    assert resolve_graph(traced, {0: -1, 1: 1}) == 1
    assert resolve_graph(traced, {0: 1, 1: -1}) == 1
    assert traced.resolve({0: -2e-4, 1: -2e-4}) == 2


def test_resolution_requires_all_signs(traced):
    with pytest.raises(CaricatureError, match="missing signs"):
        resolve_graph(traced, {0: -1})
    empty = NodalGraph(joints=(), pairing=np.zeros(0, dtype=np.int64),
                       edges=())
    assert resolve_graph(empty, {}) == 0


def test_single_joint_states_give_two_or_one_loops():
    j = _unit_joint(sign_axis1=1)
    graph = NodalGraph(joints=(j,),
                       pairing=np.array([1, 0, 3, 2], dtype=np.int64),
                       edges=((0, 1), (2, 3)))
    # state 0 (positive value) pairs terminals (0,1),(2,3) internally too
    assert resolve_graph(graph, {0: 1.0}) == 2
    assert resolve_graph(graph, {0: -1.0}) == 1


# --------------------------------------------------------------------------
# plain-text export
# --------------------------------------------------------------------------

def test_graph_text_round_trip(traced):
    text = graph_to_text(traced)
    assert text == "2 4\n0 1 2 3\n4 5 6 7\n0 5\n1 4\n2 7\n3 6\n"
    rotations, pairing = parse_graph_text(text)
    assert rotations.tolist() == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert np.array_equal(pairing, traced.pairing)


def test_signs_text():
    assert signs_to_text({0: 0.7, 1: -3.0}, 2) == "0 1\n1 -1\n"
    with pytest.raises(CaricatureError, match="missing signs"):
        signs_to_text({0: 1.0}, 2)


def test_parse_graph_text_validation():
    with pytest.raises(ValueError, match="expected"):
        parse_graph_text("1 1\n0 1 2 3\n0 1\n2 3\n")
    with pytest.raises(ValueError, match="involution"):
        parse_graph_text("1 2\n0 1 2 3\n0 1\n1 2\n")


# --------------------------------------------------------------------------
# blending
# --------------------------------------------------------------------------

def test_perturb_endpoints_and_formula():
    spec = EnsembleSpec.spherical_harmonic(4)
    f, g = sample_field(spec, 5), sample_field(spec, 6)
    assert perturb(f, g, 0.0) is f
    assert perturb(f, g, 1.0) is g
    t = 0.6
    tilde = perturb(f, g, t)
    assert np.allclose(tilde.coeffs,
                       np.sqrt(1.0 - t * t) * f.coeffs + t * g.coeffs)
    assert tilde.seed[0] == "blend"
    rng = np.random.default_rng(2)
    u = rng.standard_normal((8, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    assert tilde.values(u) == pytest.approx(
        np.sqrt(1.0 - t * t) * f.values(u) + t * g.values(u))


def test_perturb_validation():
    spec = EnsembleSpec.spherical_harmonic(4)
    f, g = sample_field(spec, 5), sample_field(spec, 6)
    other = sample_field(EnsembleSpec.spherical_harmonic(3), 5)
    with pytest.raises(ValueError, match="different ensembles"):
        perturb(f, other, 0.1)
    for t in (-0.1, 1.2):
        with pytest.raises(ValueError):
            perturb(f, g, t)


def test_blend_preserves_ensemble_variance():
    spec = EnsembleSpec.spherical_harmonic(4)
    rng = np.random.default_rng(11)
    u = rng.standard_normal((10, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    B = basis_values(spec, u)
    # the ensemble is normalized to unit pointwise variance
    assert (B ** 2).sum(axis=1) == pytest.approx(1.0)
    t = 0.35
    M = 4000
    F = rng.standard_normal((M, B.shape[1]))
    G = rng.standard_normal((M, B.shape[1]))
    V = (np.sqrt(1.0 - t * t) * F + t * G) @ B.T
    assert np.var(V, axis=0) == pytest.approx(
        1.0, abs=5.0 * np.sqrt(2.0 / M))


def test_experiment_validation():
    spec = EnsembleSpec.spherical_harmonic(4)
    f, g = sample_field(spec, 5), sample_field(spec, 6)
    ex = PerturbationExperiment(f=f, g=g, alpha_prime=0.0, alpha=1e-3)
    assert ex.tilde is f
    with pytest.raises(ValueError):
        PerturbationExperiment(f=f, g=g, alpha_prime=1.0, alpha=1e-3)
    with pytest.raises(ValueError):
        PerturbationExperiment(f=f, g=g, alpha_prime=0.1, alpha=0.0)


# --------------------------------------------------------------------------
# regime predicates
# --------------------------------------------------------------------------

def _regime(alpha, ap, beta=None, scale=2.0, delta=1.5, min_tilde=None):
    stub = SimpleNamespace(alpha=alpha, alpha_prime=ap, beta=beta)
    return _regime_report(stub, scale, delta, min_tilde)


def _failing(report):
    return [k for k, v in report.items()
            if isinstance(v, dict) and not v["ok"]]


def test_regime_all_predicates_hold_in_window():
    rep = _regime(1e-6, 5e-9)
    assert _failing(rep) == []
    lo = 10.0 * 1e-6 * 9.0
    hi = np.sqrt(1e-6 / 45.0)
    assert rep["beta_used"] == pytest.approx(np.sqrt(lo * hi))
    assert rep["scale_bound"] == 2.0
    assert rep["delta_measured"] == 1.5


def test_regime_window_collapses_for_large_alpha():
    rep = _regime(1e-3, 5e-9)
    assert _failing(rep) == ["gradient_window_high"]


def test_regime_explicit_beta_below_window():
    rep = _regime(1e-6, 5e-9, beta=1e-5)
    assert _failing(rep) == ["gradient_window_low"]


def test_regime_perturbation_and_clearance():
    assert "perturbation_small" in _failing(_regime(1e-6, 1e-6))
    assert _failing(_regime(1e-6, 5e-9, min_tilde=1e-12)) == \
        ["saddle_values_clear"]
    assert _failing(_regime(1e-6, 5e-9, min_tilde=1e-9)) == []


# --------------------------------------------------------------------------
# blinking circles at low extrema
# --------------------------------------------------------------------------

def _bowl_minima(field):
    pts = find_critical_points(field)
    return sorted([p for p in pts if p.kind == "min"], key=lambda p: p.value)


def _stub_experiment(f, tilde):
    return SimpleNamespace(f=f, tilde=tilde, exclusions=[], records={})


def test_bowl_critical_structure():
    bowl = tilted_bowl_field()
    pts = find_critical_points(bowl)
    by_kind = {k: sorted(p.value for p in pts if p.kind == k)
               for k in ("min", "saddle", "max")}
    assert by_kind["min"] == pytest.approx([-1e-4, 1e-4], abs=1e-9)
    assert by_kind["saddle"] == pytest.approx([0.35, 0.35], rel=1e-6)
    assert by_kind["max"] == pytest.approx([0.65, 0.65], rel=1e-6)


def test_blinking_counts_the_dipped_minimum():
    bowl = tilted_bowl_field()
    mins = _bowl_minima(bowl)
    ex = _stub_experiment(bowl, bowl)
    assert blinking_count(ex, mins) == 1
    checked = ex.records["blinking"]["checked"]
    assert checked == [{"index": 0, "counted": True, "ok": True},
                       {"index": 1, "counted": False, "ok": True}]
    assert ex.records["blinking"]["disagreements"] == []
    assert ex.exclusions == []


def test_blinking_follows_the_blend_not_the_base():
    bowl = tilted_bowl_field()
    mins = _bowl_minima(bowl)
    ex = _stub_experiment(bowl, tilted_bowl_field(tilt=-1e-4))
    assert blinking_count(ex, mins) == 1
    checked = ex.records["blinking"]["checked"]
    # the roles of the two minima swap with the tilt
    assert [c["counted"] for c in checked] == [False, True]
    assert all(c["ok"] for c in checked)


def test_blinking_verify_budget_and_input_checks():
    bowl = tilted_bowl_field()
    pts = find_critical_points(bowl)
    mins = _bowl_minima(bowl)
    ex = _stub_experiment(bowl, bowl)
    assert blinking_count(ex, mins, verify_limit=0) == 1
    assert ex.records["blinking"]["checked"] == []
    saddle = [p for p in pts if p.kind == "saddle"][0]
    with pytest.raises(CaricatureError, match="needs extrema"):
        blinking_count(ex, [saddle])


# --------------------------------------------------------------------------
# sub-cell circle supplement
# --------------------------------------------------------------------------

def _supplement(field, level, nearest, exclusions):
    mins = _bowl_minima(field)
    units = np.array([p.location.unit for p in mins])
    vals = field.values(units)
    grid = census.build_level(level, "sphere")
    signs = np.sign(field.values(grid.vertices))
    return _census_circle_supplement(vals, mins, grid, signs,
                                     cKDTree(grid.vertices), 1.0,
                                     nearest, exclusions, "test")


def test_supplement_counts_circles_the_grid_misses():
    # rotate the bowl so its tiny oval sits away from every grid vertex
    bowl = tilted_bowl_field().rotated(
        Rotation.from_rotvec([0.4, 0.3, 0.0]).as_matrix())
    far = np.array([np.pi / 2, np.pi / 2])
    excl = []
    assert _supplement(bowl, 4, far, excl) == [0]
    assert excl == []
    # a finer grid sees the oval directly, so nothing is missed
    assert _supplement(bowl, 7, far, excl) == []
    # ... and the marching census agrees with that split
    assert census.nodal_curves(bowl, census.build_level(4, "sphere")
                               ).n_curves == 0
    assert census.nodal_curves(bowl, census.build_level(7, "sphere")
                               ).n_curves == 1


def test_supplement_excludes_uncertifiable_circles():
    bowl = tilted_bowl_field().rotated(
        Rotation.from_rotvec([0.4, 0.3, 0.0]).as_matrix())
    excl = []
    missed = _supplement(bowl, 4, np.array([0.02, 0.02]), excl)
    assert missed == []
    assert len(excl) == 1 and excl[0][0] == "test" and excl[0][1] == 0
    assert "cannot certify" in excl[0][2]


def test_resolving_scale_needs_nonzero_values(two_saddle):
    _, _, _, joints, _ = two_saddle
    with pytest.raises(CaricatureError, match="exactly zero"):
        _resolving_scale(joints, [0.0, -2e-4])
    s = _resolving_scale(joints, [-2e-4, -2e-4])
    w = np.sqrt(2.0 * 2e-4 / joints[0].b)
    assert s == pytest.approx(0.7 * np.sqrt(w * joints[0].delta))


# --------------------------------------------------------------------------
# full decomposition
# --------------------------------------------------------------------------

def test_high_degree_trial_without_joints_matches():
    spec = EnsembleSpec.spherical_harmonic(10)
    f, g = sample_field(spec, 3), sample_field(spec, 1003)
    ex = PerturbationExperiment(f=f, g=g, alpha_prime=1e-11, alpha=1e-8)
    out = caricature_decomposition(ex)
    assert out == {"N_I": 14, "N_II": 0, "N_III": 0, "N_direct": 14,
                   "match": True}
    assert ex.regime_ok is True
    assert ex.exclusions == []
    rec = ex.records["graph"]
    assert rec["n_joints"] == 0
    assert rec["free_loops"] == rec["census_loops"] == 14
    assert ex.regime["scale_bound"] == pytest.approx(3.0827, rel=1e-3)


@pytest.mark.slow
def test_forced_saddle_decomposition_matches_census():
    # a low-degree sample steered so one saddle value is 2.5e-6 (the odd
    # degree mirrors it antipodally), giving two genuine joints inside a
    # regime-valid (alpha, alpha') box
    spec = EnsembleSpec.spherical_harmonic(3)
    f, forced = force_small_value(sample_field(spec, 17),
                                  sample_field(spec, 1017),
                                  kind="saddle", target=2.5e-6)
    assert forced.value == pytest.approx(2.5e-6, abs=1e-9)
    g = sample_field(spec, 2017)

    # no blend: the split is algebraically exact
    ex0 = PerturbationExperiment(f=f, g=g, alpha_prime=0.0, alpha=4e-6)
    out0 = caricature_decomposition(ex0)
    assert out0 == {"N_I": 0, "N_II": 0, "N_III": 1, "N_direct": 1,
                    "match": True}
    assert ex0.regime_ok is True
    assert ex0.exclusions == []
    assert ex0.records["graph"]["n_joints"] == 2
    assert ex0.signs == {("saddle", 0): -1, ("saddle", 1): 1}

    # an in-regime blend keeps every saddle sign and the same split
    ex1 = PerturbationExperiment(f=f, g=g, alpha_prime=2e-7, alpha=4e-6)
    out1 = caricature_decomposition(ex1)
    assert out1 == out0
    assert ex1.regime_ok is True
    assert ex1.signs == ex0.signs

    # a stronger blend flips both saddle states: the resolved graph now
    # predicts three loops and the direct census of the blend concurs,
    # even though the perturbation-size predicate is (honestly) violated
    ex2 = PerturbationExperiment(f=f, g=g, alpha_prime=5e-6, alpha=4e-6)
    out2 = caricature_decomposition(ex2)
    assert out2 == {"N_I": 0, "N_II": 0, "N_III": 3, "N_direct": 3,
                    "match": True}
    assert ex2.signs == {("saddle", 0): 1, ("saddle", 1): -1}
    assert ex2.regime_ok is False
    assert [k for k, v in ex2.regime.items()
            if isinstance(v, dict) and not v["ok"]] == ["perturbation_small"]
