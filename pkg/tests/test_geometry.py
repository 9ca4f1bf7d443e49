import numpy as np
import pytest

from nodalstats.geometry import (GeometryError, SpherePoint, TangentFrame,
                                 chart_coords, chart_point, frame_at,
                                 random_rotation, rotation_matrix,
                                 theta_phi_frame, units_to_angles)

from helpers import random_units


def test_sphere_point_validation():
    SpherePoint(np.array([0.0, 0.0, 1.0]), 5.0)
    with pytest.raises(GeometryError):
        SpherePoint(np.array([0.0, 0.0, 1.1]), 5.0)
    with pytest.raises(GeometryError):
        SpherePoint(np.array([0.0, 0.0, 1.0]), -1.0)
    p = SpherePoint.from_vector([3.0, 4.0, 0.0], 2.0)
    assert np.allclose(p.unit, [0.6, 0.8, 0.0])


def test_distance_range_and_radius_mismatch():
    rng = np.random.default_rng(0)
    L = 7.0
    us = random_units(rng, 50)
    for i in range(0, 50, 2):
        p = SpherePoint(us[i], L)
        q = SpherePoint(us[i + 1], L)
        d = p.distance(q)
        assert 0.0 <= d <= np.pi * L
        assert abs(d - q.distance(p)) < 1e-12
    p = SpherePoint(us[0], 7.0)
    with pytest.raises(GeometryError):
        p.distance(SpherePoint(us[1], 8.0))
    # arccos near -1 is ill-conditioned: sqrt(eps)-level error is inherent
    assert abs(p.distance(p.antipode()) - np.pi * L) < 1e-6


def test_frame_orthogonality_enforced():
    u = np.array([0.0, 0.0, 1.0])
    with pytest.raises(GeometryError):
        TangentFrame(u, np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(GeometryError):
        TangentFrame(u, np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    fr = frame_at(u)
    assert abs(np.dot(fr.e1, fr.e2)) < 1e-12
    assert abs(np.dot(fr.e1, fr.base)) < 1e-12
    # right-handed: e1 x e2 = base
    assert np.allclose(np.cross(fr.e1, fr.e2), fr.base, atol=1e-12)


def test_frame_rotation_stays_orthonormal():
    fr = frame_at(np.array([0.6, 0.8, 0.0]))
    fr2 = fr.rotate_by(0.7)
    assert abs(np.dot(fr2.e1, fr2.e2)) < 1e-12
    assert np.allclose(np.cross(fr2.e1, fr2.e2), fr2.base, atol=1e-12)


def test_chart_round_trip_and_bilipschitz():
    """|X - Y| <= d(chart(X), chart(Y)) <= 2 |X - Y| for |X|, |Y| <= L/2."""
    rng = np.random.default_rng(1)
    L = 3.0
    for u in random_units(rng, 10):
        p = SpherePoint(u, L)
        fr = frame_at(u)
        for _ in range(20):
            X = rng.uniform(-1, 1, size=2)
            Y = rng.uniform(-1, 1, size=2)
            X *= rng.uniform(0, L / 2) / max(np.linalg.norm(X), 1e-12)
            Y *= rng.uniform(0, L / 2) / max(np.linalg.norm(Y), 1e-12)
            qx = chart_point(p, fr, X)
            qy = chart_point(p, fr, Y)
            assert np.allclose(chart_coords(p, fr, qx), X, atol=1e-9)
            d = qx.distance(qy)
            e = np.linalg.norm(X - Y)
            assert e <= d + 1e-9
            assert d <= 2 * e + 1e-9


def test_chart_rejects_out_of_hemisphere():
    p = SpherePoint(np.array([0.0, 0.0, 1.0]), 2.0)
    fr = frame_at(p.unit)
    with pytest.raises(GeometryError):
        chart_point(p, fr, np.array([2.0, 0.1]))


def test_theta_phi_frame_poles_and_consistency():
    with pytest.raises(GeometryError):
        theta_phi_frame(np.array([0.0, 0.0, 1.0]))
    u = np.array([0.6, 0.0, 0.8])
    e_th, e_ph = theta_phi_frame(u)
    assert abs(np.dot(e_th, e_ph)) < 1e-12
    assert abs(np.dot(e_th, u)) < 1e-12
    # e_theta points toward decreasing z along the meridian
    assert e_th[2] < 0


def test_rotation_matrix_properties():
    rng = np.random.default_rng(2)
    for _ in range(10):
        R = random_rotation(rng)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12
    R = rotation_matrix([0, 0, 2.0], np.pi / 2)
    assert np.allclose(R @ np.array([1.0, 0, 0]), [0, 1.0, 0], atol=1e-12)


def test_units_to_angles_round_trip():
    rng = np.random.default_rng(3)
    u = random_units(rng, 100)
    ct, st, ph = units_to_angles(u)
    rebuilt = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)
    assert np.allclose(rebuilt, u, atol=1e-12)
