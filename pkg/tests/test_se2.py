import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlpgo.se2 import (
    Pose2,
    Rotation2,
    chordal_distance,
    edge_angular_residual,
    retract,
    so2_exp,
    so2_log,
    wrap_angle,
)

angles = st.floats(-50.0, 50.0, allow_nan=False)
wrapped = st.floats(-math.pi, math.pi, allow_nan=False).filter(lambda a: a > -math.pi)


def _wrap_oracle(a):
    while a > math.pi:
        a -= 2 * math.pi
    while a <= -math.pi:
        a += 2 * math.pi
    return a


@pytest.mark.parametrize(
    "a, expected",
    [(0.0, 0.0), (3 * math.pi / 2, -math.pi / 2), (3 * math.pi, math.pi), (math.pi, math.pi), (-math.pi, math.pi)],
)
def test_wrap_examples(a, expected):
    assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_wrap_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        wrap_angle(bad)


@given(angles)
def test_wrap_range_and_congruence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    k = (a - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9


@given(angles)
def test_wrap_idempotent(a):
    w = wrap_angle(a)
    assert wrap_angle(w) == w


def test_wrap_vectorised_matches_scalar(rng):
    a = rng.uniform(-20, 20, 500)
    np.testing.assert_array_equal(wrap_angle(a), [wrap_angle(x) for x in a])


def test_exp_log_examples():
    assert so2_exp(0.0) == Rotation2(0.0)
    assert so2_log(Rotation2(math.pi / 2)) == pytest.approx(math.pi / 2)
    assert so2_exp(2 * math.pi).theta == pytest.approx(0.0, abs=1e-15)


@given(angles)
def test_log_exp_is_wrap(xi):
    assert so2_log(so2_exp(xi)) == pytest.approx(wrap_angle(xi), abs=1e-12)


@given(wrapped)
def test_exp_log_inverse_on_principal_range(theta):
    assert so2_exp(so2_log(Rotation2(theta))) == Rotation2(theta)


def test_retract_examples():
    assert retract(Rotation2(0.1), 0.2).theta == pytest.approx(0.3)
    assert retract(Rotation2(math.pi), math.pi).theta == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        retract(Rotation2(0.0), math.nan)


@given(angles, angles)
def test_retraction_consistency(theta, xi):
    r = retract(Rotation2(theta), xi)
    assert so2_log(r) == pytest.approx(wrap_angle(wrap_angle(theta) + xi), abs=1e-12)
    # the retraction agrees with the matrix product R * exp(xi)
    np.testing.assert_allclose(r.as_matrix(), Rotation2(theta).as_matrix() @ so2_exp(xi).as_matrix(), atol=1e-12)


@given(angles)
def test_retract_zero_is_identity(theta):
    R = Rotation2(theta)
    assert retract(R, 0.0) == R


@given(angles)
def test_matrix_is_orthogonal(theta):
    M = Rotation2(theta).as_matrix()
    assert np.linalg.norm(M.T @ M - np.eye(2)) <= 1e-12
    assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-12)


def test_edge_angular_residual_examples():
    assert edge_angular_residual(Rotation2(0.3), Rotation2(0.5), Rotation2(0.2)) == pytest.approx(0.0, abs=1e-15)
    assert edge_angular_residual(Rotation2(0), Rotation2(0), Rotation2(0.1)) == pytest.approx(-0.1)
    expected = _wrap_oracle(-6.0)
    assert expected == pytest.approx(0.2831853071795862)
    assert edge_angular_residual(Rotation2(3.0), Rotation2(-3.0), Rotation2(0.0)) == pytest.approx(expected, abs=1e-12)


@given(angles, angles, angles)
def test_edge_residual_matches_matrix_log(a, b, c):
    Ri, Rj, Rm = Rotation2(a), Rotation2(b), Rotation2(c)
    M = Rm.as_matrix().T @ Ri.as_matrix().T @ Rj.as_matrix()
    assert edge_angular_residual(Ri, Rj, Rm) == pytest.approx(math.atan2(M[1, 0], M[0, 0]), abs=1e-9)


def test_chordal_examples():
    assert chordal_distance(Rotation2(0.7), Rotation2(0.7)) == 0.0
    assert chordal_distance(Rotation2(0), Rotation2(math.pi)) == pytest.approx(2 * math.sqrt(2))
    frob = np.linalg.norm(Rotation2(0).as_matrix() - Rotation2(0.2).as_matrix())
    assert frob == pytest.approx(0.2823715, abs=1e-7)
    assert chordal_distance(Rotation2(0), Rotation2(0.2)) == pytest.approx(frob, abs=1e-14)


@given(angles, angles)
def test_chordal_matches_frobenius_and_is_symmetric(a, b):
    Ra, Rb = Rotation2(a), Rotation2(b)
    frob = np.linalg.norm(Ra.as_matrix() - Rb.as_matrix())
    assert chordal_distance(Ra, Rb) == pytest.approx(frob, abs=1e-12)
    assert chordal_distance(Ra, Rb) == chordal_distance(Rb, Ra)


poses = st.builds(
    lambda x, y, t: Pose2.from_xyt(x, y, t),
    st.floats(-100, 100), st.floats(-100, 100), angles,
)


@given(poses, poses, poses)
def test_pose_composition_associative(p, q, r):
    a = p.compose(q).compose(r)
    b = p.compose(q.compose(r))
    np.testing.assert_allclose(a.t, b.t, atol=1e-12 * max(1.0, np.abs(a.t).max()) * 100)
    assert wrap_angle(a.theta - b.theta) == pytest.approx(0.0, abs=1e-12)


@given(poses)
def test_pose_identity_and_inverse(p):
    assert p.compose(Pose2()) == p
    e = p.compose(p.inverse())
    np.testing.assert_allclose(e.t, 0.0, atol=1e-12)
    assert e.theta == pytest.approx(0.0, abs=1e-12)


@given(poses, poses)
def test_between_recomposes(p, q):
    r = p.compose(p.between(q))
    np.testing.assert_allclose(r.t, q.t, atol=1e-10)
    assert wrap_angle(r.theta - q.theta) == pytest.approx(0.0, abs=1e-12)
