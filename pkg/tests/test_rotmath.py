import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvfuse.rotmath import (
    DegenerateRotationError,
    aa_to_rotmat,
    check_rotmat,
    geodesic_dist,
    hat,
    random_rotations,
    rotmat_to_6d,
    rotmat_to_aa,
    sixd_to_rotmat,
    sixd_to_rotmat_vjp,
    vee,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_zero_axis_angle_is_identity():
    assert np.array_equal(aa_to_rotmat(np.zeros(3)), np.eye(3))


def test_half_turn_about_x():
    R = aa_to_rotmat(np.array([np.pi, 0.0, 0.0]))
    assert np.allclose(R, np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_rodrigues_is_a_rotation_and_inverts():
    aa = np.array([0.3, -0.2, 0.1])
    R = aa_to_rotmat(aa)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-14)
    assert np.isclose(np.linalg.det(R), 1.0)
    assert np.allclose(rotmat_to_aa(R), aa, atol=1e-14)


def test_rodrigues_matches_matrix_exponential():
    # independent oracle: truncated power series of exp(hat(aa))
    aa = np.array([0.7, -1.1, 0.4])
    K = hat(aa)
    E, term = np.eye(3), np.eye(3)
    for n in range(1, 40):
        term = term @ K / n
        E = E + term
    assert np.allclose(aa_to_rotmat(aa), E, atol=1e-14)


def test_small_angle_continuity():
    for eps in (1e-12, 1e-9, 1e-7, 1e-5):
        aa = eps * np.array([1.0, 2.0, -2.0]) / 3.0
        R = aa_to_rotmat(aa)
        assert np.linalg.norm(R - np.eye(3)) <= eps * np.sqrt(2) + 1e-12
        assert np.allclose(rotmat_to_aa(R), aa, atol=1e-15)


def test_non_finite_axis_angle_rejected():
    with pytest.raises(ValueError):
        aa_to_rotmat(np.array([np.nan, 0.0, 0.0]))


def test_identity_to_axis_angle():
    assert np.array_equal(rotmat_to_aa(np.eye(3)), np.zeros(3))


def test_pi_tie_break_prefers_nonnegative_axis():
    aa = rotmat_to_aa(np.diag([1.0, -1.0, -1.0]))
    assert np.allclose(aa, [np.pi, 0.0, 0.0])
    aa = rotmat_to_aa(aa_to_rotmat(np.array([0.0, -np.pi, 0.0])))
    assert np.allclose(aa, [0.0, np.pi, 0.0])
    # first axis component zero, second decides
    axis = np.array([0.0, -0.6, 0.8])
    aa = rotmat_to_aa(aa_to_rotmat(np.pi * axis))
    assert np.allclose(aa, -np.pi * axis, atol=1e-12)


def test_non_orthonormal_rejected():
    with pytest.raises(ValueError):
        rotmat_to_aa(np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(ValueError):
        check_rotmat(np.diag([1.0, 1.0, -1.0]))


def test_axis_angle_round_trip_sweep():
    rng = np.random.default_rng(0)
    axis = rng.normal(size=(1000, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = rng.uniform(1e-6, np.pi - 1e-3, size=(1000, 1))
    R = aa_to_rotmat(axis * angle)
    back = aa_to_rotmat(rotmat_to_aa(R))
    assert np.abs(back - R).max() < 1e-9
    assert geodesic_dist(R, back).max() < 1e-9


def test_obtuse_angles_round_trip():
    rng = np.random.default_rng(1)
    R = random_rotations(rng, 500)
    aa = rotmat_to_aa(R)
    assert np.all(np.linalg.norm(aa, axis=1) <= np.pi + 1e-12)
    assert np.linalg.norm(aa_to_rotmat(aa) - R, axis=(1, 2)).max() < 1e-9


def test_sixd_examples():
    assert np.array_equal(rotmat_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    assert np.array_equal(rotmat_to_6d(np.diag([1.0, -1.0, -1.0])), [1, 0, 0, 0, -1, 0])
    assert np.array_equal(sixd_to_rotmat(np.array([1.0, 0, 0, 0, 1, 0])), np.eye(3))
    assert np.array_equal(sixd_to_rotmat(np.array([2.0, 0, 0, 0, 3, 0])), np.eye(3))


def test_gram_schmidt_orthonormal_by_multiplication():
    R = sixd_to_rotmat(np.array([1.0, 1.0, 0.0, 0.0, 1.0, 0.0]))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-15)
    assert np.isclose(np.linalg.det(R), 1.0, atol=1e-15)
    assert np.allclose(R[:, 0], np.array([1, 1, 0]) / np.sqrt(2))


def test_sixd_round_trip_sweep():
    R = random_rotations(np.random.default_rng(2), 1000)
    assert np.abs(sixd_to_rotmat(rotmat_to_6d(R)) - R).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(arrays(float, 6, elements=finite), st.floats(1e-3, 1e3))
def test_positive_scale_invariance(d, k):
    if np.linalg.norm(d[:3]) < 1e-3 or np.linalg.norm(np.cross(d[:3], d[3:])) < 1e-3:
        return
    R = sixd_to_rotmat(d)
    scaled = d.copy()
    scaled[:3] *= k
    assert np.abs(sixd_to_rotmat(scaled) - R).max() <= 1e-12
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_degenerate_sixd_rejected_with_index():
    d = np.tile([1.0, 0, 0, 0, 1, 0], (5, 1))
    d[3, :3] = 0.0
    with pytest.raises(DegenerateRotationError) as info:
        sixd_to_rotmat(d)
    assert info.value.index == 3
    with pytest.raises(DegenerateRotationError):
        sixd_to_rotmat(np.array([1.0, 0, 0, 2.0, 0, 0]))


def test_sixd_vjp_matches_finite_differences():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(4, 6))
    G = rng.normal(size=(4, 3, 3))
    grad = sixd_to_rotmat_vjp(d, G)
    h = 1e-6
    fd = np.zeros_like(d)
    for idx in np.ndindex(d.shape):
        e = np.zeros_like(d)
        e[idx] = h
        fd[idx] = np.sum(G * (sixd_to_rotmat(d + e) - sixd_to_rotmat(d - e))) / (2 * h)
    assert np.allclose(grad, fd, rtol=1e-6, atol=1e-8)


def test_geodesic_examples():
    assert geodesic_dist(np.eye(3), np.eye(3)) == 0.0
    Rx = aa_to_rotmat(np.array([0.5, 0.0, 0.0]))
    assert np.isclose(geodesic_dist(np.eye(3), Rx), 0.5, atol=1e-15)


def test_geodesic_matches_axis_angle_oracle():
    rng = np.random.default_rng(4)
    R1, R2 = random_rotations(rng, 50), random_rotations(rng, 50)
    expected = np.linalg.norm(rotmat_to_aa(np.swapaxes(R1, 1, 2) @ R2), axis=1)
    assert np.allclose(geodesic_dist(R1, R2), expected, atol=1e-12)
    # agrees with the arccos formula away from 0 and pi
    tr = np.trace(np.swapaxes(R1, 1, 2) @ R2, axis1=1, axis2=2)
    acos = np.arccos(np.clip((tr - 1) / 2, -1, 1))
    mid = (acos > 0.1) & (acos < np.pi - 0.1)
    assert np.allclose(geodesic_dist(R1, R2)[mid], acos[mid], atol=1e-12)


def test_vee_inverts_hat():
    v = np.array([0.1, -2.0, 3.5])
    assert np.array_equal(vee(hat(v)), v)
