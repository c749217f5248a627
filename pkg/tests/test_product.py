import numpy as np
import pytest

from motionfields import so3
from motionfields.product import identity_pose, pose_distance, pose_exp, pose_log, pose_rgrad


def rot_x(a):
    return so3.exp_so3(np.array([a, 0.0, 0.0]))


def test_distance_identical_is_zero():
    rng = np.random.default_rng(0)
    a = so3.random_rotations(rng, 5)
    assert pose_distance(a, a) == 0.0


def test_distance_is_l1_sum():
    a = identity_pose(2)
    b = np.stack([rot_x(np.pi / 4), so3.exp_so3([0, np.pi / 2, 0])])
    assert abs(pose_distance(a, b) - 3 * np.pi / 4) < 1e-14


def test_distance_matches_per_joint_loop():
    rng = np.random.default_rng(1)
    a, b = so3.random_rotations(rng, (2, 7))
    oracle = sum(np.linalg.norm(so3.log_so3(a[k].T @ b[k])) for k in range(7))
    assert abs(pose_distance(a, b) - oracle) < 1e-12


def test_metric_axioms():
    rng = np.random.default_rng(2)
    a, b, c = so3.random_rotations(rng, (3, 500, 4))
    dab = pose_distance(a, b)
    assert np.abs(dab - pose_distance(b, a)).max() < 1e-12
    assert (pose_distance(a, c) + pose_distance(c, b) - dab).min() > -1e-9
    assert np.all(dab > 0)


def test_mismatched_k_raises():
    with pytest.raises(ValueError):
        pose_distance(identity_pose(2), identity_pose(3))
    with pytest.raises(ValueError):
        pose_exp(identity_pose(2), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        pose_log(identity_pose(2), identity_pose(3))
    with pytest.raises(ValueError):
        pose_rgrad(identity_pose(2), np.zeros((3, 3, 3)))


def test_exp_zero_step_is_exact():
    rng = np.random.default_rng(3)
    base = so3.random_rotations(rng, 4)
    assert np.array_equal(pose_exp(base, np.zeros((4, 3))), base)


def test_exp_single_joint():
    out = pose_exp(identity_pose(1), np.array([[np.pi / 3, 0, 0]]))
    c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
    np.testing.assert_allclose(out[0], [[1, 0, 0], [0, c, -s], [0, s, c]], atol=1e-15)


def test_exp_accepts_tangent_matrices():
    rng = np.random.default_rng(4)
    base = so3.random_rotations(rng, 3)
    w = rng.normal(size=(3, 3)) * 0.3
    tangent = base @ so3.hat(w)
    np.testing.assert_allclose(pose_exp(base, tangent), pose_exp(base, w), atol=1e-14)


def test_log_cases():
    base = identity_pose(3)
    assert np.array_equal(pose_log(base, base), np.zeros((3, 3)))
    np.testing.assert_allclose(pose_log(identity_pose(1), rot_x(0.2)[None]), [[0.2, 0, 0]], atol=1e-15)


def test_log_norm_is_distance():
    rng = np.random.default_rng(5)
    a, b = so3.random_rotations(rng, (2, 100, 3))
    np.testing.assert_allclose(np.linalg.norm(pose_log(a, b), axis=-1), so3.geodesic_distance(a, b), atol=1e-9)


def test_exp_log_round_trip():
    rng = np.random.default_rng(6)
    base = so3.random_rotations(rng, (1000, 3))
    d = rng.normal(size=(1000, 3, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    v = d * rng.uniform(0, np.pi - 1e-3, size=(1000, 3, 1))
    assert np.abs(pose_log(base, pose_exp(base, v)) - v).max() < 1e-8


def test_rgrad_componentwise():
    rng = np.random.default_rng(7)
    sym = rng.normal(size=(3, 3, 3))
    sym = sym + np.swapaxes(sym, -1, -2)
    assert np.abs(pose_rgrad(identity_pose(3), sym)).max() < 1e-15

    pose = so3.random_rotations(rng, 4)
    eg = np.zeros((4, 3, 3))
    eg[2] = rng.normal(size=(3, 3))
    out = pose_rgrad(pose, eg)
    assert np.all(out[[0, 1, 3]] == 0) and np.abs(out[2]).max() > 0

    eg = rng.normal(size=(4, 3, 3))
    out = pose_rgrad(pose, eg)
    for k in range(4):
        np.testing.assert_allclose(out[k], so3.egrad2rgrad(pose[k], eg[k]), atol=1e-15)
    normal = pose @ so3.sym_part(np.swapaxes(pose, -1, -2) @ eg)
    assert np.abs(np.einsum("kij,kij->k", out, normal)).max() < 1e-10
