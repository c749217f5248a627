import json

import numpy as np
import pytest

from motionfields import so3
from motionfields.kinematics import (
    MotionSequence,
    Skeleton,
    bone_lengths,
    canonicalize,
    estimate_acceleration,
    estimate_velocity,
    fk_backward,
    forward_kinematics,
    read_motion,
    rebuild_states,
    toy_chain,
    write_motion,
)
from motionfields.product import pose_distance

FPS = 30.0


def lissajous(n=90, k=3, fps=FPS):
    t = np.arange(n)[:, None] / fps
    phases = np.arange(k)[None, :]
    w = np.stack([
        0.6 * np.sin(1.3 * t + phases),
        0.4 * np.sin(2.1 * t + 0.5 + phases),
        0.3 * np.cos(0.9 * t - phases),
    ], axis=-1)
    return so3.exp_so3(w)


def single_axis(phi):
    w = np.zeros((len(phi), 1, 3))
    w[:, 0, 0] = phi
    return so3.exp_so3(w)


class TestVelocity:
    def test_constant_pose(self):
        poses = np.tile(so3.random_rotations(np.random.default_rng(0), 4), (10, 1, 1, 1))
        for scheme in ("log-central", "matrix-central"):
            assert np.abs(estimate_velocity(poses, FPS, scheme)).max() < 1e-12

    def test_geodesic_is_exact(self):
        t = np.arange(30) / FPS
        poses = single_axis(0.5 * t)
        vel = estimate_velocity(poses, FPS, "log-central")
        np.testing.assert_allclose(vel[1:-1, 0], np.tile([0.5, 0, 0], (28, 1)), atol=1e-6)

    def test_schemes_agree_on_smooth_motion(self):
        poses = lissajous()
        a = estimate_velocity(poses, FPS, "log-central")
        b = estimate_velocity(poses, FPS, "matrix-central")
        rel = np.linalg.norm(a - b, axis=-1)[1:-1] / np.linalg.norm(a, axis=-1)[1:-1]
        assert rel.max() < 0.01

    def test_quadratic_angle(self):
        t = np.arange(60) / FPS
        vel = estimate_velocity(single_axis(0.5 * t**2), FPS)
        assert np.abs(vel[1:-1, 0, 0] - t[1:-1]).max() < 1e-3

    def test_left_equivariance(self):
        poses = lissajous()
        g = so3.random_rotations(np.random.default_rng(1), 1)[0]
        for scheme in ("log-central", "matrix-central"):
            np.testing.assert_allclose(estimate_velocity(g @ poses, FPS, scheme), estimate_velocity(poses, FPS, scheme), atol=1e-10)

    def test_rejects_short_and_unknown(self):
        with pytest.raises(ValueError):
            estimate_velocity(np.tile(np.eye(3), (2, 1, 1, 1)), FPS)
        with pytest.raises(ValueError):
            estimate_velocity(lissajous(), FPS, "forward")


class TestAcceleration:
    def test_geodesic_zero(self):
        t = np.arange(40) / FPS
        w = np.outer(t, [0.3, -0.2, 0.5])[:, None, :]
        vel = estimate_velocity(so3.exp_so3(w), FPS)
        acc = estimate_acceleration(vel, FPS)
        assert np.linalg.norm(acc, axis=-1).max() < 1e-6 * FPS

    def test_quadratic_angle(self):
        t = np.arange(60) / FPS
        vel = estimate_velocity(single_axis(0.5 * t**2), FPS)
        acc = estimate_acceleration(vel, FPS)
        np.testing.assert_allclose(acc[2:-2, 0], np.tile([1.0, 0, 0], (56, 1)), atol=1e-3)

    def test_transport_scheme_agrees(self):
        poses = lissajous()
        vel = estimate_velocity(poses, FPS)
        a = estimate_acceleration(vel, FPS, "central")
        b = estimate_acceleration(vel, FPS, "log-transport", poses=poses)
        inner = slice(2, -2)
        rel = np.linalg.norm(a[inner] - b[inner], axis=-1).sum() / np.linalg.norm(a[inner], axis=-1).sum()
        assert rel < 0.05

    def test_transport_needs_poses(self):
        with pytest.raises(ValueError):
            estimate_acceleration(np.zeros((5, 1, 3)), FPS, "log-transport")
        with pytest.raises(ValueError):
            estimate_acceleration(np.zeros((2, 1, 3)), FPS)


class TestRebuild:
    def test_constant(self):
        seq = rebuild_states(np.tile(np.eye(3), (6, 2, 1, 1)), FPS)
        assert np.all(seq.vel == 0) and np.all(seq.acc == 0)

    def test_geodesic(self):
        t = np.arange(20) / FPS
        seq = rebuild_states(single_axis(0.7 * t), FPS)
        np.testing.assert_allclose(seq.vel[:, 0, 0], 0.7, atol=1e-12)
        assert np.abs(seq.acc).max() < 1e-9


class TestForwardKinematics:
    def test_rest_pose(self):
        skel = toy_chain(5)
        pos = forward_kinematics(skel, np.zeros(3), np.tile(np.eye(3), (5, 1, 1)))
        np.testing.assert_array_equal(pos, [[0, 0, -i] for i in range(5)])

    def test_rotated_root(self):
        skel = Skeleton([-1, 0], [[0, 0, 0], [0, 1, 0]])
        pose = np.stack([so3.exp_so3([0, 0, np.pi / 2]), np.eye(3)])
        np.testing.assert_allclose(forward_kinematics(skel, np.zeros(3), pose)[1], [-1, 0, 0], atol=1e-15)

    def test_beta_scales_bones(self):
        skel = toy_chain(4)
        pose = so3.random_rotations(np.random.default_rng(2), 4)
        p1 = forward_kinematics(skel, np.zeros(3), pose)
        p2 = forward_kinematics(skel, np.zeros(3), pose, beta=2 * np.ones(4))
        np.testing.assert_allclose(p2, 2 * p1, atol=1e-14)

    def test_branching_tree(self):
        skel = Skeleton([-1, 0, 1, 0, 3], [[0, 0, 0], [1, 0, 0], [1, 0, 0], [-1, 0, 0], [0, -1, 0]])
        pose = np.tile(np.eye(3), (5, 1, 1))
        pose[0] = so3.exp_so3([0, 0, np.pi])
        pos = forward_kinematics(skel, np.array([1.0, 2.0, 3.0]), pose)
        np.testing.assert_allclose(pos, [[1, 2, 3], [0, 2, 3], [-1, 2, 3], [2, 2, 3], [2, 3, 3]], atol=1e-14)

    def test_preserves_bone_lengths(self):
        skel = Skeleton([-1, 0, 1, 1], [[0, 0, 0], [0, 0, -1], [0.5, 0, -0.3], [0, 2, 0]], [1, 1.5, 0.7, 1.2])
        poses = so3.random_rotations(np.random.default_rng(3), (50, 4))
        lengths = bone_lengths(skel, forward_kinematics(skel, np.zeros(3), poses))
        rest = skel.beta[1:] * np.linalg.norm(skel.offsets[1:], axis=1)
        assert np.abs(lengths - rest).max() < 1e-12

    def test_bone_lengths_oracle(self):
        skel = toy_chain(4)
        pts = np.random.default_rng(4).normal(size=(4, 3))
        expected = [np.sqrt(np.sum((pts[k] - pts[k - 1]) ** 2)) for k in range(1, 4)]
        np.testing.assert_allclose(bone_lengths(skel, pts), expected, atol=1e-15)

    def test_rigid_motion_keeps_lengths(self):
        skel = toy_chain(5)
        pose = so3.random_rotations(np.random.default_rng(5), 5)
        pos = forward_kinematics(skel, np.zeros(3), pose)
        g = so3.random_rotations(np.random.default_rng(6), 1)[0]
        np.testing.assert_allclose(bone_lengths(skel, pos @ g.T), bone_lengths(skel, pos), atol=1e-14)

    def test_invalid_skeletons(self):
        with pytest.raises(ValueError):
            Skeleton([-1, 2, 1], np.ones((3, 3)))
        with pytest.raises(ValueError):
            Skeleton([0, 0], np.ones((2, 3)))
        with pytest.raises(ValueError):
            Skeleton([-1, 0], [[0, 0, 0], [0, 0, 0]])
        with pytest.raises(ValueError):
            Skeleton([-1, 0], np.ones((2, 3)), [1.0, -1.0])

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        skel = Skeleton([-1, 0, 1, 1, 3], rng.normal(size=(5, 3)), rng.uniform(0.5, 1.5, 5))
        pose = so3.random_rotations(rng, (3, 5))
        t_r = rng.normal(size=(3, 3))
        w = rng.normal(size=(3, 5, 3))

        def f(t_r, pose, beta):
            return np.sum(w * forward_kinematics(skel, t_r, pose, beta))

        pos, glob = forward_kinematics(skel, t_r, pose, return_globals=True)
        g_t, g_ax, g_b = fk_backward(skel, glob, pos, w)
        h = 1e-6
        for i in range(3):
            e = np.zeros((3, 3))
            e[1, i] = h
            fd = (f(t_r + e, pose, skel.beta) - f(t_r - e, pose, skel.beta)) / (2 * h)
            assert abs(fd - g_t[1, i]) < 1e-7
        for t, k, i in [(0, 0, 0), (1, 1, 2), (2, 3, 1), (0, 4, 1), (2, 2, 0)]:
            d = np.zeros(3)
            d[i] = h
            pp, pm = pose.copy(), pose.copy()
            pp[t, k] = pose[t, k] @ so3.exp_so3(d)
            pm[t, k] = pose[t, k] @ so3.exp_so3(-d)
            fd = (f(t_r, pp, skel.beta) - f(t_r, pm, skel.beta)) / (2 * h)
            assert abs(fd - g_ax[t, k, i]) < 1e-7
        for k in range(1, 5):
            b = np.zeros(5)
            b[k] = h
            fd = (f(t_r, pose, skel.beta + b) - f(t_r, pose, skel.beta - b)) / (2 * h)
            assert abs(fd - g_b[k]) < 1e-7


class TestCanonicalize:
    def make(self):
        rng = np.random.default_rng(8)
        poses = lissajous(20, 4)
        t_r = rng.normal(size=(20, 3))
        return MotionSequence(poses, FPS, t_r=t_r)

    def test_frame_zero_is_canonical(self):
        out = canonicalize(self.make())
        np.testing.assert_allclose(out.poses[0, 0], np.eye(3), atol=1e-14)
        np.testing.assert_allclose(out.t_r[0], 0, atol=1e-14)

    def test_idempotent_and_invariant(self):
        seq = self.make()
        once = canonicalize(seq)
        twice = canonicalize(once)
        np.testing.assert_allclose(twice.poses, once.poses, atol=1e-14)
        np.testing.assert_allclose(twice.t_r, once.t_r, atol=1e-14)
        g = so3.exp_so3([0.3, -1.0, 2.0])
        poses = seq.poses.copy()
        poses[:, 0] = g @ poses[:, 0]
        moved = MotionSequence(poses, FPS, t_r=seq.t_r @ g.T + [1, 2, 3])
        other = canonicalize(moved)
        np.testing.assert_allclose(other.poses, once.poses, atol=1e-12)
        np.testing.assert_allclose(other.t_r, once.t_r, atol=1e-12)

    def test_pairwise_distances_preserved(self):
        seq = self.make()
        out = canonicalize(seq)
        i, j = np.triu_indices(20, 1)
        before = pose_distance(seq.poses[i], seq.poses[j])
        after = pose_distance(out.poses[i], out.poses[j])
        assert np.abs(before - after).max() < 1e-12


class TestMotionFile:
    def test_round_trip(self, tmp_path):
        skel = toy_chain(3)
        seq = rebuild_states(lissajous(12, 3), FPS, t_r=np.random.default_rng(9).normal(size=(12, 3)))
        path = tmp_path / "m.json"
        write_motion(path, seq, skel)
        back, skel2 = read_motion(path)
        np.testing.assert_allclose(back.poses, seq.poses, atol=1e-14)
        np.testing.assert_array_equal(back.t_r, seq.t_r)
        np.testing.assert_array_equal(back.vel, seq.vel)
        np.testing.assert_array_equal(back.acc, seq.acc)
        np.testing.assert_array_equal(skel2.offsets, skel.offsets)
        assert back.fps == FPS
        quats = json.loads(path.read_text())["frames"][0]["quats"]
        assert all(q[0] >= 0 for q in quats)

    def test_rejects_non_unit_quaternions(self, tmp_path):
        d = {"fps": 30, "k": 1, "frames": [{"t_r": [0, 0, 0], "quats": [[1.0, 1e-2, 0, 0]]}]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(d))
        with pytest.raises(ValueError):
            read_motion(path)

    def test_rejects_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError):
            read_motion(path)
        path.write_text(json.dumps({"fps": 30}))
        with pytest.raises(ValueError):
            read_motion(path)
