import math

import numpy as np
import pytest

from homoloss.geometry import (
    InvalidDepthError,
    InvalidInputError,
    Intrinsics,
    PointAtInfinity,
    Pose,
    RelativePose,
    angle_between,
    apply_relative,
    homography,
    project,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_rotmat,
    relative_pose,
    rotmat_to_quat,
)

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng, scale=5.0):
    return Pose(rng.normal(size=3) * scale, random_unit_quat(rng))


class TestQuatToRotmat:
    def test_identity(self):
        np.testing.assert_allclose(quat_to_rotmat([1, 0, 0, 0]), np.eye(3))

    def test_rz90(self):
        s = math.sqrt(0.5)
        np.testing.assert_allclose(
            quat_to_rotmat([s, 0, 0, s]), RZ90, atol=1e-15
        )

    def test_orthonormal_over_seeded_samples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            M = quat_to_rotmat(random_unit_quat(rng))
            assert np.linalg.norm(M @ M.T - np.eye(3)) < 1e-12
            assert abs(np.linalg.det(M) - 1.0) < 1e-12

    def test_non_unit_quaternion_normalized(self):
        q = np.array([2.0, 0.0, 0.0, 2.0])
        np.testing.assert_allclose(quat_to_rotmat(q), RZ90, atol=1e-15)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidInputError):
            quat_to_rotmat([0, 0, 0, 0])


class TestRelativePose:
    def test_superimposed(self):
        rng = np.random.default_rng(1)
        p = random_pose(rng)
        rel = relative_pose(p, p)
        np.testing.assert_allclose(rel.R, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(rel.t, np.zeros(3), atol=1e-14)

    def test_pure_translation_sign(self):
        gt = Pose.identity()
        est = Pose([0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0])
        rel = relative_pose(gt, est)
        np.testing.assert_allclose(rel.R, np.eye(3))
        np.testing.assert_allclose(rel.t, [0.0, 0.0, -1.0])

    def test_round_trip_composition(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            gt = random_pose(rng)
            est = random_pose(rng)
            rel = relative_pose(gt, est)
            back = apply_relative(est, rel)
            np.testing.assert_allclose(back.t, gt.t, atol=1e-12)
            np.testing.assert_allclose(
                quat_to_rotmat(back.q), quat_to_rotmat(gt.q), atol=1e-12
            )

    def test_recovers_delta(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            est = random_pose(rng)
            delta = RelativePose(
                quat_to_rotmat(random_unit_quat(rng)), rng.normal(size=3)
            )
            gt = apply_relative(est, delta)
            rel = relative_pose(gt, est)
            np.testing.assert_allclose(rel.R, delta.R, atol=1e-12)
            np.testing.assert_allclose(rel.t, delta.t, atol=1e-12)

    def test_zero_quaternion_rejected(self):
        bad = Pose([0, 0, 0], [0, 0, 0, 0])
        with pytest.raises(InvalidInputError):
            relative_pose(bad, Pose.identity())


class TestProject:
    def test_on_axis_point(self):
        K = Intrinsics(fx=500, fy=500, cx=320, cy=240, w=640, h=480)
        pix, depth = project(Pose.identity(), K, [0, 0, 3.5])
        np.testing.assert_allclose(pix, [320, 240])
        assert depth == 3.5

    def test_backside_projection_signed_depth(self):
        K = Intrinsics(fx=500, fy=500, cx=320, cy=240, w=640, h=480)
        pix, depth = project(Pose.identity(), K, [0.1, 0.0, -2.0])
        assert depth == -2.0
        assert np.all(np.isfinite(pix))

    def test_point_at_infinity(self):
        K = Intrinsics(fx=500, fy=500, cx=320, cy=240, w=640, h=480)
        with pytest.raises(PointAtInfinity):
            project(Pose.identity(), K, [1.0, 1.0, 1e-12])

    def test_homography_consistency(self):
        # Points on a plane at depth x in the gt frame map between the two
        # normalized views through H = R - t n^T / x.
        rng = np.random.default_rng(4)
        K = Intrinsics.normalized()
        n = np.array([0.0, 0.0, -1.0])
        for _ in range(100):
            gt = random_pose(rng, scale=1.0)
            est = Pose(
                gt.t + rng.normal(size=3) * 0.3,
                quat_multiply(
                    gt.q,
                    quat_from_axis_angle(rng.normal(size=3),
                                         rng.uniform(-0.3, 0.3)),
                ),
            )
            x = rng.uniform(1.0, 5.0)
            rel = relative_pose(gt, est)
            H = homography(rel, n, x).H
            R_gt = quat_to_rotmat(gt.q)
            for _ in range(5):
                # world point on the plane z = x of the gt camera
                Xc = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), x])
                P = R_gt @ Xc + gt.t
                p_gt, _ = project(gt, K, P)
                p_est, _ = project(est, K, P)
                mapped = H @ np.array([p_gt[0], p_gt[1], 1.0])
                mapped = mapped[:2] / mapped[2]
                np.testing.assert_allclose(mapped, p_est, atol=1e-9)


class TestHomography:
    def test_superimposed_identity(self):
        rng = np.random.default_rng(5)
        rel = RelativePose(np.eye(3), np.zeros(3))
        for _ in range(20):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            x = rng.uniform(0.1, 100.0)
            np.testing.assert_array_equal(homography(rel, n, x).H, np.eye(3))

    def test_pure_z_translation(self):
        tau, x = 0.3, 2.0
        rel = RelativePose(np.eye(3), [0.0, 0.0, tau])
        H = homography(rel, [0, 0, -1], x).H
        expected = np.eye(3)
        expected[2, 2] = 1.0 + tau / x
        np.testing.assert_allclose(H, expected)

    def test_translation_free(self):
        rel = RelativePose(RZ90, np.zeros(3))
        for x in (0.5, 1.0, 10.0):
            np.testing.assert_array_equal(
                homography(rel, [0, 0, -1], x).H, RZ90
            )

    def test_nonpositive_depth_rejected(self):
        rel = RelativePose(np.eye(3), np.zeros(3))
        for x in (0.0, -1.0):
            with pytest.raises(InvalidDepthError):
                homography(rel, [0, 0, -1], x)


class TestAngleBetween:
    def test_equal_is_zero(self):
        q = np.array([0.5, 0.5, 0.5, 0.5])
        assert angle_between(q, q) == 0.0

    def test_double_cover(self):
        rng = np.random.default_rng(6)
        q = random_unit_quat(rng)
        assert angle_between(q, -q) == 0.0

    def test_quarter_turn(self):
        s = math.sqrt(0.5)
        assert angle_between([1, 0, 0, 0], [s, 0, 0, s]) == pytest.approx(90.0)

    def test_sign_flip_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            q1 = random_unit_quat(rng)
            q2 = random_unit_quat(rng)
            base = angle_between(q1, q2)
            for s1 in (1, -1):
                for s2 in (1, -1):
                    assert angle_between(s1 * q1, s2 * q2) == base

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidInputError):
            angle_between([0, 0, 0, 0], [1, 0, 0, 0])


def test_rotmat_quat_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(200):
        q = random_unit_quat(rng)
        if q[0] < 0:
            q = -q
        np.testing.assert_allclose(
            rotmat_to_quat(quat_to_rotmat(q)), q, atol=1e-12
        )
