"""Rotation-group primitives: proper SVD, parameterizations, metrics."""

import numpy as np
import pytest

from kinefisher import InvalidArgumentError
from kinefisher.rng import RandomTree
from kinefisher.so3 import (
    axis_angle_to_matrix,
    axis_angle_to_matrix_vjp,
    check_rotation,
    geodesic_distance,
    haar_random_rotation,
    haar_random_rotations,
    matrix_to_axis_angle,
    matrix_to_quaternion,
    proper_svd,
    quaternion_to_matrix,
)


def _random_matrix(rng, scale=3.0):
    return scale * rng.standard_normal((3, 3))


class TestProperSVD:
    def test_reconstruction_and_frames(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            f = _random_matrix(rng)
            svd = proper_svd(f)
            np.testing.assert_allclose((svd.u * svd.s) @ svd.v.T, f, atol=1e-10)
            np.testing.assert_allclose(svd.u @ svd.u.T, np.eye(3), atol=1e-12)
            np.testing.assert_allclose(svd.v @ svd.v.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(svd.u) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.det(svd.v) == pytest.approx(1.0, abs=1e-12)

    def test_singular_value_ordering(self):
        # s1 >= s2 >= |s3|; only the smallest may carry the sign of det F.
        rng = np.random.default_rng(12)
        for _ in range(200):
            s = proper_svd(_random_matrix(rng)).s
            assert s[0] >= s[1] >= abs(s[2])

    def test_sign_follows_determinant(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            f = _random_matrix(rng)
            s3 = proper_svd(f).s[2]
            det = np.linalg.det(f)
            if abs(det) > 1e-9:
                assert np.sign(s3) == np.sign(det)

    def test_zero_matrix(self):
        svd = proper_svd(np.zeros((3, 3)))
        np.testing.assert_allclose(svd.s, 0.0)
        np.testing.assert_allclose(svd.u @ svd.u.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(svd.u) == pytest.approx(1.0)

    def test_repeated_singular_values(self):
        # Ties must still produce proper orthogonal frames that reconstruct.
        for f in (np.eye(3), 2.0 * np.eye(3), np.diag([3.0, 3.0, 1.0]),
                  np.diag([5.0, 2.0, 2.0]), np.diag([1.0, 1.0, -1.0])):
            svd = proper_svd(f)
            np.testing.assert_allclose((svd.u * svd.s) @ svd.v.T, f, atol=1e-10)
            assert np.linalg.det(svd.u) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.det(svd.v) == pytest.approx(1.0, abs=1e-12)

    def test_rotation_input_gives_unit_spectrum(self):
        rng = RandomTree(7)
        for i in range(20):
            r = haar_random_rotation(rng.child(i))
            svd = proper_svd(r)
            np.testing.assert_allclose(svd.s, 1.0, atol=1e-10)
            np.testing.assert_allclose(svd.u @ svd.v.T, r, atol=1e-9)

    def test_rejects_bad_shape(self):
        with pytest.raises(InvalidArgumentError):
            proper_svd(np.zeros((2, 3)))


class TestAxisAngle:
    def test_round_trip(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            gamma = rng.uniform(-np.pi, np.pi) * _unit(rng)
            r = axis_angle_to_matrix(gamma)
            check_rotation(r)
            np.testing.assert_allclose(matrix_to_axis_angle(r), gamma, atol=1e-9)

    def test_zero_is_identity(self):
        np.testing.assert_allclose(axis_angle_to_matrix(np.zeros(3)), np.eye(3))
        np.testing.assert_allclose(matrix_to_axis_angle(np.eye(3)), 0.0)

    def test_rotation_angle_matches_norm(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            theta = rng.uniform(0.01, np.pi - 0.01)
            r = axis_angle_to_matrix(theta * _unit(rng))
            assert geodesic_distance(r, np.eye(3)) == pytest.approx(theta, abs=1e-9)

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(40):
            gamma = rng.uniform(-2.0, 2.0, size=3)
            grad_r = rng.standard_normal((3, 3))
            analytic = axis_angle_to_matrix_vjp(gamma, grad_r)
            fd = np.zeros(3)
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                fd[k] = (
                    np.sum(grad_r * axis_angle_to_matrix(gamma + e))
                    - np.sum(grad_r * axis_angle_to_matrix(gamma - e))
                ) / (2 * h)
            np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-7)

    def test_vjp_at_zero(self):
        grad_r = np.arange(9.0).reshape(3, 3)
        h = 1e-7
        analytic = axis_angle_to_matrix_vjp(np.zeros(3), grad_r)
        fd = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd[k] = (
                np.sum(grad_r * axis_angle_to_matrix(e))
                - np.sum(grad_r * axis_angle_to_matrix(-e))
            ) / (2 * h)
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-8)


class TestQuaternion:
    def test_unit_quaternion_gives_rotation(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            x = _unit(rng, 4)
            r = quaternion_to_matrix(x)
            check_rotation(r)

    def test_round_trip_up_to_sign(self):
        rng = np.random.default_rng(32)
        for _ in range(100):
            x = _unit(rng, 4)
            y = matrix_to_quaternion(quaternion_to_matrix(x))
            assert min(np.linalg.norm(y - x), np.linalg.norm(y + x)) < 1e-9

    def test_antipodal_pair_same_rotation(self):
        rng = np.random.default_rng(33)
        x = _unit(rng, 4)
        np.testing.assert_allclose(
            quaternion_to_matrix(x), quaternion_to_matrix(-x), atol=1e-12
        )

    def test_identity(self):
        np.testing.assert_allclose(
            quaternion_to_matrix(np.array([1.0, 0, 0, 0])), np.eye(3), atol=1e-15
        )


class TestGeodesicDistance:
    def test_symmetry_and_identity(self):
        rng = RandomTree(41)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        assert geodesic_distance(r1, r1) == pytest.approx(0.0, abs=1e-7)
        assert geodesic_distance(r1, r2) == pytest.approx(
            geodesic_distance(r2, r1), abs=1e-12
        )

    def test_bi_invariance(self):
        rng = RandomTree(42)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        g = haar_random_rotation(rng.child(2))
        d = geodesic_distance(r1, r2)
        assert geodesic_distance(g @ r1, g @ r2) == pytest.approx(d, abs=1e-9)
        assert geodesic_distance(r1 @ g, r2 @ g) == pytest.approx(d, abs=1e-9)

    def test_max_distance_is_pi(self):
        r = axis_angle_to_matrix(np.array([np.pi, 0.0, 0.0]))
        assert geodesic_distance(r, np.eye(3)) == pytest.approx(np.pi, abs=1e-7)


class TestHaarSampling:
    def test_deterministic_under_seed(self):
        a = haar_random_rotations(5, RandomTree(3))
        b = haar_random_rotations(5, RandomTree(3))
        np.testing.assert_array_equal(a, b)

    def test_all_proper_rotations(self):
        rs = haar_random_rotations(200, RandomTree(4))
        for r in rs:
            check_rotation(r)

    def test_mean_rotation_near_zero(self):
        # The Haar mean of R is the zero matrix.
        rs = haar_random_rotations(20000, RandomTree(5))
        np.testing.assert_allclose(rs.mean(axis=0), 0.0, atol=0.03)


def _unit(rng, n=3):
    x = rng.standard_normal(n)
    return x / np.linalg.norm(x)
