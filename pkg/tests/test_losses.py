"""Loss terms: values against closed forms, gradients against differences."""

import numpy as np
import pytest

from kinefisher.distributions import ShapeDist
from kinefisher.errors import InvalidArgumentError
from kinefisher.losses import (
    global_rot_loss,
    pose_nll,
    reproj_2d_sample_loss,
    shape_kl_to_prior,
    shape_nll,
)
from kinefisher.matrix_fisher import MatrixFisher
from kinefisher.rng import RandomTree
from kinefisher.so3 import axis_angle_to_matrix, haar_random_rotation


class TestShapeNLL:
    def test_value_matches_scipy(self):
        from scipy.stats import norm

        d = ShapeDist(np.array([0.2, -0.7]), np.array([0.5, 2.0]))
        beta = np.array([1.0, 0.3])
        val, _, _ = shape_nll(beta, d)
        expect = -norm.logpdf(beta, loc=d.mu, scale=np.sqrt(d.sigma2)).sum()
        assert val == pytest.approx(expect, rel=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(20):
            mu = rng.standard_normal(4)
            sigma2 = rng.uniform(0.2, 3.0, size=4)
            beta = rng.standard_normal(4)
            _, g_mu, g_s2 = shape_nll(beta, ShapeDist(mu, sigma2))
            for i in range(4):
                e = np.zeros(4)
                e[i] = h
                fd_mu = (
                    shape_nll(beta, ShapeDist(mu + e, sigma2))[0]
                    - shape_nll(beta, ShapeDist(mu - e, sigma2))[0]
                ) / (2 * h)
                fd_s2 = (
                    shape_nll(beta, ShapeDist(mu, sigma2 + e))[0]
                    - shape_nll(beta, ShapeDist(mu, sigma2 - e))[0]
                ) / (2 * h)
                assert g_mu[i] == pytest.approx(fd_mu, rel=1e-5, abs=1e-8)
                assert g_s2[i] == pytest.approx(fd_s2, rel=1e-5, abs=1e-8)

    def test_minimized_at_label(self):
        d = ShapeDist(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        _, g_mu, _ = shape_nll(np.array([1.0, 2.0]), d)
        np.testing.assert_allclose(g_mu, 0.0, atol=1e-14)


class TestPoseNLL:
    def test_value_is_negative_log_pdf(self):
        d = MatrixFisher.from_diag([2.0, 1.0, 0.5])
        r = haar_random_rotation(RandomTree(1))
        val, _ = pose_nll(r, d)
        assert val == pytest.approx(-d.log_pdf(r), rel=1e-12)

    def test_gradient_is_mean_minus_label(self):
        d = MatrixFisher.from_diag([2.0, 1.0, 0.5])
        r = haar_random_rotation(RandomTree(2))
        _, grad = pose_nll(r, d)
        np.testing.assert_allclose(grad, d.expected_rotation() - r, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(10):
            f = rng.standard_normal((3, 3))
            r = haar_random_rotation(RandomTree(int(rng.integers(1 << 30))))
            _, grad = pose_nll(r, MatrixFisher(f))
            for idx in ((0, 0), (1, 2), (2, 1)):
                e = np.zeros((3, 3))
                e[idx] = h
                fd = (
                    pose_nll(r, MatrixFisher(f + e))[0]
                    - pose_nll(r, MatrixFisher(f - e))[0]
                ) / (2 * h)
                assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_rejects_non_rotation(self):
        d = MatrixFisher.from_diag([1.0, 0.5, 0.2])
        with pytest.raises(InvalidArgumentError):
            pose_nll(2.0 * np.eye(3), d)


class TestGlobalRotLoss:
    def test_zero_at_equal_rotations(self):
        gamma = np.array([0.4, -0.2, 0.1])
        assert global_rot_loss(gamma, gamma) == pytest.approx(0.0, abs=1e-12)

    def test_frobenius_value(self):
        a = np.zeros(3)
        b = np.array([np.pi, 0.0, 0.0])
        # R(b) = diag(1, -1, -1): squared Frobenius distance to identity is 8.
        assert global_rot_loss(a, b) == pytest.approx(8.0, abs=1e-9)

    def test_relates_to_geodesic_angle(self):
        # |R1 - R2|_F^2 = 4 (1 - cos theta) for rotations.
        rng = np.random.default_rng(4)
        for _ in range(10):
            g1 = rng.standard_normal(3) * 0.5
            g2 = rng.standard_normal(3) * 0.5
            r1 = axis_angle_to_matrix(g1)
            r2 = axis_angle_to_matrix(g2)
            cos_theta = 0.5 * (np.trace(r1.T @ r2) - 1.0)
            expect = 4.0 * (1.0 - cos_theta)
            assert global_rot_loss(g1, g2) == pytest.approx(expect, abs=1e-9)


class TestReproj2D:
    def test_value_by_hand(self):
        samples = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [2.0, 0.0]]])
        targets = np.zeros((2, 2))
        vis = np.array([1.0, 1.0])
        val, _ = reproj_2d_sample_loss(samples, targets, vis)
        # Squared distances: 1 + 0 + 1 + 4 = 6 over K*vis = 2*2.
        assert val == pytest.approx(6.0 / 4.0)

    def test_mask_removes_joints(self):
        samples = np.array([[[1.0, 0.0], [7.0, 7.0]]])
        targets = np.zeros((2, 2))
        val, grad = reproj_2d_sample_loss(samples, targets, np.array([1.0, 0.0]))
        assert val == pytest.approx(1.0)
        np.testing.assert_allclose(grad[0, 1], 0.0)

    def test_no_visible_joints_is_zero(self):
        samples = np.ones((3, 4, 2))
        val, grad = reproj_2d_sample_loss(samples, np.zeros((4, 2)), np.zeros(4))
        assert val == 0.0
        np.testing.assert_allclose(grad, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        samples = rng.standard_normal((3, 5, 2))
        targets = rng.standard_normal((5, 2))
        vis = (rng.uniform(size=5) < 0.8).astype(float)
        _, grad = reproj_2d_sample_loss(samples, targets, vis)
        h = 1e-6
        for _ in range(10):
            k = rng.integers(3)
            l = rng.integers(5)
            c = rng.integers(2)
            e = np.zeros_like(samples)
            e[k, l, c] = h
            fd = (
                reproj_2d_sample_loss(samples + e, targets, vis)[0]
                - reproj_2d_sample_loss(samples - e, targets, vis)[0]
            ) / (2 * h)
            assert grad[k, l, c] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_shape_validation(self):
        with pytest.raises(InvalidArgumentError):
            reproj_2d_sample_loss(np.zeros((2, 3, 2)), np.zeros((4, 2)), np.zeros(4))


class TestShapeKL:
    def test_zero_at_prior(self):
        d = ShapeDist(np.zeros(5), np.full(5, 1.7))
        val, g_mu, g_s2 = shape_kl_to_prior(d, 1.7)
        assert val == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(g_mu, 0.0, atol=1e-14)
        np.testing.assert_allclose(g_s2, 0.0, atol=1e-14)

    def test_positive_off_prior(self):
        d = ShapeDist(np.array([1.0, -2.0]), np.array([0.5, 3.0]))
        val, _, _ = shape_kl_to_prior(d, 1.0)
        assert val > 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        h = 1e-6
        for _ in range(10):
            mu = rng.standard_normal(3)
            sigma2 = rng.uniform(0.3, 2.5, size=3)
            pv = rng.uniform(0.5, 2.0)
            _, g_mu, g_s2 = shape_kl_to_prior(ShapeDist(mu, sigma2), pv)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fd_mu = (
                    shape_kl_to_prior(ShapeDist(mu + e, sigma2), pv)[0]
                    - shape_kl_to_prior(ShapeDist(mu - e, sigma2), pv)[0]
                ) / (2 * h)
                fd_s2 = (
                    shape_kl_to_prior(ShapeDist(mu, sigma2 + e), pv)[0]
                    - shape_kl_to_prior(ShapeDist(mu, sigma2 - e), pv)[0]
                ) / (2 * h)
                assert g_mu[i] == pytest.approx(fd_mu, rel=1e-6, abs=1e-9)
                assert g_s2[i] == pytest.approx(fd_s2, rel=1e-5, abs=1e-9)

    def test_rejects_bad_prior(self):
        with pytest.raises(InvalidArgumentError):
            shape_kl_to_prior(ShapeDist(np.zeros(2), np.ones(2)), 0.0)
