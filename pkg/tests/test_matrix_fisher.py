"""Matrix-Fisher distribution: normalizer, moments, density, MLE."""

import numpy as np
import pytest

from kinefisher.constants import S_CAP
from kinefisher.errors import (
    ConcentrationOverflowError,
    InvalidArgumentError,
    ModeUndefinedError,
)
from kinefisher.matrix_fisher import (
    MatrixFisher,
    bingham_coefficients,
    concentrations_from_s,
    log_norm_const,
    log_pdf_many,
    mle_fit,
)
from kinefisher.rng import RandomTree
from kinefisher.sampler import sample_matrix_fisher_many
from kinefisher.so3 import (
    axis_angle_to_matrix,
    geodesic_distance,
    haar_random_rotation,
    haar_random_rotations,
)

# Frozen order-64 normalizer values, each independently confirmed against a
# 10^6-draw Haar Monte-Carlo estimate (agreement within two standard errors;
# the acceptance suite repeats that comparison). These literals guard against
# silent regressions of the quadrature pipeline.
_LOG_C_FROZEN = {
    (1.0, 2.0, 3.0): 2.474280756118,
    (5.0, 5.0, 5.0): 9.974858362684,
    (2.0, 2.0, -1.0): 0.967903738485,
    (10.0, 1.0, 0.5): 7.460957835580,
    (0.5, 0.2, 0.1): 0.051351450523,
}


class TestLogNormConst:
    def test_uniform_is_exactly_zero(self):
        assert log_norm_const(np.zeros(3)) == 0.0

    def test_frozen_values(self):
        for s, expect in _LOG_C_FROZEN.items():
            got = log_norm_const(np.array(s), order=64)
            assert got == pytest.approx(expect, abs=1e-9), s

    def test_sign_flip_symmetry(self):
        # log c is invariant under permutations combined with an even
        # number of sign flips (conjugation by a rotation of the frame).
        base = log_norm_const(np.array([3.0, 2.0, 1.0]))
        for s in ([2.0, 3.0, 1.0], [-3.0, -2.0, 1.0], [3.0, -2.0, -1.0]):
            assert log_norm_const(np.array(s)) == pytest.approx(base, rel=1e-12)

    def test_monotone_in_concentration(self):
        values = [log_norm_const(np.array([t, t / 2, t / 4])) for t in (0.5, 1, 2, 4, 8)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_jensen_lower_bound(self):
        # E[exp(tr(S R))] >= exp(E[tr(S R)]) = 1, so log c >= 0 always.
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = np.sort(rng.uniform(0.0, 8.0, size=3))[::-1]
            if rng.uniform() < 0.5:
                s[2] = -s[2] * rng.uniform(0.0, 1.0)
            assert log_norm_const(s) >= 0.0

    def test_overflow_guard(self):
        with pytest.raises(ConcentrationOverflowError):
            log_norm_const(np.array([S_CAP + 1.0, 0.0, 0.0]))

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidArgumentError):
            log_norm_const(np.array([1.0, 2.0]))
        with pytest.raises(InvalidArgumentError):
            log_norm_const(np.array([np.nan, 0.0, 0.0]))


class TestCoefficients:
    def test_pairings(self):
        s = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(concentrations_from_s(s), [5.0, 4.0, 3.0])
        np.testing.assert_allclose(bingham_coefficients(s), [10.0, 8.0, 6.0])


class TestMatrixFisher:
    def test_mode_and_spectrum(self):
        rng = RandomTree(17)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        f = r1 @ np.diag([4.0, 2.0, 1.0]) @ r2.T
        d = MatrixFisher(f)
        np.testing.assert_allclose(d.svd.s, [4.0, 2.0, 1.0], atol=1e-10)
        assert geodesic_distance(d.mode(), r1 @ r2.T) < 1e-9

    def test_mode_undefined_for_uniform(self):
        with pytest.raises(ModeUndefinedError):
            MatrixFisher(np.zeros((3, 3))).mode()

    def test_immutability(self):
        d = MatrixFisher.from_diag([1.0, 0.5, 0.2])
        with pytest.raises(AttributeError):
            d.log_c = 0.0

    def test_log_pdf_matches_direct_formula(self):
        rng = RandomTree(18)
        d = MatrixFisher.from_diag([2.0, 1.0, 0.5])
        for i in range(10):
            r = haar_random_rotation(rng.child(i))
            expect = np.sum(d.f * r) - d.log_c
            assert d.log_pdf(r) == pytest.approx(expect, rel=1e-12)

    def test_log_pdf_many_matches_scalar(self):
        d = MatrixFisher.from_diag([2.0, 1.0, 0.5])
        rs = haar_random_rotations(50, RandomTree(19))
        many = log_pdf_many(rs, d)
        for r, val in zip(rs, many):
            assert val == pytest.approx(d.log_pdf(r), rel=1e-12)

    def test_density_normalizes_by_monte_carlo(self):
        # (1/N) sum exp(log_pdf(R_n)) over Haar draws estimates 1.
        d = MatrixFisher.from_diag([2.0, 1.0, 0.5])
        rs = haar_random_rotations(200000, RandomTree(20))
        est = np.exp(log_pdf_many(rs, d)).mean()
        assert est == pytest.approx(1.0, abs=0.02)

    def test_expected_rotation_shrinks_toward_mode(self):
        # E[R] = U diag(d) V' with d in [0, 1); higher concentration means
        # d closer to 1.
        lo = MatrixFisher.from_diag([1.0, 0.8, 0.5])
        hi = MatrixFisher.from_diag([20.0, 16.0, 10.0])
        d_lo = np.diag(lo.svd.u.T @ lo.expected_rotation() @ lo.svd.v)
        d_hi = np.diag(hi.svd.u.T @ hi.expected_rotation() @ hi.svd.v)
        assert np.all(d_lo > 0.0) and np.all(d_lo < 1.0)
        assert np.all(d_hi > d_lo)

    def test_expected_rotation_uniform_is_zero(self):
        d = MatrixFisher(np.zeros((3, 3)))
        np.testing.assert_allclose(d.expected_rotation(), 0.0, atol=1e-12)

    def test_kl_to_uniform(self):
        # KL(p || uniform) = E_p[log p] = tr(F' E[R]) - log c >= 0,
        # zero only at F = 0.
        assert MatrixFisher(np.zeros((3, 3))).kl_to_uniform() == pytest.approx(0.0, abs=1e-12)
        rng = np.random.default_rng(4)
        for _ in range(10):
            f = rng.standard_normal((3, 3))
            d = MatrixFisher(f)
            assert d.kl_to_uniform() > 0.0
            expect = np.sum(d.f * d.expected_rotation()) - d.log_c
            assert d.kl_to_uniform() == pytest.approx(expect, rel=1e-9)

    def test_kl_grad_matches_finite_differences(self):
        # kl_to_uniform_grad is the full F-space gradient U diag(H s) V'.
        rng = RandomTree(22)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        f = r1 @ np.diag([2.0, 1.0, 0.5]) @ r2.T
        grad = MatrixFisher(f).kl_to_uniform_grad()
        h = 1e-5
        fd = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                e = np.zeros((3, 3))
                e[i, j] = h
                fd[i, j] = (
                    MatrixFisher(f + e).kl_to_uniform()
                    - MatrixFisher(f - e).kl_to_uniform()
                ) / (2 * h)
        np.testing.assert_allclose(grad, fd, rtol=2e-4, atol=1e-7)

    def test_rotated_frames_transport_moments(self):
        # For F -> R1 F R2', the mean rotates the same way.
        rng = RandomTree(21)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        base = MatrixFisher.from_diag([3.0, 2.0, 1.0])
        moved = MatrixFisher(r1 @ base.f @ r2.T)
        np.testing.assert_allclose(
            moved.expected_rotation(), r1 @ base.expected_rotation() @ r2.T, atol=1e-10
        )
        assert moved.log_c == pytest.approx(base.log_c, rel=1e-12)


class TestMLE:
    def test_round_trip_moderate_concentration(self):
        truth = MatrixFisher.from_diag([4.0, 2.0, 1.0])
        rs = sample_matrix_fisher_many(truth, 4000, RandomTree(30))
        fit = mle_fit(rs)
        assert geodesic_distance(fit.mode(), truth.mode()) < np.deg2rad(4.0)
        np.testing.assert_allclose(fit.svd.s, truth.svd.s, rtol=0.25)

    def test_rotated_mode_recovery(self):
        rng = RandomTree(31)
        r1 = haar_random_rotation(rng.child(0))
        r2 = haar_random_rotation(rng.child(1))
        truth = MatrixFisher(r1 @ np.diag([6.0, 3.0, 1.5]) @ r2.T)
        rs = sample_matrix_fisher_many(truth, 4000, RandomTree(32))
        fit = mle_fit(rs)
        assert geodesic_distance(fit.mode(), truth.mode()) < np.deg2rad(3.0)

    def test_identical_samples_hit_cap(self):
        # A degenerate sample set has no finite MLE; concentrations clamp.
        r = axis_angle_to_matrix(np.array([0.3, -0.2, 0.9]))
        fit = mle_fit(np.repeat(r[None], 8, axis=0))
        assert fit.svd.s.max() == pytest.approx(S_CAP)
        assert geodesic_distance(fit.mode(), r) < 1e-6

    def test_haar_samples_stay_diffuse(self):
        rs = haar_random_rotations(4000, RandomTree(33))
        fit = mle_fit(rs)
        assert np.abs(fit.svd.s).max() < 0.2

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            mle_fit(np.zeros((0, 3, 3)))
