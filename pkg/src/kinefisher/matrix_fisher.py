"""The matrix-Fisher distribution over SO(3).

Density p(R) = exp(tr(F' R)) / c(F) with respect to the Haar probability
measure, parameterized by an unconstrained 3x3 matrix F. Through the
quaternion double cover, tr(diag(s) Q(x)) = (s1+s2+s3) - x'Ax with
A = diag(0, 2(s2+s3), 2(s1+s3), 2(s1+s2)), which reduces the normalizer
(and its derivatives) to a Bingham-type integral over the 3-sphere that
the quadrature module evaluates deterministically.

The same reduction yields the first two derivative structures of log c in
the singular-value frame: the expected rotation E[R] = U diag(d) V' with

    d = (1 - 2(q3+q4), 1 - 2(q2+q4), 1 - 2(q2+q3)),

q being second moments of the Bingham weight, and the Hessian of log c in
s, which is the covariance of the quadratic forms coupled to s. Off-diagonal
entries of E[R] in the singular-value frame vanish by symmetry of the
integrand and are never computed.
"""

from __future__ import annotations

import numpy as np

from .constants import MLE_BISECTION_TOL, MLE_MOMENT_TOL, S_CAP
from .errors import ConcentrationOverflowError, InvalidArgumentError, ModeUndefinedError
from .quadrature import bingham_log_integral, bingham_reduce
from .so3 import ProperSVD, proper_svd

__all__ = [
    "MatrixFisher",
    "log_norm_const",
    "concentrations_from_s",
    "bingham_coefficients",
    "bingham_coefficients_vjp",
    "mle_fit",
    "log_pdf_many",
]

# Selector mapping the per-axis quadratic forms T_i = 2 (x_j^2 + x_k^2) to
# the Bingham second moments; also maps s to the A coefficients (times 2).
_PAIR = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])

# Bisection cap for mle_fit, a hair inside S_CAP: rebuilding F = U diag(s) V'
# and re-decomposing it may round s upward, and the result must stay under
# the overflow guard.
_S_CAP_FIT = S_CAP - 1e-6


def bingham_coefficients(s: np.ndarray) -> np.ndarray:
    """A's nonzero diagonal (a2, a3, a4) = 2 (s_j + s_k) pairings."""
    return 2.0 * (_PAIR @ s)


def bingham_coefficients_vjp(d_a: np.ndarray) -> np.ndarray:
    """Adjoint of bingham_coefficients: gradient w.r.t. s from one w.r.t.
    the nonzero diagonal (a2, a3, a4)."""
    return 2.0 * (_PAIR @ np.asarray(d_a, dtype=float))


def concentrations_from_s(s) -> np.ndarray:
    """k_i = s_j + s_k for (i,j,k) in {(1,2,3),(2,3,1),(3,1,2)}."""
    s = np.asarray(s, dtype=float)
    return _PAIR @ s


def _check_s(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (3,) or not np.all(np.isfinite(s)):
        raise InvalidArgumentError("singular values must be a finite 3-vector")
    if np.abs(s).max() > S_CAP:
        raise ConcentrationOverflowError(
            f"singular values {s} exceed the cap {S_CAP}; the normalizer is not evaluated there"
        )
    return s


def log_norm_const(s, order: int | None = None) -> float:
    """log c(s): log of E_Haar[exp(tr(diag(s) R))]. log_norm_const(0) = 0.

    Accepts any finite 3-vector with |s_i| <= S_CAP; the value is invariant
    to permutations of s combined with even sign flips, and the quadrature
    evaluates that symmetric function directly.
    """
    s = _check_s(s)
    a2, a3, a4 = bingham_coefficients(s)
    return float(s.sum() + bingham_log_integral(a2, a3, a4, order))


def _log_c_and_derivatives(s, order: int | None = None):
    """One grid pass: (log_c, d, hess) in the singular-value frame.

    d = dlog_c/ds (diagonal of E[R] in the SVD frame); hess = d2 log_c/ds ds',
    the covariance of the quadratic forms T_i = 2 (x_j^2 + x_k^2).
    """
    s = np.asarray(s, dtype=float)
    a2, a3, a4 = bingham_coefficients(s)
    mom = bingham_reduce(a2, a3, a4, order)
    log_c = float(s.sum() + mom.log_int)
    d = 1.0 - 2.0 * (_PAIR @ mom.q)
    cov = mom.p - np.outer(mom.q, mom.q)
    hess = 4.0 * (_PAIR @ cov @ _PAIR.T)
    return log_c, d, hess


class MatrixFisher:
    """Immutable matrix-Fisher distribution with cached decomposition.

    Construction runs the proper SVD and one quadrature pass, caching
    log c, the singular-frame moment diagonal, and the s-Hessian of log c
    (used by the KL gradient). ``order`` pins the quadrature order for all
    derived quantities; default per the quadrature module.
    """

    __slots__ = ("f", "svd", "log_c", "order", "_d", "_hess")

    def __init__(self, f, order: int | None = None):
        f = np.asarray(f, dtype=float)
        if f.shape != (3, 3) or not np.all(np.isfinite(f)):
            raise InvalidArgumentError("F must be a finite 3x3 matrix")
        svd = proper_svd(f)
        _check_s(svd.s)
        log_c, d, hess = _log_c_and_derivatives(svd.s, order)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "svd", svd)
        object.__setattr__(self, "log_c", log_c)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "_d", d)
        object.__setattr__(self, "_hess", hess)

    def __setattr__(self, name, value):
        raise AttributeError("MatrixFisher is immutable")

    def __repr__(self) -> str:
        return f"MatrixFisher(s={np.round(self.svd.s, 6)}, log_c={self.log_c:.6f})"

    @classmethod
    def from_diag(cls, s, order: int | None = None) -> "MatrixFisher":
        return cls(np.diag(np.asarray(s, dtype=float)), order)

    def log_pdf(self, r) -> float:
        """tr(F' R) - log c."""
        r = np.asarray(r, dtype=float)
        return float(np.sum(self.f * r) - self.log_c)

    def mode(self) -> np.ndarray:
        """U V', the most probable rotation. Undefined for F = 0."""
        s = self.svd.s
        if s[0] + s[1] <= 0.0:
            raise ModeUndefinedError("uniform distribution (F = 0) has no mode")
        return self.svd.u @ self.svd.v.T

    def concentrations(self) -> np.ndarray:
        """Per-principal-axis concentrations k_i = s_j + s_k."""
        return concentrations_from_s(self.svd.s)

    def expected_rotation(self) -> np.ndarray:
        """E[R] = U diag(d) V'; equals the gradient of log c w.r.t. F."""
        return (self.svd.u * self._d) @ self.svd.v.T

    def kl_to_uniform(self) -> float:
        """KL(this || Haar-uniform) = tr(F' E[R]) - log c >= 0."""
        val = float(self.svd.s @ self._d - self.log_c)
        return max(val, 0.0)

    def kl_to_uniform_grad(self) -> np.ndarray:
        """Gradient of kl_to_uniform w.r.t. F: U diag(H s) V'."""
        g = self._hess @ self.svd.s
        return (self.svd.u * g) @ self.svd.v.T


def log_pdf_many(rs, d: MatrixFisher) -> np.ndarray:
    """Vectorized log_pdf over an (n, 3, 3) stack of rotations."""
    rs = np.asarray(rs, dtype=float)
    return np.einsum("nij,ij->n", rs, d.f) - d.log_c


def _moment_diag(s, order: int | None) -> np.ndarray:
    a2, a3, a4 = bingham_coefficients(np.asarray(s, dtype=float))
    mom = bingham_reduce(a2, a3, a4, order)
    return 1.0 - 2.0 * (_PAIR @ mom.q)


def mle_fit(samples, order: int | None = None) -> MatrixFisher:
    """Moment-matching maximum likelihood fit from rotation samples.

    Proper-SVD the sample mean matrix, then match the moment diagonal d(s)
    to the mean's singular values by cyclic per-coordinate bisection on
    [0, S_CAP] (the moment is monotone in each s_i). Targets outside the
    attainable range clamp to the boundary: identical samples drive every
    s_i to S_CAP, and a mean with negative third singular value (possible
    for near-uniform data) clamps s_3 at 0.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[1:] != (3, 3) or samples.shape[0] < 2:
        raise InvalidArgumentError("mle_fit needs at least 2 rotation samples, shaped (n, 3, 3)")
    mean = samples.mean(axis=0)
    frame = proper_svd(mean)
    target = frame.s

    s = np.zeros(3)
    for _ in range(100):
        previous = s.copy()
        for i in range(3):
            s[i] = _bisect_coordinate(s, i, target[i], order)
        d = _moment_diag(s, order)
        # Converged when every non-clamped coordinate matches its target.
        free = ~((s >= _S_CAP_FIT - 1e-12) | (s <= 1e-12))
        if np.abs(d - target)[free].max(initial=0.0) <= MLE_MOMENT_TOL and (
            np.abs(s - previous).max() <= MLE_BISECTION_TOL
        ):
            break

    f = (frame.u * s) @ frame.v.T
    return MatrixFisher(f, order)


def _bisect_coordinate(s, i, target, order) -> float:
    lo, hi = 0.0, _S_CAP_FIT
    trial = s.copy()
    trial[i] = lo
    if _moment_diag(trial, order)[i] >= target:
        return lo
    trial[i] = hi
    if _moment_diag(trial, order)[i] <= target:
        return hi
    while hi - lo > MLE_BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        trial[i] = mid
        if _moment_diag(trial, order)[i] < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
