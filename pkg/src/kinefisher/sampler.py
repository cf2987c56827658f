"""Differentiable rejection sampling of matrix-Fisher rotations.

The target on the quaternion sphere is a Bingham density
exp(-x'Ax) with A = diag(0, 2(s2+s3), 2(s1+s3), 2(s1+s2)); the proposal is
an angular central Gaussian x = y / |y| with y ~ N(0, Omega^{-1}),
Omega = I + (2/b) A, and the envelope constant is
M = exp((b-4)/2) (4/b)^2. An accepted x maps to a rotation through the
double cover and is rotated back into the original frame: R = U Q(x) V'.

Gradients: the accepted draw is a deterministic function of (F, eps) given
the stored standard-normal noise, so pathwise derivatives flow through
Omega, the normalization to the sphere, the double-cover map, and the
proper SVD (fixed_noise_resample). The rejection step's own dependence on
the parameters (the acceptance probability moves with F) carries no
gradient here; this pathwise convention ignores that term, a small bias
accepted by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .constants import OPTIMAL_B_RESIDUAL_TOL, SAMPLER_MAX_ITERATIONS
from .errors import InvalidArgumentError, SamplerStallError
from .matrix_fisher import MatrixFisher, bingham_coefficients
from .rng import RandomTree, as_generator
from .so3 import quaternion_to_matrix

__all__ = [
    "BinghamParams",
    "NoiseRecord",
    "optimal_b",
    "sample_bingham_quaternion",
    "sample_matrix_fisher",
    "sample_matrix_fisher_many",
    "fixed_noise_resample",
]


@dataclass(frozen=True)
class BinghamParams:
    """Proposal/envelope constants for one concentration setting.

    a_diag is the full 4-vector diagonal of A (first entry 0 when built
    from proper singular values); omega_diag = 1 + (2/b) a_diag;
    big_m = exp((b-4)/2) (4/b)^2.
    """

    a_diag: np.ndarray
    b: float
    omega_diag: np.ndarray
    big_m: float

    @classmethod
    def from_singular_values(cls, s, b: float | None = None) -> "BinghamParams":
        a = np.concatenate([[0.0], bingham_coefficients(np.asarray(s, dtype=float))])
        if b is None:
            b = optimal_b(a)
        elif b <= 0:
            raise InvalidArgumentError("b must be positive")
        omega = 1.0 + (2.0 / b) * a
        big_m = float(np.exp((b - 4.0) / 2.0) * (4.0 / b) ** 2)
        return cls(a, float(b), omega, big_m)


@dataclass(frozen=True)
class NoiseRecord:
    """The standard-normal draw behind an accepted proposal.

    aux counts rejected proposals before acceptance (diagnostics only;
    replay uses eps alone).
    """

    eps: np.ndarray
    aux: int


def optimal_b(a_diag) -> float:
    """The b solving sum_i 1/(b + 2 lambda_i) = 1 for eigenvalues of A.

    With lambda_1 = 0 the root is unique in (0, 4]; A = 0 gives b = 4
    (envelope constant 1, every proposal accepted).
    """
    lam = np.asarray(a_diag, dtype=float)
    if lam.shape != (4,) or not np.all(np.isfinite(lam)) or lam.min() < 0:
        raise InvalidArgumentError("a_diag must be a finite nonnegative 4-vector")

    def residual(b):
        return np.sum(1.0 / (b + 2.0 * lam)) - 1.0

    if residual(4.0) >= -OPTIMAL_B_RESIDUAL_TOL:
        # Only possible at lam ~ 0 where the root is exactly 4.
        return 4.0
    b = brentq(residual, 1e-9, 4.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if abs(residual(b)) > OPTIMAL_B_RESIDUAL_TOL:
        raise RuntimeError(f"optimal_b root residual {residual(b):.2e} above tolerance")
    return float(b)


def optimal_b_grad(a_diag, b: float) -> np.ndarray:
    """Implicit derivative db/dlambda_j at the root of the defining equation."""
    lam = np.asarray(a_diag, dtype=float)
    denom = np.sum(1.0 / (b + 2.0 * lam) ** 2)
    return -(2.0 / (b + 2.0 * lam) ** 2) / denom


def _acg_direction(omega_diag: np.ndarray, eps: np.ndarray) -> np.ndarray:
    # Proposal map shared by the live sampler and fixed-noise replay:
    # y = Omega^{-1/2} eps elementwise, then project to the sphere.
    y = eps / np.sqrt(omega_diag)
    return y / np.linalg.norm(y)


def sample_bingham_quaternion(p: BinghamParams, rng) -> tuple[np.ndarray, NoiseRecord]:
    """Rejection-sample x ~ exp(-x'Ax) on the 3-sphere.

    Each iteration draws eps ~ N(0, I4) and a uniform w, accepting when
    w < exp(-x'Ax) / (M (x'Omega x)^-2). Raises SamplerStallError after
    SAMPLER_MAX_ITERATIONS rejections (cannot trigger with a valid
    envelope at the optimal b; guards degenerate user-supplied b).
    """
    gen = as_generator(rng)
    a = p.a_diag
    omega = p.omega_diag
    for attempt in range(SAMPLER_MAX_ITERATIONS):
        eps = gen.standard_normal(4)
        x = _acg_direction(omega, eps)
        xsq = x * x
        target = np.exp(-float(a @ xsq))
        envelope = p.big_m / float(omega @ xsq) ** 2
        if gen.random() < target / envelope:
            return x, NoiseRecord(eps, attempt)
    raise SamplerStallError(
        f"no acceptance in {SAMPLER_MAX_ITERATIONS} proposals (b={p.b}, a={a})"
    )


def sample_matrix_fisher(d: MatrixFisher, rng, b: float | None = None) -> tuple[np.ndarray, NoiseRecord]:
    """One rotation R = U Q(x) V' with x from the Bingham sampler."""
    p = BinghamParams.from_singular_values(d.svd.s, b)
    x, rec = sample_bingham_quaternion(p, rng)
    return d.svd.u @ quaternion_to_matrix(x) @ d.svd.v.T, rec


def sample_matrix_fisher_many(d: MatrixFisher, n: int, rng, b: float | None = None) -> np.ndarray:
    """(n, 3, 3) stack of independent draws; draw i uses substream child(i)."""
    if not isinstance(rng, RandomTree):
        raise InvalidArgumentError("sample_matrix_fisher_many requires a RandomTree rng")
    p = BinghamParams.from_singular_values(d.svd.s, b)
    out = np.empty((n, 3, 3))
    for i in range(n):
        x, _ = sample_bingham_quaternion(p, rng.child(i))
        out[i] = d.svd.u @ quaternion_to_matrix(x) @ d.svd.v.T
    return out


def fixed_noise_resample(d: MatrixFisher, n: NoiseRecord) -> np.ndarray:
    """Deterministic (F, eps) -> R map through the accepted-proposal path.

    Recomputes A, the optimal b, and Omega from d's singular values, pushes
    the stored eps through the proposal map, and rotates back. With the d
    that produced n this reproduces the original sample bit-exactly; under
    perturbed d it is the differentiable surrogate the fitter backs
    gradients through.
    """
    p = BinghamParams.from_singular_values(d.svd.s)
    x = _acg_direction(p.omega_diag, n.eps)
    return d.svd.u @ quaternion_to_matrix(x) @ d.svd.v.T
