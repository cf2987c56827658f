"""Rotation representations, conversions, and the proper SVD.

Conventions:
- Rotation matrices are 3x3 float64 arrays acting on column vectors.
- Quaternions use [w, x, y, z] order (scalar first); x and -x encode the
  same rotation.
- Axis-angle vectors encode a right-handed rotation of ``norm(v)`` radians
  about ``v``.

The proper SVD makes both orthogonal factors rotations by moving any
reflection into the sign of the smallest singular value, so the returned
values satisfy s1 >= s2 >= |s3| with s3 possibly negative. Degenerate
inputs (coincident or vanishing singular values) are completed by a fixed
deterministic rule documented on :func:`proper_svd`, chosen by this
library; it is one of several equally valid conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import (
    QUATERNION_NORM_TOL,
    ROTATION_TOL,
    SVD_TIE_REL_TOL,
)
from .errors import InvalidArgumentError
from .rng import as_generator

__all__ = [
    "ProperSVD",
    "proper_svd",
    "axis_angle_to_matrix",
    "matrix_to_axis_angle",
    "axis_angle_to_matrix_vjp",
    "quaternion_to_matrix",
    "matrix_to_quaternion",
    "geodesic_distance",
    "haar_random_rotation",
    "haar_random_rotations",
    "check_rotation",
]


def check_rotation(m, tol: float = ROTATION_TOL, name: str = "rotation"):
    """Validate that ``m`` is a rotation matrix; return it as float64."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise InvalidArgumentError(f"{name} must be a finite 3x3 matrix")
    if np.abs(m.T @ m - np.eye(3)).max() > tol or abs(np.linalg.det(m) - 1.0) > tol:
        raise InvalidArgumentError(f"{name} is not orthonormal with det +1 (tol {tol})")
    return m


@dataclass(frozen=True)
class ProperSVD:
    """Decomposition f = u @ diag(s) @ v.T with u, v in SO(3).

    s1 >= s2 >= |s3|; s3 carries the sign of det(f).
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _canonical_sign_flip(u: np.ndarray, v: np.ndarray, col: int) -> None:
    # Flip the (u, v) column pair so v's largest-magnitude entry is positive
    # (lowest index on ties). Keyed on v so the choice is invariant under
    # left-multiplication of the decomposed matrix by a rotation.
    j = int(np.argmax(np.abs(v[:, col])))
    if v[j, col] < 0:
        v[:, col] = -v[:, col]
        u[:, col] = -u[:, col]


def _pivoted_completion(fixed: np.ndarray, count: int) -> np.ndarray:
    # Orthonormal columns spanning part of the complement of ``fixed``,
    # chosen by column-pivoted Gram-Schmidt over the canonical basis.
    cols = []
    basis = [fixed[:, i] for i in range(fixed.shape[1])]
    for _ in range(count):
        best, best_norm = None, -1.0
        for j in range(3):
            cand = np.eye(3)[:, j]
            for b in basis:
                cand = cand - (b @ cand) * b
            n = np.linalg.norm(cand)
            if n > best_norm + 1e-15:
                best, best_norm = cand / n if n > 0 else None, n
        basis.append(best)
        cols.append(best)
    return np.column_stack(cols) if cols else np.zeros((3, 0))


def _pivoted_span_basis(span: np.ndarray) -> np.ndarray:
    # Deterministic orthonormal basis of the column span of ``span``:
    # project canonical basis vectors into the span, pick by largest norm.
    p = span @ span.T
    cols = []
    for _ in range(span.shape[1]):
        best, best_norm = None, -1.0
        for j in range(3):
            cand = p @ np.eye(3)[:, j]
            for c in cols:
                cand = cand - (c @ cand) * c
            n = np.linalg.norm(cand)
            if n > best_norm + 1e-15:
                best, best_norm = cand / n if n > 0 else None, n
        cols.append(best)
    return np.column_stack(cols)


def proper_svd(f) -> ProperSVD:
    """Proper singular value decomposition of a 3x3 matrix.

    Sign corrections force both orthogonal factors into SO(3); the smallest
    singular value absorbs det(f)'s sign. Deterministic completion rules for
    degenerate inputs:

    - coincident nonzero singular values: the right-singular subspace is
      re-based by column-pivoted projection of the canonical basis, and the
      left columns re-derived as f @ v / s;
    - exactly one zero singular value: third columns completed by cross
      products (right-handed);
    - rank <= 1: missing columns completed by column-pivoted
      orthogonalization against the canonical basis; f = 0 returns
      (I, (0,0,0), I).

    Column signs are canonicalized from v (largest-magnitude entry positive),
    which makes the decomposition equivariant under left-multiplication by a
    rotation for full-rank inputs.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (3, 3) or not np.all(np.isfinite(f)):
        raise InvalidArgumentError("proper_svd expects a finite 3x3 matrix")

    u, s, vt = np.linalg.svd(f)
    v = vt.T.copy()
    u = u.copy()
    s = s.copy()

    scale = max(s[0], 1.0)
    tie_tol = SVD_TIE_REL_TOL * scale
    zero = s <= tie_tol
    n_zero = int(zero.sum())

    if n_zero == 3:
        return ProperSVD(np.eye(3), np.zeros(3), np.eye(3))

    # Group coincident nonzero singular values and re-base each group from
    # its right-singular span so the result does not depend on LAPACK's
    # arbitrary basis choice inside the group.
    nz = 3 - n_zero
    groups, start = [], 0
    for i in range(1, nz + 1):
        if i == nz or s[i - 1] - s[i] > tie_tol:
            groups.append(list(range(start, i)))
            start = i
    for g in groups:
        if len(g) > 1:
            vg = _pivoted_span_basis(v[:, g])
            v[:, g] = vg
            u[:, g] = (f @ vg) / s[g]

    for i in range(nz):
        _canonical_sign_flip(u, v, i)

    if n_zero == 1:
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
        v[:, 2] = np.cross(v[:, 0], v[:, 1])
    elif n_zero == 2:
        u[:, 1:] = _pivoted_completion(u[:, :1], 2)
        v[:, 1:] = _pivoted_completion(v[:, :1], 2)

    # Proper-SVD sign correction: push any reflection into s3.
    du = np.linalg.det(u)
    dv = np.linalg.det(v)
    du = 1.0 if du > 0 else -1.0
    dv = 1.0 if dv > 0 else -1.0
    u[:, 2] *= du
    v[:, 2] *= dv
    s[2] *= du * dv
    return ProperSVD(u, s, v)


def axis_angle_to_matrix(gamma) -> np.ndarray:
    """Rodrigues formula. axis_angle_to_matrix(0) = I."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (3,) or not np.all(np.isfinite(gamma)):
        raise InvalidArgumentError("axis-angle must be a finite 3-vector")
    theta = np.linalg.norm(gamma)
    k = _hat(gamma)
    if theta < 1e-8:
        # Second-order Taylor expansion; exact at gamma = 0.
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (np.sin(theta) / theta) * k + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)


def matrix_to_axis_angle(r) -> np.ndarray:
    """Inverse Rodrigues map with angle in [0, pi]."""
    r = np.asarray(r, dtype=float)
    w, x, y, z = matrix_to_quaternion(r)
    n = np.sqrt(x * x + y * y + z * z)
    if n < 1e-12:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(n, w)
    return (angle / n) * np.array([x, y, z])


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def axis_angle_to_matrix_vjp(gamma, grad_r: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. R(gamma) back to gamma.

    Uses dR/dgamma_i = hat(J_l(gamma) e_i) @ R where J_l is the left
    Jacobian of the exponential map; at gamma = 0 this reduces to
    dR/dgamma_i = hat(e_i).
    """
    gamma = np.asarray(gamma, dtype=float)
    r = axis_angle_to_matrix(gamma)
    theta = np.linalg.norm(gamma)
    k = _hat(gamma)
    if theta < 1e-8:
        jl = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
        jl = np.eye(3) + a * k + b * (k @ k)
    grad_r = np.asarray(grad_r, dtype=float)
    m = grad_r @ r.T
    # trace(grad_r.T @ hat(w) @ r) = sum(hat(w) * (grad_r @ r.T)) = w . vee(antisym part)
    w = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    return jl.T @ w


def quaternion_to_matrix(x) -> np.ndarray:
    """Standard double-cover map; quaternion_to_matrix(x) == quaternion_to_matrix(-x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (4,) or not np.all(np.isfinite(x)):
        raise InvalidArgumentError("quaternion must be a finite 4-vector")
    n = np.linalg.norm(x)
    if n < QUATERNION_NORM_TOL:
        raise InvalidArgumentError("zero quaternion has no rotation")
    w, i, j, k = x / n
    return np.array(
        [
            [1 - 2 * (j * j + k * k), 2 * (i * j - k * w), 2 * (i * k + j * w)],
            [2 * (i * j + k * w), 1 - 2 * (i * i + k * k), 2 * (j * k - i * w)],
            [2 * (i * k - j * w), 2 * (j * k + i * w), 1 - 2 * (i * i + j * j)],
        ]
    )


def matrix_to_quaternion(r) -> np.ndarray:
    """Rotation matrix to unit quaternion, canonical sign.

    Sign convention: nonnegative w; if w == 0, the first nonzero of
    (x, y, z) is positive.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise InvalidArgumentError("expected a finite 3x3 rotation matrix")
    # Shepperd's method: branch on the largest diagonal combination.
    t = np.trace(r)
    choices = [t, r[0, 0], r[1, 1], r[2, 2]]
    c = int(np.argmax(choices))
    if c == 0:
        s = np.sqrt(1.0 + t) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif c == 1:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif c == 2:
        s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    elif q[0] == 0:
        for comp in q[1:]:
            if comp != 0:
                if comp < 0:
                    q = -q
                break
    return q


def geodesic_distance(r1, r2) -> float:
    """Rotation angle of r1.T @ r2, in [0, pi]."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    cos = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def haar_random_rotation(rng) -> np.ndarray:
    """One rotation distributed uniformly under Haar measure."""
    gen = as_generator(rng)
    q = gen.standard_normal(4)
    while np.linalg.norm(q) < 1e-6:  # astronomically rare
        q = gen.standard_normal(4)
    return quaternion_to_matrix(q)


def haar_random_rotations(n: int, rng) -> np.ndarray:
    """(n, 3, 3) array of Haar-uniform rotations, drawn vectorized."""
    gen = as_generator(rng)
    q = gen.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, i, j, k = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((n, 3, 3))
    out[:, 0, 0] = 1 - 2 * (j * j + k * k)
    out[:, 0, 1] = 2 * (i * j - k * w)
    out[:, 0, 2] = 2 * (i * k + j * w)
    out[:, 1, 0] = 2 * (i * j + k * w)
    out[:, 1, 1] = 1 - 2 * (i * i + k * k)
    out[:, 1, 2] = 2 * (j * k - i * w)
    out[:, 2, 0] = 2 * (i * k - j * w)
    out[:, 2, 1] = 2 * (j * k + i * w)
    out[:, 2, 2] = 1 - 2 * (i * i + j * j)
    return out
