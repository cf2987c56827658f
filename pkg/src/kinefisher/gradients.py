"""Reverse-mode building blocks for the fitting objectives.

Everything here is a hand-written vector-Jacobian product; the fitter
composes them instead of relying on an autodiff framework. The chain for
one rotation sample is

    F -> proper SVD -> Bingham diagonal -> optimal b -> proposal scaling
      -> sphere projection -> quaternion double cover -> R = U Q(x) V'

with the accepted standard-normal draw held fixed, and the body chain is

    (rest vertices, rotations, gamma) -> forward kinematics -> skinning.
"""

from __future__ import annotations

import numpy as np

from .constants import SVD_GRAD_DAMPING
from .matrix_fisher import bingham_coefficients_vjp
from .sampler import BinghamParams, optimal_b_grad
from .so3 import ProperSVD, axis_angle_to_matrix_vjp, quaternion_to_matrix

__all__ = [
    "svd_vjp",
    "quaternion_to_matrix_vjp",
    "frame_resample_vjp",
    "resample_vjp",
    "mode_vjp",
    "pose_vjp",
]


def svd_vjp(svd: ProperSVD, d_u, d_s, d_v) -> np.ndarray:
    """Pull (dU, ds, dV) back to dF through the proper SVD.

    Off-diagonal inverse gaps 1/(s_j^2 - s_i^2) are Lorentzian-damped so
    exactly tied singular values (e.g. F proportional to the identity)
    yield a finite, tie-symmetric gradient instead of dividing by zero:
    the frame directions are genuinely non-identifiable at a tie, so their
    contribution fades out there while the singular-value part passes
    through unchanged.
    """
    u, s, v = svd.u, svd.s, svd.v
    gap = s[None, :] ** 2 - s[:, None] ** 2
    f = gap / (gap**2 + SVD_GRAD_DAMPING**2)
    np.fill_diagonal(f, 0.0)

    core = np.diag(np.asarray(d_s, dtype=float))
    if d_u is not None:
        c = u.T @ d_u
        core = core + (f * (c - c.T)) * s[None, :]
    if d_v is not None:
        d = v.T @ d_v
        core = core + s[:, None] * (f * (d - d.T))
    return u @ core @ v.T


def quaternion_to_matrix_vjp(x, d_r) -> np.ndarray:
    """Gradient of the (unit-input) quaternion-to-rotation polynomial map."""
    w, a, b, c = x
    jac = 2.0 * np.array(
        [
            [[0, -c, b], [c, 0, -a], [-b, a, 0]],
            [[0, b, c], [b, -2 * a, -w], [c, w, -2 * a]],
            [[-2 * b, a, w], [a, 0, c], [-w, c, -2 * b]],
            [[-2 * c, -w, a], [w, -2 * c, b], [a, b, 0]],
        ]
    )
    return np.einsum("qij,ij->q", jac, d_r)


def frame_resample_vjp(r_u, r_v, params: BinghamParams, eps, d_r):
    """(dU, ds, dV) for one fixed-noise rotation sample R = U Q(x(s, eps)) V'.

    Mirrors fixed_noise_resample: the stored eps is scaled by the proposal
    precision (which depends on the singular values through the Bingham
    diagonal and the optimal envelope parameter b) and projected to the
    sphere, then mapped through the double cover and conjugated into the
    (U, V) frame. Gradients are returned in the frame parameterization, so
    callers that optimize U, s, V directly never differentiate an SVD.
    """
    omega = params.omega_diag
    a = params.a_diag
    b = params.b
    y = eps / np.sqrt(omega)
    norm = np.linalg.norm(y)
    x = y / norm
    q_mat = quaternion_to_matrix(x)

    d_u = d_r @ r_v @ q_mat.T
    d_q = r_u.T @ d_r @ r_v
    d_v = d_r.T @ r_u @ q_mat

    d_x = quaternion_to_matrix_vjp(x, d_q)
    d_y = (d_x - x * (x @ d_x)) / norm
    d_omega = -0.5 * y * d_y / omega

    # Omega = 1 + (2/b) A with b the implicit root; both routes feed dA.
    d_b = float(d_omega @ (-2.0 * a / b**2))
    d_a = (2.0 / b) * d_omega
    d_a = d_a + d_b * optimal_b_grad(a, b)
    d_s = bingham_coefficients_vjp(d_a[1:])
    return d_u, d_s, d_v


def resample_vjp(svd: ProperSVD, params: BinghamParams, eps, d_r) -> np.ndarray:
    """dF for one fixed-noise rotation sample R = U Q(x(F, eps)) V'.

    The frame U, V comes from the proper SVD of F, so the frame gradients
    are pulled back through the decomposition as well.
    """
    d_u, d_s, d_v = frame_resample_vjp(svd.u, svd.v, params, eps, d_r)
    return svd_vjp(svd, d_u, d_s, d_v)


def mode_vjp(svd: ProperSVD, d_r) -> np.ndarray:
    """dF for the most probable rotation U V' of the decomposed F."""
    return svd_vjp(svd, d_r @ svd.v, np.zeros(3), d_r.T @ svd.u)


def pose_vjp(model, rots, gamma, rest_verts, rest_joints, world_rot, world_pos, d_verts):
    """Back-propagate a posed-vertex gradient through skinning and FK.

    Returns (d_rots, d_gamma, d_rest_verts): gradients for the relative
    rotations, the global axis-angle, and the shaped rest vertices (with
    the regressor's contribution to the rest joints already folded in, so
    the caller only chains the shape basis). A gradient with respect to
    regressed posed joints must be folded into d_verts by the caller via
    rest_joint_regressor.T beforehand.
    """
    parents = model.parents
    weights = model.skin_weights
    jn = rest_joints.shape[0]

    d_w = np.zeros((jn, 3, 3))
    d_p = np.zeros((jn, 3))
    d_rest_verts = np.zeros_like(rest_verts)
    d_rest_joints = np.zeros_like(rest_joints)

    for i in range(jn):
        active = weights[:, i] > 0
        if not np.any(active):
            continue
        g = d_verts[active] * weights[active, i, None]
        local = rest_verts[active] - rest_joints[i]
        d_w[i] = g.T @ local
        d_p[i] = g.sum(axis=0)
        back = g @ world_rot[i]
        d_rest_verts[active] += back
        d_rest_joints[i] -= back.sum(axis=0)

    d_rots = np.empty((jn - 1, 3, 3))
    for i in range(jn - 1, 0, -1):
        p = int(parents[i])
        d_rots[i - 1] = world_rot[p].T @ d_w[i]
        bone = rest_joints[i] - rest_joints[p]
        d_w[p] += d_w[i] @ rots[i - 1].T + np.outer(d_p[i], bone)
        d_p[p] += d_p[i]
        pulled = world_rot[p].T @ d_p[i]
        d_rest_joints[i] += pulled
        d_rest_joints[p] -= pulled

    d_gamma = axis_angle_to_matrix_vjp(gamma, d_w[0])
    d_rest_joints[0] += d_p[0]
    d_rest_verts += model.rest_joint_regressor.T @ d_rest_joints
    return d_rots, d_gamma, d_rest_verts
