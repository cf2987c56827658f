"""Loss terms with analytic gradients.

Each function returns its scalar value together with gradients for the
parameters the fitters move; composition, weighting, and bookkeeping live
in the fitting module.
"""

from __future__ import annotations

import numpy as np

from .distributions import ShapeDist
from .errors import InvalidArgumentError
from .matrix_fisher import MatrixFisher
from .so3 import axis_angle_to_matrix, check_rotation

__all__ = [
    "shape_nll",
    "pose_nll",
    "global_rot_loss",
    "reproj_2d_sample_loss",
    "shape_kl_to_prior",
]


def shape_nll(beta_gt, d: ShapeDist) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative diagonal-Gaussian log likelihood of one shape label.

    Returns (value, d/d_mu, d/d_sigma2).
    """
    beta_gt = np.asarray(beta_gt, dtype=float)
    if beta_gt.shape != (d.dim,):
        raise InvalidArgumentError(f"beta label must have shape ({d.dim},)")
    resid = beta_gt - d.mu
    z2 = resid**2 / d.sigma2
    value = 0.5 * (d.dim * np.log(2.0 * np.pi) + np.log(d.sigma2).sum() + z2.sum())
    grad_mu = -resid / d.sigma2
    grad_sigma2 = 0.5 * (1.0 / d.sigma2 - resid**2 / d.sigma2**2)
    return float(value), grad_mu, grad_sigma2


def pose_nll(r_gt, d: MatrixFisher) -> tuple[float, np.ndarray]:
    """Negative rotation log likelihood log c(F) - tr(F' R) and its
    F-gradient, the expected rotation minus the label."""
    r_gt = check_rotation(np.asarray(r_gt, dtype=float))
    value = d.log_c - float(np.sum(d.f * r_gt))
    return value, d.expected_rotation() - r_gt


def global_rot_loss(gamma_gt, gamma_hat) -> float:
    """Squared Frobenius distance of the two global rotations; in [0, 8]."""
    r_gt = axis_angle_to_matrix(np.asarray(gamma_gt, dtype=float))
    r_hat = axis_angle_to_matrix(np.asarray(gamma_hat, dtype=float))
    return float(np.sum((r_gt - r_hat) ** 2))


def reproj_2d_sample_loss(samples2d, j2d, vis) -> tuple[float, np.ndarray]:
    """Visibility-masked mean squared reprojection error over samples.

    samples2d is (K, L, 2), j2d is (L, 2), vis is a 0/1 mask of length L.
    The double sum of squared distances is divided by K * sum(vis) so the
    value is a per-sample per-visible-joint px^2 quantity. No visible
    joints is not an error: the loss is 0 with zero gradient.

    Returns (value, d/d_samples2d).
    """
    samples2d = np.asarray(samples2d, dtype=float)
    j2d = np.asarray(j2d, dtype=float)
    vis = np.asarray(vis, dtype=float)
    if samples2d.ndim != 3 or samples2d.shape[1:] != j2d.shape or vis.shape != j2d.shape[:1]:
        raise InvalidArgumentError(
            f"inconsistent shapes: samples {samples2d.shape}, targets {j2d.shape}, vis {vis.shape}"
        )
    total_vis = vis.sum()
    if total_vis == 0:
        return 0.0, np.zeros_like(samples2d)
    k = samples2d.shape[0]
    diff = (samples2d - j2d[None]) * vis[None, :, None]
    value = float(np.sum(diff**2) / (k * total_vis))
    grad = 2.0 * diff / (k * total_vis)
    return value, grad


def shape_kl_to_prior(d: ShapeDist, prior_var: float) -> tuple[float, np.ndarray, np.ndarray]:
    """KL from the shape Gaussian to the zero-mean isotropic prior.

    Returns (value, d/d_mu, d/d_sigma2).
    """
    if prior_var <= 0:
        raise InvalidArgumentError("prior variance must be positive")
    ratio = d.sigma2 / prior_var
    value = 0.5 * float(np.sum(ratio + d.mu**2 / prior_var - 1.0 - np.log(ratio)))
    grad_mu = d.mu / prior_var
    grad_sigma2 = 0.5 * (1.0 / prior_var - 1.0 / d.sigma2)
    return value, grad_mu, grad_sigma2
