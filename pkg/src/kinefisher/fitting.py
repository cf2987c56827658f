"""Per-instance gradient-descent fitters.

Two objectives share one optimizer:

- fit_to_labels: exact negative log likelihood of rotation/shape labels,
  minimized over the per-joint concentration matrices and the shape
  Gaussian. No sampling is involved; gradients are analytic.
- fit_to_observation: visibility-masked squared 2D reprojection error of
  sampled bodies plus a KL regularizer toward the uninformative prior,
  minimized over concentration matrices, shape Gaussian, global rotation,
  and camera.

The observation objective is a sample-average approximation: all base
noise (per-joint 4-vector draws and shape draws, K of each) is drawn once
from the config seed and held fixed for the whole fit. That makes each
stage's objective a single deterministic function, so backtracking line
search gives a monotonically non-increasing accepted-step trace within
every stage, and reruns are bit-reproducible. Hierarchical fits bootstrap
by descending the deterministic mode-body reprojection first (root to
leaf), because near-uniform sample clouds are nearly rotation-invariant
and give mode placement no usable gradient; the final polish stage then
descends the sampled objective, which calibrates concentrations around
the placed modes. The trace re-baselines where the branch switches.
Gradients flow through the fixed-noise sample map (see gradients).

During optimization each joint's concentration matrix is carried in
factored form F = R(u) diag(s) R(v)' with axis-angle frames u, v and
nonnegative s. The factored sample map R(u) Q(x(s, eps)) R(v)' is smooth
in the parameters everywhere, whereas differentiating through a canonical
SVD of a raw F is not: any deterministic sign/ordering convention for the
singular frames has jump surfaces, and a fixed-noise objective tears at
them (descent paths stall where a tear abuts a within-branch minimum).
The factored form is exported as a plain F only after the fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, Camera, Scene, forward_kinematics, shaped_rest, skin_vertices
from .constants import MIN_VISIBLE_JOINTS, S_CAP
from .distributions import BodyDistribution, ShapeDist
from .errors import (
    InsufficientObservationError,
    InvalidArgumentError,
    OptimizationFailureError,
)
from .gradients import frame_resample_vjp, pose_vjp
from .losses import reproj_2d_sample_loss, shape_kl_to_prior
from .matrix_fisher import MatrixFisher, _log_c_and_derivatives
from .rng import RandomTree
from .sampler import BinghamParams, _acg_direction
from .so3 import (
    axis_angle_to_matrix,
    axis_angle_to_matrix_vjp,
    matrix_to_axis_angle,
    proper_svd,
    quaternion_to_matrix,
)

__all__ = [
    "FitConfig",
    "LossReport",
    "TERM_NAMES",
    "fit_to_labels",
    "fit_to_observation",
]

TERM_NAMES = ("shape_nll", "pose_nll", "global", "reproj_2d", "kl_reg")

# Fixed diagonal preconditioner and per-block direction caps: the blocks
# live on very different scales (pixels^2 per radian vs per concentration
# unit), and capping the preconditioned direction keeps one block from
# starving the line search. Positive per-block scalings preserve the
# descent property. u/s/v rows are capped per joint.
_PRECOND = {
    "u": 0.01,
    # Concentrations live on a scale of hundreds while the other blocks
    # live on radians or meters; without the larger scaling the s block
    # inches along under the shared line-search step and never reaches
    # its optimum within the budget.
    "s": 20.0,
    "v": 0.01,
    "f": 1.0,
    "mu": 0.3,
    "logvar": 0.3,
    "gamma": 0.03,
    "camera": 0.003,
}
_DIRECTION_CAP = {
    "u": 0.3,
    "s": 20.0,
    "v": 0.3,
    "f": 1.0,
    "mu": 1.0,
    "logvar": 1.0,
    "gamma": 0.2,
    "camera": 0.2,
}
_ROW_BLOCKS = ("u", "s", "v", "f")

_LOGVAR_RANGE = (np.log(1e-8), np.log(1e4))
_CAM_LOG_RANGE = (np.log(1e-6), np.log(1e6))
_S_CLIP = S_CAP * (1.0 - 1e-12)
# Concentration ceiling during fits, a shade under S_CAP so rebuilding
# F = U diag(s) V' always stays evaluable. The ceiling matters for the
# per-vertex spread a fit can reach: angular spread shrinks like
# 1/sqrt(s), so a low ceiling leaves a spread floor under every joint no
# matter how well the data pins it.
_S_FIT_MAX = 240.0
# Keep fitted concentrations a hair above zero so every fitted joint still has
# a well-defined mode; 1e-6 is uniform to within float noise.
_S_FIT_MIN = 1e-6
_ARMIJO_C = 1e-4
# Closed-form camera/shape block refits run every this many accepted steps.
_RESOLVE_INTERVAL = 10


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings shared by both fitters.

    steps is the total step budget; step_size seeds the adaptive line
    search (growing by step_growth per accepted step up to step_max,
    shrinking by step_shrink per rejected trial). mc_samples is the
    per-step Monte-Carlo sample count K of the reprojection loss,
    kl_weight its regularizer weight. mode selects the independent or the
    hierarchical (breadth-first staged) schedule; polish appends a final
    all-parameters pass of polish_fraction * steps after the stages.
    sample_loss = False replaces the sampled reprojection term with the
    reprojection of the single mode body. quadrature_order trades accuracy
    for speed inside the fit; final distributions are rebuilt at the
    default order.
    """

    steps: int = 500
    step_size: float = 0.02
    step_growth: float = 1.5
    step_shrink: float = 0.5
    step_max: float = 1e7
    max_backtracks: int = 30
    mc_samples: int = 8
    kl_weight: float = 0.01
    shape_prior_weight: float = 1.0
    seed: int = 0
    mode: str = "independent"
    sample_loss: bool = True
    polish: bool = True
    polish_fraction: float = 0.4
    # Order 64 keeps the normalizer accurate (~1e-7 in log) all the way
    # up to the _S_FIT_MAX concentration ceiling; order 32 degrades to
    # ~1e-2 there.
    quadrature_order: int = 64
    prior_var: float = 1.5625  # matches the scene generator's shape std 1.25

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgumentError("steps must be at least 1")
        if self.mc_samples < 1:
            raise InvalidArgumentError("mc_samples must be at least 1")
        if self.kl_weight < 0:
            raise InvalidArgumentError("kl_weight must be nonnegative")
        if self.mode not in ("independent", "hierarchical"):
            raise InvalidArgumentError("mode must be 'independent' or 'hierarchical'")
        if not (0.0 < self.polish_fraction < 1.0):
            raise InvalidArgumentError("polish_fraction must be in (0, 1)")
        if self.step_size <= 0 or self.step_shrink <= 0 or self.step_shrink >= 1:
            raise InvalidArgumentError("invalid line-search constants")


@dataclass(frozen=True)
class LossReport:
    """One objective evaluation: term values, their weights, and the
    gradient norm. total is always the weighted sum of terms."""

    total: float
    terms: dict
    weights: dict
    grad_norm: float
    step: int = 0
    accepted: bool = True

    def __post_init__(self):
        recon = _weighted_total(self.terms, self.weights)
        if np.isfinite(self.total) and abs(recon - self.total) > 1e-9:
            raise InvalidArgumentError("LossReport total does not match its terms")


def _weighted_total(terms: dict, weights: dict) -> float:
    return float(sum(weights[k] * terms[k] for k in TERM_NAMES))


def _grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g**2)) for g in grads.values())))


def _wrap_axis_angles(block: np.ndarray) -> np.ndarray:
    """Shift rotation-vector magnitudes back into [0, 2pi).

    Subtracting full turns along the axis leaves every rotation matrix
    unchanged, so the objective value is identical; this only keeps the
    coordinates small.
    """
    norms = np.linalg.norm(block, axis=1)
    big = norms >= 2.0 * np.pi
    if not np.any(big):
        return block
    out = block.copy()
    turns = np.floor(norms[big] / (2.0 * np.pi))
    out[big] *= ((norms[big] - 2.0 * np.pi * turns) / norms[big])[:, None]
    return out


def _project_params(params: dict) -> dict:
    """Clamp parameters to their admissible ranges after a trial step."""
    out = dict(params)
    if "s" in out:
        out["s"] = np.clip(out["s"], _S_FIT_MIN, _S_FIT_MAX)
    for key in ("u", "v"):
        if key in out:
            out[key] = _wrap_axis_angles(out[key])
    if "f" in out:
        f = out["f"]
        clipped = None
        for i in range(f.shape[0]):
            # Frobenius norm bounds the top singular value, so most steps
            # skip the decomposition entirely.
            if np.linalg.norm(f[i]) <= _S_CLIP:
                continue
            svd = proper_svd(f[i])
            if np.abs(svd.s).max() <= _S_CLIP:
                continue
            if clipped is None:
                clipped = f.copy()
            s = np.clip(svd.s, -_S_CLIP, _S_CLIP)
            clipped[i] = (svd.u * s) @ svd.v.T
        if clipped is not None:
            out["f"] = clipped
    if "logvar" in out:
        out["logvar"] = np.clip(out["logvar"], *_LOGVAR_RANGE)
    if "camera" in out:
        cam = out["camera"].copy()
        cam[0] = np.clip(cam[0], *_CAM_LOG_RANGE)
        out["camera"] = cam
    return out


class _ObservationObjective:
    """Fixed-noise reprojection + KL objective over one scene."""

    def __init__(self, model: BodyModel, scene: Scene, cfg: FitConfig):
        self.model = model
        self.cfg = cfg
        self.j2d = np.asarray(scene.j2d, dtype=float)
        self.vis = np.asarray(scene.vis, dtype=float)
        self.weights = {
            "shape_nll": cfg.shape_prior_weight,
            "pose_nll": 0.0,
            "global": 0.0,
            "reproj_2d": 1.0,
            "kl_reg": cfg.kl_weight,
        }
        jn1 = model.num_joints - 1
        if cfg.sample_loss:
            tree = RandomTree(cfg.seed).child("fit-noise")
            k = cfg.mc_samples
            self.rot_eps = np.empty((k, jn1, 4))
            self.shape_eps = np.empty((k, model.num_shape_params))
            for m in range(k):
                sub = tree.child(m)
                for i in range(jn1):
                    self.rot_eps[m, i] = sub.child(i + 1).generator().standard_normal(4)
                self.shape_eps[m] = sub.child("shape").generator().standard_normal(
                    model.num_shape_params
                )
            # The axial quaternion-noise coordinate is pinned to 1: the fixed
            # draws parameterize transverse deviation from the mode only, so
            # every sample contracts onto the mode as concentration grows.
            # Raw 4-vector noise would not — a draw whose axial component
            # happens to be near zero stays a near-degenerate direction at any
            # concentration, leaving the fixed cloud a spread floor that no
            # amount of tightening removes (the live rejection sampler simply
            # rejects such proposals).
            self.rot_eps[..., 0] = 1.0
            # Antithetic pairing: conjugating the quaternion noise mirrors each
            # rotation about the frame mode, and negating the shape noise mirrors
            # each body about the mean.  The fixed sample cloud is then centered
            # on the mode exactly, so minimizing the sampled reprojection cannot
            # drag the mode away from the best pose to chase a lopsided draw.
            pairs = k // 2
            self.rot_eps[pairs : 2 * pairs] = self.rot_eps[:pairs] * np.array(
                [1.0, -1.0, -1.0, -1.0]
            )
            self.shape_eps[pairs : 2 * pairs] = -self.shape_eps[:pairs]

    def evaluate(self, params: dict, sampled: bool | None = None) -> tuple[dict, dict]:
        model, cfg = self.model, self.cfg
        if sampled is None:
            sampled = cfg.sample_loss
        u_aa = params["u"]
        s_all = params["s"]
        v_aa = params["v"]
        mu = params["mu"]
        logvar = params["logvar"]
        gamma = params["gamma"]
        cam = params["camera"]
        sigma2 = np.exp(logvar)
        sigma = np.exp(0.5 * logvar)
        cam_s = float(np.exp(cam[0]))
        jn1 = u_aa.shape[0]

        r_u = np.stack([axis_angle_to_matrix(u_aa[i]) for i in range(jn1)])
        r_v = np.stack([axis_angle_to_matrix(v_aa[i]) for i in range(jn1)])
        stats = [_log_c_and_derivatives(s_all[i], cfg.quadrature_order) for i in range(jn1)]

        shape_dist = ShapeDist(mu, sigma2)
        shape_val, kl_mu, kl_sig2 = shape_kl_to_prior(shape_dist, cfg.prior_var)
        kl_val = 0.0
        d_u = np.zeros_like(u_aa)
        d_s = np.zeros_like(s_all)
        d_v = np.zeros_like(v_aa)
        for i, (log_c, diag, hess) in enumerate(stats):
            # KL to the uniform distribution depends on s only: s.d - log c.
            kl_val += float(s_all[i] @ diag - log_c)
            d_s[i] = cfg.kl_weight * (hess @ s_all[i])
        d_mu = cfg.shape_prior_weight * kl_mu
        d_logvar = cfg.shape_prior_weight * kl_sig2 * sigma2
        d_gamma = np.zeros(3)
        d_cam = np.zeros(3)

        if sampled:
            k = cfg.mc_samples
            bparams = [BinghamParams.from_singular_values(s_all[i]) for i in range(jn1)]
            betas = mu + sigma * self.shape_eps  # (k, B)
            rots_all = np.empty((k, jn1, 3, 3))
            cache = []
            projs = np.empty((k, model.num_joints, 2))
            for m in range(k):
                for i in range(jn1):
                    x = _acg_direction(bparams[i].omega_diag, self.rot_eps[m, i])
                    rots_all[m, i] = r_u[i] @ quaternion_to_matrix(x) @ r_v[i].T
                rest_verts, rest_joints = shaped_rest(model, betas[m])
                world_rot, world_pos = forward_kinematics(
                    model.parents, rest_joints, rots_all[m], gamma
                )
                verts = skin_vertices(
                    model.skin_weights, rest_verts, rest_joints, world_rot, world_pos
                )
                joints3d = model.rest_joint_regressor @ verts
                cache.append((rest_verts, rest_joints, world_rot, world_pos, joints3d))
                projs[m] = cam_s * joints3d[:, :2] + cam[1:]
            self._last_xy = np.stack([c[4][:, :2] for c in cache])
            reproj_val, d_proj = reproj_2d_sample_loss(projs, self.j2d, self.vis)
            for m in range(k):
                rest_verts, rest_joints, world_rot, world_pos, joints3d = cache[m]
                d_j3d = np.zeros((model.num_joints, 3))
                d_j3d[:, :2] = cam_s * d_proj[m]
                d_cam[0] += cam_s * float(np.sum(d_proj[m] * joints3d[:, :2]))
                d_cam[1:] += d_proj[m].sum(axis=0)
                d_verts = model.rest_joint_regressor.T @ d_j3d
                d_rots, d_gam, d_rest = pose_vjp(
                    model, rots_all[m], gamma, rest_verts, rest_joints, world_rot, world_pos, d_verts
                )
                d_beta = np.einsum("vcb,vc->b", model.shape_basis, d_rest)
                d_mu += d_beta
                d_logvar += d_beta * (0.5 * sigma * self.shape_eps[m])
                d_gamma += d_gam
                for i in range(jn1):
                    du_m, ds_m, dv_m = frame_resample_vjp(
                        r_u[i], r_v[i], bparams[i], self.rot_eps[m, i], d_rots[i]
                    )
                    d_u[i] += axis_angle_to_matrix_vjp(u_aa[i], du_m)
                    d_s[i] += ds_m
                    d_v[i] += axis_angle_to_matrix_vjp(v_aa[i], dv_m)
        else:
            # Mode-body reprojection: R(u) R(v)' per joint, beta at the mean.
            rots = np.einsum("nij,nkj->nik", r_u, r_v)
            rest_verts, rest_joints = shaped_rest(model, mu)
            world_rot, world_pos = forward_kinematics(model.parents, rest_joints, rots, gamma)
            verts = skin_vertices(
                model.skin_weights, rest_verts, rest_joints, world_rot, world_pos
            )
            joints3d = model.rest_joint_regressor @ verts
            proj = cam_s * joints3d[:, :2] + cam[1:]
            self._last_xy = joints3d[None, :, :2].copy()
            reproj_val, d_proj = reproj_2d_sample_loss(proj[None], self.j2d, self.vis)
            d_j3d = np.zeros((model.num_joints, 3))
            d_j3d[:, :2] = cam_s * d_proj[0]
            d_cam[0] += cam_s * float(np.sum(d_proj[0] * joints3d[:, :2]))
            d_cam[1:] += d_proj[0].sum(axis=0)
            d_verts = model.rest_joint_regressor.T @ d_j3d
            d_rots, d_gam, d_rest = pose_vjp(
                model, rots, gamma, rest_verts, rest_joints, world_rot, world_pos, d_verts
            )
            d_mu += np.einsum("vcb,vc->b", model.shape_basis, d_rest)
            d_gamma += d_gam
            for i in range(jn1):
                d_u[i] += axis_angle_to_matrix_vjp(u_aa[i], d_rots[i] @ r_v[i])
                d_v[i] += axis_angle_to_matrix_vjp(v_aa[i], d_rots[i].T @ r_u[i])

        terms = {
            "shape_nll": float(shape_val),
            "pose_nll": 0.0,
            "global": 0.0,
            "reproj_2d": reproj_val,
            "kl_reg": kl_val,
        }
        grads = {
            "u": d_u,
            "s": d_s,
            "v": d_v,
            "mu": d_mu,
            "logvar": d_logvar,
            "gamma": d_gamma,
            "camera": d_cam,
        }
        return terms, grads

    def solve_camera(self) -> np.ndarray | None:
        """Closed-form weak-perspective refit to the last evaluated clouds.

        The visible reprojection is an ordinary least-squares problem in
        (s, tx, ty) alone, so the camera block can be minimized exactly.
        Used as a block-descent move: without it, gradient descent crawls
        along the scale/shape trough where a larger body under a smaller
        camera projects to the same pixels.
        """
        xy = getattr(self, "_last_xy", None)
        if xy is None:
            return None
        vis = self.vis.astype(bool)
        if int(vis.sum()) < 2:
            return None
        x = xy[:, vis, :].reshape(-1, 2)
        y = np.broadcast_to(
            self.j2d[vis], (xy.shape[0], int(vis.sum()), 2)
        ).reshape(-1, 2)
        xc = x - x.mean(axis=0)
        denom = float(np.sum(xc * xc))
        if denom <= 1e-12:
            return None
        s = float(np.sum(xc * (y - y.mean(axis=0))) / denom)
        if s <= 1e-3:
            return None
        t = y.mean(axis=0) - s * x.mean(axis=0)
        return np.array([np.log(s), t[0], t[1]])

    def solve_shape(self, params: dict) -> np.ndarray | None:
        """Closed-form prior-regularized refit of the shape mean.

        With the mode rotations, global rotation, and camera held fixed,
        the regressed 3D joints are exactly linear in the shape mean, so
        the visible reprojection plus the shape prior form a quadratic
        with an explicit minimizer. Plain gradient steps crawl along the
        ridge that couples shape directions with overlapping projected
        effect (a combination the data pins, times a combination it does
        not); this jump resolves the pinned combination at once and
        leaves the unobserved remainder at the value the prior prefers.
        """
        model, cfg = self.model, self.cfg
        vis = self.vis.astype(bool)
        n_vis = int(vis.sum())
        if n_vis == 0:
            return None
        u_aa, v_aa = params["u"], params["v"]
        gamma, cam = params["gamma"], params["camera"]
        mu = params["mu"]
        cam_s = float(np.exp(cam[0]))
        jn1 = u_aa.shape[0]
        rots = np.stack(
            [
                axis_angle_to_matrix(u_aa[i]) @ axis_angle_to_matrix(v_aa[i]).T
                for i in range(jn1)
            ]
        )

        def joints3d_at(beta: np.ndarray) -> np.ndarray:
            rest_verts, rest_joints = shaped_rest(model, beta)
            world_rot, world_pos = forward_kinematics(
                model.parents, rest_joints, rots, gamma
            )
            verts = skin_vertices(
                model.skin_weights, rest_verts, rest_joints, world_rot, world_pos
            )
            return model.rest_joint_regressor @ verts

        base = joints3d_at(mu)
        dim = mu.shape[0]
        eye = np.eye(dim)
        cols = np.empty((dim, 2 * n_vis))
        for b in range(dim):
            cols[b] = (joints3d_at(mu + eye[b]) - base)[vis, :2].ravel()
        design = cam_s * cols.T  # (2 n_vis, dim)
        resid = (self.j2d[vis] - (cam_s * base[vis, :2] + cam[1:])).ravel()
        reg = cfg.shape_prior_weight / cfg.prior_var
        lhs = (2.0 / n_vis) * (design.T @ design) + reg * eye
        rhs = (2.0 / n_vis) * (design.T @ resid) - reg * mu
        try:
            delta = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(delta)):
            return None
        return mu + delta


class _LabelObjective:
    """Exact joint NLL of a label set, reduced to sufficient statistics."""

    def __init__(self, rot_mean: np.ndarray, beta_mean: np.ndarray, beta_sqmean: np.ndarray, cfg: FitConfig):
        self.rot_mean = rot_mean  # (J-1, 3, 3) mean label rotation per joint
        self.beta_mean = beta_mean
        self.beta_sqmean = beta_sqmean
        self.cfg = cfg
        self.weights = {
            "shape_nll": 1.0,
            "pose_nll": 1.0,
            "global": 0.0,
            "reproj_2d": 0.0,
            "kl_reg": 0.0,
        }

    def evaluate(self, params: dict, sampled: bool | None = None) -> tuple[dict, dict]:
        f = params["f"]
        mu = params["mu"]
        logvar = params["logvar"]
        sigma2 = np.exp(logvar)
        dim = mu.shape[0]

        pose_val = 0.0
        d_f = np.empty_like(f)
        for i in range(f.shape[0]):
            mf = MatrixFisher(f[i], order=self.cfg.quadrature_order)
            pose_val += mf.log_c - float(np.sum(f[i] * self.rot_mean[i]))
            d_f[i] = mf.expected_rotation() - self.rot_mean[i]

        # Mean over labels of (beta - mu)^2, from the first two moments.
        msq = self.beta_sqmean - 2.0 * mu * self.beta_mean + mu**2
        shape_val = 0.5 * (dim * np.log(2.0 * np.pi) + logvar.sum() + float(np.sum(msq / sigma2)))
        d_mu = (mu - self.beta_mean) / sigma2
        d_logvar = 0.5 * (1.0 - msq / sigma2)

        terms = {
            "shape_nll": float(shape_val),
            "pose_nll": float(pose_val),
            "global": 0.0,
            "reproj_2d": 0.0,
            "kl_reg": 0.0,
        }
        grads = {"f": d_f, "mu": d_mu, "logvar": d_logvar}
        return terms, grads


def _capped_direction(grads: dict, mask: dict | None) -> dict:
    direction = {}
    for key, g in grads.items():
        d = -_PRECOND[key] * g
        if mask is not None and key in mask:
            d = d * mask[key]
        if key in _ROW_BLOCKS:
            flat = d.reshape(d.shape[0], -1)
            norms = np.linalg.norm(flat, axis=1)
            scale = np.minimum(1.0, _DIRECTION_CAP[key] / np.maximum(norms, 1e-300))
            d = (flat * scale[:, None]).reshape(d.shape)
        else:
            n = np.linalg.norm(d)
            if n > _DIRECTION_CAP[key]:
                d = d * (_DIRECTION_CAP[key] / n)
        direction[key] = d
    return direction


def _block_unlocked(mask, params: dict, key: str) -> bool:
    if key not in params:
        return False
    if mask is None:
        return True
    return float(np.max(mask.get(key, 1.0))) > 0.0


def _descend(objective, params: dict, schedule: list, cfg: FitConfig):
    """Projected gradient descent with backtracking line search.

    schedule is a list of (num_steps, mask, sampled) stages; a mask limits
    which parameter blocks (and which rows of f) may move, and sampled
    selects the reprojection branch the stage descends (fixed-noise sample
    cloud vs. the deterministic mode body). The accepted-step total is
    non-increasing within every stage; at a branch switch the total is
    re-baselined because the two branches measure reprojection differently.

    When the objective exposes solve_camera or solve_shape, those blocks
    are also refit in closed form (at initialization, at stage starts,
    and then every _RESOLVE_INTERVAL accepted steps while the block is
    unlocked); each refit is kept only if it lowers the stage total, so
    the per-stage descent guarantee holds.
    """
    trace: list[LossReport] = []

    def fail(message: str):
        raise OptimizationFailureError(message, trace=trace)

    cam_solver = getattr(objective, "solve_camera", None)
    shape_solver = getattr(objective, "solve_shape", None)
    branch = schedule[0][2] if schedule else None

    def try_block(params, terms, grads, total, key, value):
        if value is None or np.allclose(value, params[key]):
            return params, terms, grads, total, False
        trial = dict(params)
        trial[key] = value
        trial = _project_params(trial)
        t_terms, t_grads = objective.evaluate(trial, sampled=branch)
        t_total = _weighted_total(t_terms, objective.weights)
        if np.isfinite(t_total) and t_total <= total:
            return trial, t_terms, t_grads, t_total, True
        return params, terms, grads, total, False

    def block_refit(params, terms, grads, total, mask):
        stale = False
        if cam_solver is not None and _block_unlocked(mask, params, "camera"):
            params, terms, grads, total, took = try_block(
                params, terms, grads, total, "camera", cam_solver()
            )
            stale = stale or not took
        if shape_solver is not None and _block_unlocked(mask, params, "mu"):
            params, terms, grads, total, took = try_block(
                params, terms, grads, total, "mu", shape_solver(params)
            )
            stale = stale or not took
        if stale:
            # Restore the sample-cloud stash so later camera solves see
            # the clouds of the params actually held, not a rejected trial.
            objective.evaluate(params, sampled=branch)
        return params, terms, grads, total

    params = _project_params(params)
    terms, grads = objective.evaluate(params, sampled=branch)
    total = _weighted_total(terms, objective.weights)
    if not np.isfinite(total):
        trace.append(LossReport(total, terms, objective.weights, _grad_norm(grads), 0, False))
        fail(f"objective not finite at initialization ({total})")
    first_mask = schedule[0][1] if schedule else None
    params, terms, grads, total = block_refit(params, terms, grads, total, first_mask)
    trace.append(LossReport(total, terms, objective.weights, _grad_norm(grads), 0, True))

    alpha = cfg.step_size
    step_index = 0
    accept_count = 0
    for num_steps, mask, stage_branch in schedule:
        if stage_branch != branch:
            branch = stage_branch
            terms, grads = objective.evaluate(params, sampled=branch)
            total = _weighted_total(terms, objective.weights)
            if not np.isfinite(total):
                fail(f"objective not finite when switching branches ({total})")
            alpha = cfg.step_size
            params, terms, grads, total = block_refit(params, terms, grads, total, mask)
        for _ in range(num_steps):
            step_index += 1
            direction = _capped_direction(grads, mask)
            slope = sum(float(np.sum(grads[k] * direction[k])) for k in direction)
            accepted = False
            if slope < 0.0:
                a = alpha
                for _ in range(cfg.max_backtracks):
                    trial = {k: params[k] + a * direction[k] for k in params}
                    trial = _project_params(trial)
                    t_terms, t_grads = objective.evaluate(trial, sampled=branch)
                    t_total = _weighted_total(t_terms, objective.weights)
                    if np.isfinite(t_total) and t_total <= total + _ARMIJO_C * a * slope:
                        params, terms, grads, total = trial, t_terms, t_grads, t_total
                        alpha = min(a * cfg.step_growth, cfg.step_max)
                        accepted = True
                        break
                    a *= cfg.step_shrink
                if not accepted:
                    alpha = max(a, 1e-18)
            if accepted:
                accept_count += 1
                if accept_count % _RESOLVE_INTERVAL == 0:
                    params, terms, grads, total = block_refit(
                        params, terms, grads, total, mask
                    )
            if accepted and not all(np.all(np.isfinite(g)) for g in grads.values()):
                trace.append(
                    LossReport(total, terms, objective.weights, np.nan, step_index, True)
                )
                fail("gradient not finite after an accepted step")
            trace.append(
                LossReport(
                    total, terms, objective.weights, _grad_norm(grads), step_index, accepted
                )
            )
    return params, trace


def _joint_depths(parents: np.ndarray) -> np.ndarray:
    depth = np.zeros(parents.shape[0], dtype=int)
    for i in range(1, parents.shape[0]):
        depth[i] = depth[int(parents[i])] + 1
    return depth


def _build_schedule(cfg: FitConfig, parents: np.ndarray | None, params: dict) -> list:
    if cfg.mode == "independent" or parents is None:
        return [(cfg.steps, None, cfg.sample_loss)]

    # Hierarchical staged refinement, root to leaf, in three phases that
    # ratchet past the wide-cloud deadlock (near-uniform sample clouds are
    # almost rotation-invariant, so they give mode placement no usable
    # gradient, while tightening at a badly placed mode raises the loss):
    #   1. Bootstrap stages descend the deterministic mode-body branch,
    #      placing the modes one tree depth at a time (cumulatively, so
    #      ancestors and the scalar blocks keep adapting). v, s, and logvar
    #      stay frozen — with v fixed the mode is R(u), and the KL term
    #      depends only on s, so it is constant here.
    #   2. A calibration stage descends the sampled objective with the mode
    #      frames frozen: around well-placed modes, tightening is strictly
    #      downhill, so the concentrations and shape spread settle without
    #      the smeared clouds dragging the modes away.
    #   3. The polish stage frees everything under the sampled objective.
    depth = _joint_depths(parents)
    levels = sorted(set(depth[1:]))
    staged_total = int(round(cfg.steps * (1.0 - cfg.polish_fraction))) if cfg.polish else cfg.steps
    staged_total = min(max(staged_total, len(levels)), cfg.steps)
    per_level = staged_total // len(levels)
    remainder = staged_total - per_level * len(levels)

    schedule = []
    for idx, level in enumerate(levels):
        mask = {}
        row = (depth[1:] <= level).astype(float)
        zero = np.zeros_like(row)
        if "u" in params:
            mask["u"] = row[:, None]
            mask["s"] = zero[:, None]
            mask["v"] = zero[:, None]
        if "f" in params:
            mask["f"] = row[:, None, None]
        for key in ("mu", "gamma", "camera"):
            if key in params:
                mask[key] = 1.0
        if "logvar" in params:
            mask["logvar"] = 0.0
        n = per_level + (1 if idx < remainder else 0)
        schedule.append((n, mask, False))
    remaining = cfg.steps - staged_total
    if cfg.polish and remaining > 0:
        calibrate = remaining // 2
        if calibrate > 0 and "u" in params:
            mask = {
                "u": np.zeros((len(depth) - 1, 1)),
                "s": np.ones((len(depth) - 1, 1)),
                "v": np.zeros((len(depth) - 1, 1)),
                "mu": 0.0,
                "logvar": 1.0,
                "gamma": 0.0,
                "camera": 1.0,
            }
            mask = {k: v for k, v in mask.items() if k in params}
            schedule.append((calibrate, mask, cfg.sample_loss))
        schedule.append((remaining - calibrate, None, cfg.sample_loss))
    return schedule


def _initial_camera(model: BodyModel, scene: Scene) -> np.ndarray:
    """(log s, tx, ty) from the visible 2D bounding box: scale matches the
    rest-body extent, translation aligns visible centroids."""
    vis = np.asarray(scene.vis, dtype=bool)
    pts = np.asarray(scene.j2d, dtype=float)[vis]
    rest_verts, rest_joints = shaped_rest(model, np.zeros(model.num_shape_params))
    extent3d = float((rest_verts[:, :2].max(axis=0) - rest_verts[:, :2].min(axis=0)).max())
    extent2d = max(float((pts.max(axis=0) - pts.min(axis=0)).max()), 1.0)
    s0 = extent2d / extent3d
    t0 = pts.mean(axis=0) - s0 * rest_joints[vis, :2].mean(axis=0)
    return np.array([np.log(s0), t0[0], t0[1]])


def _distribution_from_params(params, camera, mode_flag, parents) -> BodyDistribution:
    if "f" in params:
        f_all = params["f"]
    else:
        f_all = [
            (axis_angle_to_matrix(u) * s) @ axis_angle_to_matrix(v).T
            for u, s, v in zip(params["u"], params["s"], params["v"])
        ]
    joints = tuple(MatrixFisher(fi) for fi in f_all)
    shape = ShapeDist(params["mu"], np.exp(params["logvar"]))
    return BodyDistribution.create(
        joints, shape, params.get("gamma", np.zeros(3)), camera, mode_flag, parents
    )


def fit_to_observation(model: BodyModel, scene: Scene, cfg: FitConfig | None = None):
    """Fit a body distribution to one 2D observation.

    Returns (BodyDistribution, trace) where trace is the per-step
    LossReport list. Requires at least MIN_VISIBLE_JOINTS visible targets.
    """
    cfg = cfg if cfg is not None else FitConfig()
    vis = np.asarray(scene.vis)
    if vis.shape != (model.num_joints,) or scene.j2d.shape != (model.num_joints, 2):
        raise InvalidArgumentError("scene joint count does not match the model")
    if int(vis.sum()) < MIN_VISIBLE_JOINTS:
        raise InsufficientObservationError(
            f"{int(vis.sum())} visible joints; need at least {MIN_VISIBLE_JOINTS}"
        )

    jn1 = model.num_joints - 1
    params = {
        "u": np.zeros((jn1, 3)),
        "s": np.tile(np.array([0.12, 0.09, 0.07]), (jn1, 1)),
        "v": np.zeros((jn1, 3)),
        "mu": np.zeros(model.num_shape_params),
        "logvar": np.zeros(model.num_shape_params),
        "gamma": np.zeros(3),
        "camera": _initial_camera(model, scene),
    }
    objective = _ObservationObjective(model, scene, cfg)
    schedule = _build_schedule(cfg, model.parents, params)
    params, trace = _descend(objective, params, schedule, cfg)

    camera = Camera(float(np.exp(params["camera"][0])), *map(float, params["camera"][1:]))
    parents = model.parents if cfg.mode == "hierarchical" else None
    return _distribution_from_params(params, camera, cfg.mode, parents), trace


def _chordal_mean_rotation(gammas) -> np.ndarray:
    mean = np.zeros((3, 3))
    for g in gammas:
        mean += axis_angle_to_matrix(g)
    svd = proper_svd(mean / len(gammas))
    return svd.u @ svd.v.T


def fit_to_labels(dataset, cfg: FitConfig | None = None) -> BodyDistribution:
    """Maximum-likelihood body distribution from labeled poses.

    dataset is a sequence of (rots, beta, gamma) triples: per-joint
    relative rotations (J-1, 3, 3), shape coefficients, and the global
    axis-angle. The per-joint factors and the shape Gaussian are fitted by
    gradient descent on the exact NLL; the global rotation (which has no
    distribution) is summarized by the chordal mean of the labels, and the
    camera (about which labels say nothing) is the identity placeholder.
    """
    cfg = cfg if cfg is not None else FitConfig()
    triples = list(dataset)
    if not triples:
        raise InvalidArgumentError("dataset must contain at least one label")

    rots = np.stack([np.asarray(t[0], dtype=float) for t in triples])  # (N, J-1, 3, 3)
    betas = np.stack([np.asarray(t[1], dtype=float) for t in triples])  # (N, B)
    gammas = [np.asarray(t[2], dtype=float) for t in triples]
    if rots.ndim != 4 or rots.shape[2:] != (3, 3):
        raise InvalidArgumentError("label rotations must be (J-1, 3, 3) arrays")
    jn1 = rots.shape[1]

    objective = _LabelObjective(rots.mean(axis=0), betas.mean(axis=0), (betas**2).mean(axis=0), cfg)
    params = {
        "f": np.tile(0.1 * np.eye(3), (jn1, 1, 1)),
        "mu": np.zeros(betas.shape[1]),
        "logvar": np.zeros(betas.shape[1]),
    }
    params, _ = _descend(objective, params, [(cfg.steps, None, False)], cfg)

    gamma_hat = matrix_to_axis_angle(_chordal_mean_rotation(gammas))
    joints = tuple(MatrixFisher(fi) for fi in params["f"])
    shape = ShapeDist(params["mu"], np.exp(params["logvar"]))
    return BodyDistribution.create(joints, shape, gamma_hat, Camera(1.0, 0.0, 0.0), "independent")
