"""Composite distributions over whole bodies.

A body distribution factorizes as a diagonal Gaussian over shape
coefficients times independent matrix-Fisher factors over the relative
rotation of every non-root joint; global rotation and camera are point
estimates. The "hierarchical" flag does not change this density — it
records that the factors were fitted with parent conditioning, and stores
per-joint summaries (frame, singular values, mode) of every ancestor so
that downstream consumers can reproduce the conditioning context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, Camera, pose_body
from .errors import InvalidArgumentError
from .matrix_fisher import MatrixFisher
from .rng import RandomTree
from .sampler import NoiseRecord, fixed_noise_resample, sample_matrix_fisher

__all__ = [
    "ShapeDist",
    "ParentSummary",
    "BodyDistribution",
    "BodySample",
    "shape_log_pdf",
    "shape_sample_reparam",
    "body_log_pdf",
    "sample_bodies",
    "replay_body_sample",
    "mode_body",
    "build_parent_context",
]

_MODE_FLAGS = ("independent", "hierarchical")


@dataclass(frozen=True)
class ShapeDist:
    """Diagonal Gaussian over shape coefficients."""

    mu: np.ndarray  # (B,)
    sigma2: np.ndarray  # (B,) strictly positive

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)
        if mu.ndim != 1 or sigma2.shape != mu.shape:
            raise InvalidArgumentError("shape mean and variance must be equal-length vectors")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma2)):
            raise InvalidArgumentError("shape distribution parameters must be finite")
        if np.any(sigma2 <= 0):
            raise InvalidArgumentError("shape variances must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class ParentSummary:
    """Frozen summary of one ancestor's rotation factor."""

    joint: int  # joint index in the kinematic tree
    u: np.ndarray  # (3, 3) left frame
    s: np.ndarray  # (3,) proper singular values
    mode: np.ndarray  # (3, 3) most probable rotation


def build_parent_context(joints, parents) -> tuple:
    """Per non-root joint, summaries of its non-root ancestors, root first.

    joints is the per-joint MatrixFisher sequence (index i-1 for joint i);
    parents is the tree array with parents[0] = -1.
    """
    parents = np.asarray(parents)
    context = []
    for i in range(1, parents.shape[0]):
        chain = []
        a = int(parents[i])
        while a > 0:
            chain.append(a)
            a = int(parents[a])
        chain.reverse()
        context.append(
            tuple(
                ParentSummary(
                    joint=a,
                    u=joints[a - 1].svd.u,
                    s=joints[a - 1].svd.s,
                    mode=joints[a - 1].mode(),
                )
                for a in chain
            )
        )
    return tuple(context)


@dataclass(frozen=True)
class BodyDistribution:
    """Shape Gaussian x per-joint matrix-Fisher factors, plus point
    estimates for global rotation and camera."""

    joints: tuple  # (J-1) MatrixFisher, index i-1 for joint i
    shape: ShapeDist
    gamma: np.ndarray  # (3,) axis-angle
    camera: Camera
    mode_flag: str = "independent"
    parent_context: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        if self.gamma.shape != (3,):
            raise InvalidArgumentError("gamma must be a 3-vector axis-angle")
        if self.mode_flag not in _MODE_FLAGS:
            raise InvalidArgumentError(f"mode_flag must be one of {_MODE_FLAGS}")
        if self.mode_flag == "hierarchical" and self.parent_context is not None:
            if len(self.parent_context) != len(self.joints):
                raise InvalidArgumentError("parent_context length must match joint count")

    @classmethod
    def create(cls, joints, shape, gamma, camera, mode_flag="independent", parents=None):
        """Build a distribution, deriving parent_context when hierarchical."""
        context = None
        if mode_flag == "hierarchical":
            if parents is None:
                raise InvalidArgumentError("hierarchical mode needs the parents array")
            context = build_parent_context(joints, parents)
        return cls(
            joints=tuple(joints),
            shape=shape,
            gamma=np.asarray(gamma, dtype=float),
            camera=camera,
            mode_flag=mode_flag,
            parent_context=context,
        )

    @property
    def num_joints(self) -> int:
        return len(self.joints) + 1


@dataclass(frozen=True)
class BodySample:
    """One body draw with everything needed to replay it bit-exactly."""

    rots: np.ndarray  # (J-1, 3, 3)
    beta: np.ndarray  # (B,)
    noise: tuple  # (J-1) NoiseRecord
    shape_eps: np.ndarray  # (B,)
    vertices: np.ndarray  # (V, 3)
    joints3d: np.ndarray  # (J, 3)


def shape_log_pdf(beta, d: ShapeDist) -> float:
    """Exact diagonal-Gaussian log density."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (d.dim,):
        raise InvalidArgumentError(f"beta must have shape ({d.dim},), got {beta.shape}")
    z2 = (beta - d.mu) ** 2 / d.sigma2
    return float(-0.5 * (d.dim * np.log(2.0 * np.pi) + np.log(d.sigma2).sum() + z2.sum()))


def shape_sample_reparam(d: ShapeDist, rng) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterized draw beta = mu + sigma * eps; returns (beta, eps)."""
    gen = rng.generator() if isinstance(rng, RandomTree) else rng
    eps = gen.standard_normal(d.dim)
    return d.mu + np.sqrt(d.sigma2) * eps, eps


def body_log_pdf(rots, beta, d: BodyDistribution) -> float:
    """Sum of per-joint rotation log densities and the shape log density."""
    rots = np.asarray(rots, dtype=float)
    if rots.shape != (len(d.joints), 3, 3):
        raise InvalidArgumentError(
            f"need {len(d.joints)} rotations, got shape {rots.shape}"
        )
    total = shape_log_pdf(beta, d.shape)
    for mf, r in zip(d.joints, rots):
        total += mf.log_pdf(r)
    return float(total)


def _check_counts(model: BodyModel, d: BodyDistribution):
    if len(d.joints) != model.num_joints - 1:
        raise InvalidArgumentError(
            f"distribution has {len(d.joints)} joint factors, model needs {model.num_joints - 1}"
        )
    if d.shape.dim != model.num_shape_params:
        raise InvalidArgumentError("shape dimension does not match the model")


def sample_bodies(model: BodyModel, d: BodyDistribution, k: int, rng) -> list:
    """Draw k independent posed bodies, recording all base noise.

    Every draw consumes its own RNG substream, so the k samples are
    reproducible individually and insensitive to evaluation order.
    """
    if k < 1:
        raise InvalidArgumentError("k must be at least 1")
    if not isinstance(rng, RandomTree):
        raise InvalidArgumentError("sample_bodies requires a RandomTree rng")
    _check_counts(model, d)

    out = []
    for m in range(k):
        tree = rng.child(m)
        rots = np.empty((len(d.joints), 3, 3))
        records = []
        for i, mf in enumerate(d.joints):
            r, rec = sample_matrix_fisher(mf, tree.child(i + 1))
            rots[i] = r
            records.append(rec)
        beta, eps = shape_sample_reparam(d.shape, tree.child("shape"))
        verts, joints3d = pose_body(model, rots, d.gamma, beta)
        out.append(
            BodySample(
                rots=rots,
                beta=beta,
                noise=tuple(records),
                shape_eps=eps,
                vertices=verts,
                joints3d=joints3d,
            )
        )
    return out


def replay_body_sample(model: BodyModel, d: BodyDistribution, noise, shape_eps) -> BodySample:
    """Rebuild a sample from stored noise; bit-exact for the distribution
    that produced it, and differentiably reusable for nearby ones."""
    _check_counts(model, d)
    if len(noise) != len(d.joints):
        raise InvalidArgumentError("one noise record per non-root joint is required")
    rots = np.empty((len(d.joints), 3, 3))
    for i, (mf, rec) in enumerate(zip(d.joints, noise)):
        rots[i] = fixed_noise_resample(mf, rec)
    shape_eps = np.asarray(shape_eps, dtype=float)
    beta = d.shape.mu + np.sqrt(d.shape.sigma2) * shape_eps
    verts, joints3d = pose_body(model, rots, d.gamma, beta)
    return BodySample(
        rots=rots,
        beta=beta,
        noise=tuple(noise),
        shape_eps=shape_eps,
        vertices=verts,
        joints3d=joints3d,
    )


def mode_body(model: BodyModel, d: BodyDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Pose with every joint at its most probable rotation and beta = mu."""
    _check_counts(model, d)
    rots = np.stack([mf.mode() for mf in d.joints])
    return pose_body(model, rots, d.gamma, d.shape.mu)
