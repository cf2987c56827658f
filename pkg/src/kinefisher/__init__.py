"""Rotation distributions on articulated kinematic trees.

Matrix-Fisher distributions over SO(3), composed joint-by-joint along a
body's kinematic tree: exact normalizers by quadrature, a differentiable
rejection sampler, and per-instance gradient fitting of body shape and
joint-rotation distributions from 2D joint observations.
"""

__version__ = "0.1.0"

from .errors import (
    ConcentrationOverflowError,
    InsufficientObservationError,
    InvalidArgumentError,
    KinefisherError,
    ModeUndefinedError,
    OptimizationFailureError,
    SamplerStallError,
)
from .rng import RandomTree
from .so3 import (
    ProperSVD,
    axis_angle_to_matrix,
    geodesic_distance,
    haar_random_rotation,
    haar_random_rotations,
    matrix_to_axis_angle,
    matrix_to_quaternion,
    proper_svd,
    quaternion_to_matrix,
)
from .matrix_fisher import (
    MatrixFisher,
    bingham_coefficients,
    concentrations_from_s,
    log_norm_const,
    log_pdf_many,
    mle_fit,
)
from .sampler import (
    BinghamParams,
    NoiseRecord,
    fixed_noise_resample,
    optimal_b,
    sample_bingham_quaternion,
    sample_matrix_fisher,
    sample_matrix_fisher_many,
)
from .body import (
    BodyModel,
    Camera,
    GroundTruth,
    Scene,
    SceneConfig,
    fit_camera,
    forward_kinematics,
    generate_scene,
    make_toy_model,
    per_vertex_uncertainty,
    pose_body,
    project_weak_perspective,
    shaped_rest,
    skin_vertices,
    vertices_driven_by,
)
from .distributions import (
    BodyDistribution,
    BodySample,
    ParentSummary,
    ShapeDist,
    body_log_pdf,
    build_parent_context,
    mode_body,
    replay_body_sample,
    sample_bodies,
    shape_log_pdf,
    shape_sample_reparam,
)
from .losses import (
    global_rot_loss,
    pose_nll,
    reproj_2d_sample_loss,
    shape_kl_to_prior,
    shape_nll,
)
from .fitting import FitConfig, LossReport, fit_to_labels, fit_to_observation
from .acceptance import run_criterion, run_report

__all__ = [
    "__version__",
    # errors
    "KinefisherError",
    "InvalidArgumentError",
    "ConcentrationOverflowError",
    "ModeUndefinedError",
    "SamplerStallError",
    "OptimizationFailureError",
    "InsufficientObservationError",
    # rng
    "RandomTree",
    # rotations
    "ProperSVD",
    "proper_svd",
    "axis_angle_to_matrix",
    "matrix_to_axis_angle",
    "quaternion_to_matrix",
    "matrix_to_quaternion",
    "geodesic_distance",
    "haar_random_rotation",
    "haar_random_rotations",
    # matrix-Fisher
    "MatrixFisher",
    "log_norm_const",
    "log_pdf_many",
    "concentrations_from_s",
    "bingham_coefficients",
    "mle_fit",
    # sampling
    "BinghamParams",
    "NoiseRecord",
    "optimal_b",
    "sample_bingham_quaternion",
    "sample_matrix_fisher",
    "sample_matrix_fisher_many",
    "fixed_noise_resample",
    # body model
    "BodyModel",
    "Camera",
    "GroundTruth",
    "Scene",
    "SceneConfig",
    "make_toy_model",
    "shaped_rest",
    "pose_body",
    "forward_kinematics",
    "skin_vertices",
    "project_weak_perspective",
    "fit_camera",
    "generate_scene",
    "per_vertex_uncertainty",
    "vertices_driven_by",
    # body distributions
    "ShapeDist",
    "ParentSummary",
    "BodyDistribution",
    "BodySample",
    "build_parent_context",
    "shape_log_pdf",
    "shape_sample_reparam",
    "body_log_pdf",
    "sample_bodies",
    "replay_body_sample",
    "mode_body",
    # losses
    "shape_nll",
    "pose_nll",
    "global_rot_loss",
    "reproj_2d_sample_loss",
    "shape_kl_to_prior",
    # fitting
    "FitConfig",
    "LossReport",
    "fit_to_observation",
    "fit_to_labels",
    # self-checks
    "run_criterion",
    "run_report",
]
