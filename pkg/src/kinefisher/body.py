"""Procedural articulated body: blendshapes, kinematics, skinning, scenes.

The toy model has the same mathematical form as a statistical mesh body:
a template vertex set, a linear shape basis, a kinematic tree of relative
joint rotations, linear blend skinning, and a row-stochastic regressor
mapping vertices to joint locations. Geometry is capsule-like rings around
each bone segment, plus a small symmetric "collar" ring centered at every
joint. Each regressor row averages exactly one collar ring, whose verts
are rigidly skinned to that joint, so regressed joints equal the forward
kinematics positions to machine precision under every pose.

Frames and conventions:
- y is up; the rest body is a T-pose facing +z.
- Joint i's rotation applies about joint i, affecting its subtree; vertex
  rings of the bone (parent -> child) are skinned to the parent joint.
- The global rotation acts about the root joint, so the root position is
  pose-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import ROW_STOCHASTIC_TOL
from .errors import InvalidArgumentError
from .rng import RandomTree, as_generator
from .so3 import axis_angle_to_matrix

__all__ = [
    "BodyModel",
    "Camera",
    "Scene",
    "GroundTruth",
    "SceneConfig",
    "make_toy_model",
    "shaped_rest",
    "pose_body",
    "forward_kinematics",
    "skin_vertices",
    "project_weak_perspective",
    "per_vertex_uncertainty",
    "generate_scene",
    "fit_camera",
    "vertices_driven_by",
]

_RING_SIZE = 4

# (name, parent) rows of the canonical tree; any prefix of length >= 4 is
# itself a valid topology.
_CANONICAL_JOINTS = [
    ("pelvis", -1),
    ("spine", 0),
    ("chest", 1),
    ("head", 2),
    ("l_shoulder", 2),
    ("l_elbow", 4),
    ("l_wrist", 5),
    ("r_shoulder", 2),
    ("r_elbow", 7),
    ("r_wrist", 8),
    ("l_hip", 0),
    ("l_knee", 10),
    ("l_ankle", 11),
    ("r_hip", 0),
    ("r_knee", 13),
    ("r_ankle", 14),
]

_CANONICAL_POSITIONS = np.array(
    [
        [0.00, 0.95, 0.0],
        [0.00, 1.10, 0.0],
        [0.00, 1.30, 0.0],
        [0.00, 1.55, 0.0],
        [0.18, 1.45, 0.0],
        [0.42, 1.45, 0.0],
        [0.66, 1.45, 0.0],
        [-0.18, 1.45, 0.0],
        [-0.42, 1.45, 0.0],
        [-0.66, 1.45, 0.0],
        [0.10, 0.90, 0.0],
        [0.10, 0.50, 0.0],
        [0.10, 0.10, 0.0],
        [-0.10, 0.90, 0.0],
        [-0.10, 0.50, 0.0],
        [-0.10, 0.10, 0.0],
    ]
)

# Ring radius of the bone ending at each joint (m).
_BONE_RADIUS = {
    "spine": 0.10,
    "chest": 0.10,
    "head": 0.06,
    "l_shoulder": 0.05,
    "r_shoulder": 0.05,
    "l_elbow": 0.045,
    "r_elbow": 0.045,
    "l_wrist": 0.04,
    "r_wrist": 0.04,
    "l_hip": 0.08,
    "r_hip": 0.08,
    "l_knee": 0.07,
    "r_knee": 0.07,
    "l_ankle": 0.05,
    "r_ankle": 0.05,
}

_TORSO_JOINTS = frozenset({0, 1, 2, 3})
_SHAPE_CHANNELS = 10


@dataclass(frozen=True)
class BodyModel:
    """Immutable body model; arrays are float64 and never mutated."""

    template: np.ndarray  # (V, 3) meters
    shape_basis: np.ndarray  # (V, 3, B) meters per unit beta
    parents: np.ndarray  # (J,) int, parents[0] = -1, parents[i] < i
    rest_joint_regressor: np.ndarray  # (J, V) row-stochastic
    skin_weights: np.ndarray  # (V, J) row-stochastic
    names: tuple  # length J
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def num_shape_params(self) -> int:
        return self.shape_basis.shape[2]

    def validate(self) -> "BodyModel":
        v, j, b = self.num_vertices, self.num_joints, self.num_shape_params
        if self.template.shape != (v, 3) or self.shape_basis.shape != (v, 3, b):
            raise InvalidArgumentError("template/shape_basis shapes disagree")
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, j)):
            raise InvalidArgumentError("parents must be topologically ordered with parents[0] = -1")
        for name, mat, rows in (
            ("rest_joint_regressor", self.rest_joint_regressor, j),
            ("skin_weights", self.skin_weights, v),
        ):
            if mat.shape[0] != rows:
                raise InvalidArgumentError(f"{name} has wrong shape {mat.shape}")
            if mat.min() < 0 or np.abs(mat.sum(axis=1) - 1.0).max() > ROW_STOCHASTIC_TOL:
                raise InvalidArgumentError(f"{name} rows must be nonnegative and sum to 1")
        if len(self.names) != j:
            raise InvalidArgumentError("names length must match joint count")
        return self

    def children_of(self, i: int) -> list:
        return [c for c in range(self.num_joints) if self.parents[c] == i]


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera c = (s, t_x, t_y): pixels = s * xy + t."""

    s: float
    tx: float
    ty: float

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise InvalidArgumentError("camera scale must be positive and finite")
        if not (np.isfinite(self.tx) and np.isfinite(self.ty)):
            raise InvalidArgumentError("camera translation must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.tx, self.ty])


@dataclass(frozen=True)
class GroundTruth:
    rots: np.ndarray  # (J-1, 3, 3) relative rotations, joint order 1..J-1
    beta: np.ndarray  # (B,)
    gamma: np.ndarray  # (3,) axis-angle global rotation
    camera: Camera


@dataclass(frozen=True)
class Scene:
    """2D observation: joint targets, visibility, canvas; gt optional."""

    j2d: np.ndarray  # (J, 2) pixels
    vis: np.ndarray  # (J,) 0/1
    canvas: int
    gt: GroundTruth | None = None


@dataclass(frozen=True)
class SceneConfig:
    canvas: int = 256
    shape_std: float = 1.25
    pixel_noise: float = 8.0  # uniform [-8, 8] px on each coordinate
    drop_prob: float = 0.1  # per-joint visibility removal
    noise: bool = True
    dropout: bool = True
    fill: float = 0.70  # fraction of canvas the rest body spans
    pose_angle_std: float = np.deg2rad(25.0)
    pose_angle_clamp: float = np.deg2rad(90.0)
    global_angle_std: float = np.deg2rad(20.0)
    global_angle_clamp: float = np.deg2rad(60.0)


def _ring_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic orthonormal pair perpendicular to the bone axis: start
    # from the canonical vector least aligned with it.
    ref = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def make_toy_model(joint_count: int = 16, verts_per_bone: int = 12, seed: int = 0) -> BodyModel:
    """Build the procedural capsule person.

    joint_count trims the canonical 16-joint tree to its first entries
    (minimum 4: pelvis, spine, chest, head). verts_per_bone is the ring
    vertex budget per bone segment (multiple of 4). Ring radii carry a
    small seeded jitter so no two models are accidentally identical;
    construction is bit-deterministic for a given seed.
    """
    if not (4 <= joint_count <= len(_CANONICAL_JOINTS)):
        raise InvalidArgumentError(f"joint_count must be in [4, {len(_CANONICAL_JOINTS)}]")
    if verts_per_bone < 4 or verts_per_bone % _RING_SIZE != 0:
        raise InvalidArgumentError("verts_per_bone must be a positive multiple of 4")

    names = tuple(name for name, _ in _CANONICAL_JOINTS[:joint_count])
    parents = np.array([p for _, p in _CANONICAL_JOINTS[:joint_count]], dtype=np.int64)
    joints = _CANONICAL_POSITIONS[:joint_count].copy()
    j = joint_count
    n_rings = verts_per_bone // _RING_SIZE
    jitter_gen = RandomTree(seed).child("ring-jitter").generator()

    has_child = np.zeros(j, dtype=bool)
    has_child[parents[1:]] = True
    leaves = [i for i in range(1, j) if not has_child[i]]

    verts: list[np.ndarray] = []
    # Per-vertex skinning joint, interpolation endpoints (p, c, t) for the
    # shape basis, radial offset vector, and torso/limb tag.
    skin_joint: list[int] = []
    interp: list[tuple[int, int, float]] = []
    radial: list[np.ndarray] = []
    is_torso: list[bool] = []
    rings: list[list[int]] = []  # vertex indices of each ring, for faces
    segments: list[list[int]] = []  # ring indices of each segment

    def add_ring(center, e1, e2, radius, joint, p, c, t, torso, jitter):
        idx = []
        for m in range(_RING_SIZE):
            ang = 2.0 * np.pi * m / _RING_SIZE
            scale = radius * (1.0 + 0.05 * jitter[m]) if jitter is not None else radius
            offset = scale * (np.cos(ang) * e1 + np.sin(ang) * e2)
            idx.append(len(verts))
            verts.append(center + offset)
            skin_joint.append(joint)
            interp.append((p, c, t))
            radial.append(offset)
            is_torso.append(torso)
        rings.append(idx)
        return len(rings) - 1

    # Collar rings: symmetric, unjittered, one per joint; their mean is the
    # joint location, which is what makes the regressor exact.
    collar_rings = []
    for i in range(j):
        axis = np.array([0.0, 1.0, 0.0]) if i == 0 else _bone_axis(joints, parents, i)
        e1, e2 = _ring_basis(axis)
        radius = 0.6 * _radius_of(names, i)
        torso = i in _TORSO_JOINTS
        collar_rings.append(add_ring(joints[i], e1, e2, radius, i, i, i, 0.0, torso, None))

    # Bone rings: interior stations of each parent->child segment, skinned
    # to the parent (whose rotation bends this bone).
    for c in range(1, j):
        p = int(parents[c])
        axis = _bone_axis(joints, parents, c)
        e1, e2 = _ring_basis(axis)
        radius = _radius_of(names, c)
        torso = c in _TORSO_JOINTS
        seg = []
        for r in range(n_rings):
            t = (r + 1.0) / (n_rings + 1.0)
            center = (1.0 - t) * joints[p] + t * joints[c]
            seg.append(
                add_ring(center, e1, e2, radius, p, p, c, t, torso, jitter_gen.standard_normal(_RING_SIZE))
            )
        segments.append(seg)

    # Stub segments extend each leaf (hands, feet, crown) so leaf rotations
    # move real geometry; skinned to the leaf itself.
    for leaf in leaves:
        p = int(parents[leaf])
        axis = _bone_axis(joints, parents, leaf)
        e1, e2 = _ring_basis(axis)
        length = 0.45 * np.linalg.norm(joints[leaf] - joints[p])
        radius = 0.8 * _radius_of(names, leaf)
        torso = leaf in _TORSO_JOINTS
        seg = [collar_rings[leaf]]
        for r in range(n_rings):
            t = (r + 1.0) / n_rings
            center = joints[leaf] + t * length * axis
            taper = 1.0 - 0.5 * t
            seg.append(
                add_ring(
                    center, e1, e2, radius * taper, leaf, leaf, leaf, 0.0, torso,
                    jitter_gen.standard_normal(_RING_SIZE),
                )
            )
        segments.append(seg)

    template = np.array(verts)
    v = template.shape[0]

    skin_weights = np.zeros((v, j))
    skin_weights[np.arange(v), skin_joint] = 1.0

    regressor = np.zeros((j, v))
    for i, ring in enumerate(collar_rings):
        regressor[i, rings[ring]] = 1.0 / _RING_SIZE

    shape_basis = _build_shape_basis(names, parents, joints, template, interp, radial, is_torso)

    faces = []
    for seg in segments:
        for ra, rb in zip(seg[:-1], seg[1:]):
            ia, ib = rings[ra], rings[rb]
            for m in range(_RING_SIZE):
                m2 = (m + 1) % _RING_SIZE
                faces.append((ia[m], ia[m2], ib[m2]))
                faces.append((ia[m], ib[m2], ib[m]))
    faces = np.array(faces, dtype=np.int64)

    return BodyModel(
        template=template,
        shape_basis=shape_basis,
        parents=parents,
        rest_joint_regressor=regressor,
        skin_weights=skin_weights,
        names=names,
        faces=faces,
    ).validate()


def _bone_axis(joints, parents, c) -> np.ndarray:
    d = joints[c] - joints[int(parents[c])]
    return d / np.linalg.norm(d)


def _radius_of(names, i) -> float:
    return _BONE_RADIUS.get(names[i], 0.08)


def _build_shape_basis(names, parents, joints, template, interp, radial, is_torso) -> np.ndarray:
    j = len(names)
    v = template.shape[0]
    name_to_idx = {n: i for i, n in enumerate(names)}

    # Per-channel raw bone-stretch offsets; a joint's displacement is the
    # cumulative sum of raw offsets along its ancestor chain, so limbs stay
    # attached as segments lengthen.
    raw = np.zeros((j, 3, _SHAPE_CHANNELS))

    def stretch(channel, joint_name, amount):
        i = name_to_idx.get(joint_name)
        if i is not None:
            raw[i, :, channel] += amount * _bone_axis(joints, parents, i)

    for i in range(1, j):  # channel 0: stature, every bone stretches 6%
        raw[i, :, 0] = 0.06 * (joints[i] - joints[int(parents[i])])
    for side in ("l", "r"):
        stretch(1, f"{side}_knee", 0.04)
        stretch(1, f"{side}_ankle", 0.05)
        stretch(2, f"{side}_elbow", 0.04)
        stretch(2, f"{side}_wrist", 0.05)
        stretch(4, f"{side}_shoulder", 0.04)
        stretch(5, f"{side}_hip", 0.03)
    stretch(3, "spine", 0.03)
    stretch(3, "chest", 0.03)
    stretch(3, "head", 0.03)
    stretch(6, "head", 0.02)

    joint_disp = np.zeros((j, 3, _SHAPE_CHANNELS))
    for i in range(j):
        joint_disp[i] = raw[i]
        if parents[i] >= 0:
            joint_disp[i] += joint_disp[int(parents[i])]

    basis = np.zeros((v, 3, _SHAPE_CHANNELS))
    head_idx = name_to_idx.get("head")
    for vi in range(v):
        p, c, t = interp[vi]
        basis[vi] = (1.0 - t) * joint_disp[p] + t * joint_disp[c]
        r = radial[vi]
        basis[vi, :, 7] += 0.10 * r  # overall girth
        if is_torso[vi]:
            basis[vi, :, 8] += 0.12 * r  # torso girth
        else:
            basis[vi, :, 9] += 0.12 * r  # limb girth
        if head_idx is not None and p == head_idx and c == head_idx:
            basis[vi, :, 6] += 0.15 * r  # head size scales its rings too

    return basis


def shaped_rest(model: BodyModel, beta) -> tuple[np.ndarray, np.ndarray]:
    """Rest vertices template + basis . beta, and regressed rest joints."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.num_shape_params,):
        raise InvalidArgumentError(
            f"beta must have shape ({model.num_shape_params},), got {beta.shape}"
        )
    verts = model.template + model.shape_basis @ beta
    joints = model.rest_joint_regressor @ verts
    return verts, joints


def pose_body(model: BodyModel, rots, gamma, beta) -> tuple[np.ndarray, np.ndarray]:
    """Forward kinematics plus linear blend skinning.

    rots holds one relative rotation per non-root joint (index i-1 drives
    joint i). The global rotation R(gamma) acts about the root joint, so
    with identity rotations and gamma = 0 this returns shaped_rest exactly.
    Posed joints are regressed from the posed vertices.
    """
    rots = np.asarray(rots, dtype=float)
    jn = model.num_joints
    if rots.shape != (jn - 1, 3, 3):
        raise InvalidArgumentError(f"need {jn - 1} relative rotations, got shape {rots.shape}")
    rest_verts, rest_joints = shaped_rest(model, beta)
    world_rot, world_pos = forward_kinematics(model.parents, rest_joints, rots, gamma)

    verts = skin_vertices(model.skin_weights, rest_verts, rest_joints, world_rot, world_pos)
    joints = model.rest_joint_regressor @ verts
    return verts, joints


def forward_kinematics(parents, rest_joints, rots, gamma):
    """World rotation and position per joint along the tree.

    world_rot[i] composes the global rotation with every relative rotation
    on the path from the root; world_pos[i] carries the rest offsets
    through the parent frames, with the root pinned at its rest location.
    """
    jn = rest_joints.shape[0]
    world_rot = np.empty((jn, 3, 3))
    world_pos = np.empty((jn, 3))
    world_rot[0] = axis_angle_to_matrix(np.asarray(gamma, dtype=float))
    world_pos[0] = rest_joints[0]
    for i in range(1, jn):
        p = int(parents[i])
        world_rot[i] = world_rot[p] @ rots[i - 1]
        world_pos[i] = world_rot[p] @ (rest_joints[i] - rest_joints[p]) + world_pos[p]
    return world_rot, world_pos


def skin_vertices(weights, rest_verts, rest_joints, world_rot, world_pos):
    """Linear blend skinning: each vertex is rotated about the rest joints
    it is weighted to and carried to their posed positions."""
    out = np.zeros_like(rest_verts)
    for i in range(rest_joints.shape[0]):
        w = weights[:, i]
        active = w > 0
        if not np.any(active):
            continue
        moved = (rest_verts[active] - rest_joints[i]) @ world_rot[i].T + world_pos[i]
        out[active] += w[active, None] * moved
    return out


def project_weak_perspective(points, cam: Camera) -> np.ndarray:
    """Drop z, scale by s, translate: out = s * (x, y) + (t_x, t_y)."""
    points = np.asarray(points, dtype=float)
    return cam.s * points[..., :2] + np.array([cam.tx, cam.ty])


def per_vertex_uncertainty(model: BodyModel, dist, k: int = 100, rng=None) -> np.ndarray:
    """Mean per-vertex Euclidean distance from the vertex sample mean.

    Draws k bodies from the distribution (default 100) and reports, for
    every vertex, the average distance to that vertex's mean location.
    """
    if k < 2:
        raise InvalidArgumentError("per-vertex uncertainty needs k >= 2 samples")
    if rng is None:
        raise InvalidArgumentError("an explicit rng is required")
    from .distributions import sample_bodies  # deferred: avoids module cycle

    samples = sample_bodies(model, dist, k, rng)
    verts = np.stack([s.vertices for s in samples])
    mean = verts.mean(axis=0)
    return np.linalg.norm(verts - mean, axis=2).mean(axis=0)


def vertices_driven_by(model: BodyModel, joint_indices) -> np.ndarray:
    """Boolean mask of vertices whose skin weight mass sits on these joints."""
    sel = np.zeros(model.num_joints, dtype=bool)
    sel[list(joint_indices)] = True
    return model.skin_weights[:, sel].sum(axis=1) > 0.5


_HINGE_AXES = {"elbow": np.array([0.0, 1.0, 0.0]), "knee": np.array([1.0, 0.0, 0.0])}


def _sample_pose(model: BodyModel, cfg: SceneConfig, rng: RandomTree) -> np.ndarray:
    rots = np.empty((model.num_joints - 1, 3, 3))
    for i in range(1, model.num_joints):
        gen = rng.child(i).generator()
        hinge = next(
            (ax for key, ax in _HINGE_AXES.items() if key in model.names[i]), None
        )
        if hinge is not None:
            # Hinge-biased: anatomical axis with a small wobble.
            axis = hinge + 0.15 * gen.standard_normal(3)
        else:
            axis = gen.standard_normal(3)
            while np.linalg.norm(axis) < 1e-9:
                axis = gen.standard_normal(3)
        axis = axis / np.linalg.norm(axis)
        angle = np.clip(
            cfg.pose_angle_std * gen.standard_normal(), -cfg.pose_angle_clamp, cfg.pose_angle_clamp
        )
        rots[i - 1] = axis_angle_to_matrix(angle * axis)
    return rots


def fit_camera(model: BodyModel, beta, canvas: int, fill: float) -> Camera:
    """Scale from the rest-body bounding box; translation centers the root."""
    verts, joints = shaped_rest(model, beta)
    extent = (verts[:, :2].max(axis=0) - verts[:, :2].min(axis=0)).max()
    s = fill * canvas / extent
    tx = canvas / 2.0 - s * joints[0, 0]
    ty = canvas / 2.0 - s * joints[0, 1]
    return Camera(float(s), float(tx), float(ty))


def generate_scene(model: BodyModel, config: SceneConfig | None = None, rng=None) -> Scene:
    """Synthesize one observation with stored ground truth.

    Shape coefficients are N(0, shape_std^2) clipped to |beta| <= 6; the
    pose prior is the per-joint axis-angle perturbation documented on
    SceneConfig; 2D targets get uniform [-pixel_noise, pixel_noise] offsets
    and are clipped to the canvas; joints drop out independently.
    """
    cfg = config if config is not None else SceneConfig()
    if not isinstance(rng, RandomTree):
        raise InvalidArgumentError("generate_scene requires a RandomTree rng")

    beta = np.clip(
        cfg.shape_std * rng.child("shape").generator().standard_normal(model.num_shape_params),
        -6.0,
        6.0,
    )
    rots = _sample_pose(model, cfg, rng.child("pose"))

    ggen = rng.child("global").generator()
    gaxis = ggen.standard_normal(3)
    gaxis /= np.linalg.norm(gaxis)
    gangle = np.clip(
        cfg.global_angle_std * ggen.standard_normal(), -cfg.global_angle_clamp, cfg.global_angle_clamp
    )
    gamma = gangle * gaxis

    camera = fit_camera(model, beta, cfg.canvas, cfg.fill)
    _, joints3d = pose_body(model, rots, gamma, beta)
    j2d = project_weak_perspective(joints3d, camera)

    if cfg.noise:
        noise = rng.child("pixel-noise").generator().uniform(
            -cfg.pixel_noise, cfg.pixel_noise, size=j2d.shape
        )
        j2d = j2d + noise
    j2d = np.clip(j2d, 0.0, float(cfg.canvas))

    if cfg.dropout:
        vis = (
            rng.child("visibility").generator().random(model.num_joints) >= cfg.drop_prob
        ).astype(np.int8)
    else:
        vis = np.ones(model.num_joints, dtype=np.int8)

    gt = GroundTruth(rots=rots, beta=beta, gamma=gamma, camera=camera)
    return Scene(j2d=j2d, vis=vis, canvas=cfg.canvas, gt=gt)
