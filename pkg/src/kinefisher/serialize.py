"""File formats: versioned JSON schemas, CSV traces, OBJ meshes, manifests.

All JSON is emitted in a canonical form (sorted keys, fixed indentation,
shortest round-trip decimals via repr) so identical values always produce
identical bytes; reproducibility checks compare files directly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .body import BodyModel, Camera, GroundTruth, Scene
from .distributions import BodyDistribution, ParentSummary, ShapeDist
from .errors import InvalidArgumentError
from .fitting import TERM_NAMES
from .matrix_fisher import MatrixFisher

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "json_bytes",
    "dump_json",
    "load_json",
    "model_to_dict",
    "model_from_dict",
    "scene_to_dict",
    "scene_from_dict",
    "distribution_to_dict",
    "distribution_from_dict",
    "rotation_samples_to_dict",
    "rotation_samples_from_dict",
    "write_trace_csv",
    "read_trace_csv",
    "write_uncertainty_csv",
    "write_obj",
    "sha256_file",
]


def _listify(arr) -> list:
    return np.asarray(arr, dtype=float).tolist()


def json_bytes(obj) -> bytes:
    """Canonical JSON encoding: stable bytes for identical values."""
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def dump_json(obj, path) -> None:
    Path(path).write_bytes(json_bytes(obj))


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _expect_kind(data: dict, kind: str) -> None:
    if not isinstance(data, dict) or data.get("kind") != kind:
        raise InvalidArgumentError(f"expected a '{kind}' document")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InvalidArgumentError(
            f"unsupported schema_version {data.get('schema_version')!r} for '{kind}'"
        )


def model_to_dict(model: BodyModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "body_model",
        "names": list(model.names),
        "parents": model.parents.tolist(),
        "template": _listify(model.template),
        "shape_basis": _listify(model.shape_basis),
        "rest_joint_regressor": _listify(model.rest_joint_regressor),
        "skin_weights": _listify(model.skin_weights),
        "faces": model.faces.tolist(),
    }


def model_from_dict(data: dict) -> BodyModel:
    _expect_kind(data, "body_model")
    return BodyModel(
        template=np.asarray(data["template"], dtype=float),
        shape_basis=np.asarray(data["shape_basis"], dtype=float),
        parents=np.asarray(data["parents"], dtype=np.int64),
        rest_joint_regressor=np.asarray(data["rest_joint_regressor"], dtype=float),
        skin_weights=np.asarray(data["skin_weights"], dtype=float),
        names=tuple(data["names"]),
        faces=np.asarray(data["faces"], dtype=np.int64).reshape(-1, 3),
    ).validate()


def _camera_to_dict(cam: Camera) -> dict:
    return {"s": cam.s, "tx": cam.tx, "ty": cam.ty}


def _camera_from_dict(d: dict) -> Camera:
    return Camera(float(d["s"]), float(d["tx"]), float(d["ty"]))


def scene_to_dict(scene: Scene) -> dict:
    gt = None
    if scene.gt is not None:
        gt = {
            "rots": _listify(scene.gt.rots),
            "beta": _listify(scene.gt.beta),
            "gamma": _listify(scene.gt.gamma),
            "camera": _camera_to_dict(scene.gt.camera),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scene",
        "canvas": int(scene.canvas),
        "j2d": _listify(scene.j2d),
        "vis": np.asarray(scene.vis, dtype=int).tolist(),
        "gt": gt,
    }


def scene_from_dict(data: dict) -> Scene:
    _expect_kind(data, "scene")
    gt = None
    if data.get("gt") is not None:
        g = data["gt"]
        gt = GroundTruth(
            rots=np.asarray(g["rots"], dtype=float),
            beta=np.asarray(g["beta"], dtype=float),
            gamma=np.asarray(g["gamma"], dtype=float),
            camera=_camera_from_dict(g["camera"]),
        )
    return Scene(
        j2d=np.asarray(data["j2d"], dtype=float),
        vis=np.asarray(data["vis"], dtype=np.int8),
        canvas=int(data["canvas"]),
        gt=gt,
    )


def distribution_to_dict(dist: BodyDistribution) -> dict:
    context = None
    if dist.parent_context is not None:
        context = [
            [
                {
                    "joint": p.joint,
                    "u": _listify(p.u),
                    "s": _listify(p.s),
                    "mode": _listify(p.mode),
                }
                for p in chain
            ]
            for chain in dist.parent_context
        ]
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "body_distribution",
        "joints": [_listify(mf.f) for mf in dist.joints],
        "shape": {"mu": _listify(dist.shape.mu), "sigma2": _listify(dist.shape.sigma2)},
        "gamma": _listify(dist.gamma),
        "camera": _camera_to_dict(dist.camera),
        "mode_flag": dist.mode_flag,
        "parent_context": context,
    }


def distribution_from_dict(data: dict) -> BodyDistribution:
    _expect_kind(data, "body_distribution")
    joints = tuple(MatrixFisher(np.asarray(f, dtype=float)) for f in data["joints"])
    shape = ShapeDist(
        np.asarray(data["shape"]["mu"], dtype=float),
        np.asarray(data["shape"]["sigma2"], dtype=float),
    )
    context = None
    if data.get("parent_context") is not None:
        context = tuple(
            tuple(
                ParentSummary(
                    joint=int(p["joint"]),
                    u=np.asarray(p["u"], dtype=float),
                    s=np.asarray(p["s"], dtype=float),
                    mode=np.asarray(p["mode"], dtype=float),
                )
                for p in chain
            )
            for chain in data["parent_context"]
        )
    return BodyDistribution(
        joints=joints,
        shape=shape,
        gamma=np.asarray(data["gamma"], dtype=float),
        camera=_camera_from_dict(data["camera"]),
        mode_flag=data["mode_flag"],
        parent_context=context,
    )


def rotation_samples_to_dict(rotations) -> dict:
    """Row-major 9-vectors, one per sample."""
    rotations = np.asarray(rotations, dtype=float)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "rotation_samples",
        "samples": [r.reshape(9).tolist() for r in rotations],
    }


def rotation_samples_from_dict(data: dict) -> np.ndarray:
    _expect_kind(data, "rotation_samples")
    return np.asarray(data["samples"], dtype=float).reshape(-1, 3, 3)


def write_trace_csv(trace, path) -> None:
    """One row per optimizer step: totals, term values, gradient norm."""
    lines = ["step,total," + ",".join(TERM_NAMES) + ",grad_norm,accepted"]
    for row in trace:
        cells = [str(row.step), repr(row.total)]
        cells += [repr(float(row.terms[name])) for name in TERM_NAMES]
        cells += [repr(float(row.grad_norm)), str(int(row.accepted))]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path) -> list:
    """Rows back as dicts (numbers parsed); the inverse of write_trace_csv
    up to LossReport reconstruction."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = text[0].split(",")
    rows = []
    for line in text[1:]:
        cells = line.split(",")
        row = dict(zip(header, cells))
        rows.append(
            {
                "step": int(row["step"]),
                "total": float(row["total"]),
                "terms": {name: float(row[name]) for name in TERM_NAMES},
                "grad_norm": float(row["grad_norm"]),
                "accepted": bool(int(row["accepted"])),
            }
        )
    return rows


def write_uncertainty_csv(values, path) -> None:
    values = np.asarray(values, dtype=float)
    lines = ["vertex,uncertainty"]
    lines += [f"{i},{repr(float(v))}" for i, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_obj(vertices, faces, path) -> None:
    """Wavefront OBJ with 1-based triangle indices."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    lines = [f"v {repr(v[0])} {repr(v[1])} {repr(v[2])}" for v in vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
