"""Command-line interface.

Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
failures (sampler stall, optimization failure, concentration overflow) and
on a failed selftest. Every command that writes files also writes a
``<output>.manifest.json`` recording the command, resolved configuration,
seed, input/output paths with content hashes, wall time, and library
version. When ``--seed`` is omitted a fresh seed is drawn from OS entropy
and recorded in the manifest so the run can be reproduced.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import report_lines, run_report
from .body import SceneConfig, generate_scene, make_toy_model, per_vertex_uncertainty, pose_body
from .errors import (
    ConcentrationOverflowError,
    InvalidArgumentError,
    KinefisherError,
    OptimizationFailureError,
    SamplerStallError,
)
from .fitting import FitConfig, fit_to_observation
from .matrix_fisher import MatrixFisher, mle_fit
from .rng import RandomTree
from .sampler import sample_matrix_fisher_many
from . import serialize as ser

__all__ = ["dispatch", "main"]

_NUMERICAL_ERRORS = (SamplerStallError, OptimizationFailureError, ConcentrationOverflowError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); route to exit 1
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="kinefisher", description=__doc__)
    parser.add_argument("--version", action="version", version=f"kinefisher {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    model = sub.add_parser("model", help="body model commands")
    model_sub = model.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    make = model_sub.add_parser("make", help="build the articulated toy body model")
    make.add_argument("--joints", type=int, default=16)
    make.add_argument("--verts-per-bone", type=int, default=12)
    make.add_argument("--seed", type=int, default=None)
    make.add_argument("-o", "--output", required=True)

    scene = sub.add_parser("scene", help="synthetic scene commands")
    scene_sub = scene.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    gen = scene_sub.add_parser("generate", help="render one synthetic 2D observation")
    gen.add_argument("--model", default=None, help="body model JSON (default: built-in toy model)")
    gen.add_argument("--canvas", type=int, default=256)
    gen.add_argument("--no-noise", action="store_true")
    gen.add_argument("--no-dropout", action="store_true")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("-o", "--output", required=True)

    fit = sub.add_parser("fit", help="fit a body distribution to one scene")
    fit.add_argument("--scene", required=True)
    fit.add_argument("--model", default=None)
    fit.add_argument("--mode", choices=["independent", "hierarchical"], default="independent")
    fit.add_argument("--steps", type=int, default=None)
    fit.add_argument("--samples", type=int, default=None, help="Monte-Carlo samples per step")
    fit.add_argument("--kl-weight", type=float, default=None)
    fit.add_argument("--quadrature-order", type=int, default=None)
    fit.add_argument("--no-sample-loss", action="store_true")
    fit.add_argument("--no-polish", action="store_true")
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--trace", default=None, help="write the per-step loss trace CSV here")
    fit.add_argument("-o", "--output", required=True)

    mf = sub.add_parser("mf", help="single matrix-Fisher distribution commands")
    mf_sub = mf.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    sample = mf_sub.add_parser("sample", help="draw rotations")
    _add_mf_param_args(sample)
    sample.add_argument("--n", type=int, default=1000)
    sample.add_argument("--seed", type=int, default=None)
    sample.add_argument("-o", "--output", required=True)
    ev = mf_sub.add_parser("eval", help="normalizer, moments, and optional log-density")
    _add_mf_param_args(ev)
    ev.add_argument("--r", default=None, help="rotation (9 row-major numbers) to evaluate")
    ev.add_argument("-o", "--output", default=None, help="write JSON here instead of stdout")
    mle = mf_sub.add_parser("mle", help="moment-matching fit from a sample file")
    mle.add_argument("--samples", required=True, help="rotation_samples JSON")
    mle.add_argument("-o", "--output", default=None)

    unc = sub.add_parser("uncertainty", help="per-vertex positional spread of a distribution")
    unc.add_argument("--model", required=True)
    unc.add_argument("--dist", required=True)
    unc.add_argument("--samples", type=int, default=100)
    unc.add_argument("--seed", type=int, default=None)
    unc.add_argument("-o", "--output", required=True)

    export = sub.add_parser("export", help="mesh export commands")
    export_sub = export.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    obj = export_sub.add_parser("obj", help="write a Wavefront OBJ mesh")
    obj.add_argument("--model", required=True)
    obj.add_argument("--dist", default=None, help="pose at this distribution's mode body")
    obj.add_argument("--scene", default=None, help="pose at this scene's ground truth")
    obj.add_argument("-o", "--output", required=True)

    selftest = sub.add_parser("selftest", help="run the numbered acceptance criteria")
    selftest.add_argument("--seed", type=int, default=None)
    selftest.add_argument("--only", default=None, help="comma-separated criterion indices")
    selftest.add_argument("-o", "--output", default="selftest_report.json")

    return parser


def _add_mf_param_args(p) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--s", default=None, help="three singular values, e.g. 2,1,0.5")
    group.add_argument("--f", default=None, help="nine row-major parameter-matrix entries")


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise _UsageError(f"could not parse {what}: {exc}") from None
    if vals.size != count:
        raise _UsageError(f"{what} needs {count} comma-separated numbers, got {vals.size}")
    return vals


def _mf_from_args(args) -> MatrixFisher:
    if args.s is not None:
        return MatrixFisher(np.diag(_parse_floats(args.s, 3, "--s")))
    return MatrixFisher(_parse_floats(args.f, 9, "--f").reshape(3, 3))


def _resolve_seed(args) -> tuple[int, str]:
    if getattr(args, "seed", None) is None:
        return int.from_bytes(os.urandom(4), "little"), "entropy"
    return int(args.seed), "flag"


def _load_model(path: str | None):
    if path is None:
        return make_toy_model(), {}
    return ser.model_from_dict(ser.load_json(path)), {"model": path}


def _write_manifest(command, config, seed, seed_source, inputs, outputs, started) -> None:
    manifest = {
        "schema_version": ser.SCHEMA_VERSION,
        "kind": "run_manifest",
        "command": command,
        "config": config,
        "seed": seed,
        "seed_source": seed_source,
        "inputs": {name: {"path": p, "sha256": ser.sha256_file(p)} for name, p in inputs.items()},
        "outputs": {
            name: {"path": p, "sha256": ser.sha256_file(p)} for name, p in outputs.items()
        },
        "wall_time_s": time.perf_counter() - started,
        "version": __version__,
    }
    main_output = next(iter(outputs.values()))
    ser.dump_json(manifest, f"{main_output}.manifest.json")


def _cmd_model_make(args, started) -> int:
    seed, source = _resolve_seed(args)
    model = make_toy_model(args.joints, args.verts_per_bone, seed)
    ser.dump_json(ser.model_to_dict(model), args.output)
    config = {"joints": args.joints, "verts_per_bone": args.verts_per_bone}
    _write_manifest("model make", config, seed, source, {}, {"model": args.output}, started)
    return 0


def _cmd_scene_generate(args, started) -> int:
    seed, source = _resolve_seed(args)
    model, inputs = _load_model(args.model)
    config = SceneConfig(canvas=args.canvas, noise=not args.no_noise, dropout=not args.no_dropout)
    scene = generate_scene(model, config, RandomTree(seed).child("scene"))
    ser.dump_json(ser.scene_to_dict(scene), args.output)
    _write_manifest(
        "scene generate", asdict(config), seed, source, inputs, {"scene": args.output}, started
    )
    return 0


def _fit_config_from_args(args, seed: int) -> FitConfig:
    overrides = {"mode": args.mode, "seed": seed}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.samples is not None:
        overrides["mc_samples"] = args.samples
    if args.kl_weight is not None:
        overrides["kl_weight"] = args.kl_weight
    if args.quadrature_order is not None:
        overrides["quadrature_order"] = args.quadrature_order
    if args.no_sample_loss:
        overrides["sample_loss"] = False
    if args.no_polish:
        overrides["polish"] = False
    return FitConfig(**overrides)


def _cmd_fit(args, started) -> int:
    seed, source = _resolve_seed(args)
    model, inputs = _load_model(args.model)
    inputs["scene"] = args.scene
    scene = ser.scene_from_dict(ser.load_json(args.scene))
    cfg = _fit_config_from_args(args, seed)
    dist, trace = fit_to_observation(model, scene, cfg)
    ser.dump_json(ser.distribution_to_dict(dist), args.output)
    outputs = {"distribution": args.output}
    if args.trace is not None:
        ser.write_trace_csv(trace, args.trace)
        outputs["trace"] = args.trace
    _write_manifest("fit", asdict(cfg), seed, source, inputs, outputs, started)
    return 0


def _cmd_mf_sample(args, started) -> int:
    seed, source = _resolve_seed(args)
    if args.n < 1:
        raise _UsageError("--n must be positive")
    d = _mf_from_args(args)
    draws = sample_matrix_fisher_many(d, args.n, RandomTree(seed).child("mf-sample"))
    ser.dump_json(ser.rotation_samples_to_dict(draws), args.output)
    config = {"s": args.s, "f": args.f, "n": args.n}
    _write_manifest("mf sample", config, seed, source, {}, {"samples": args.output}, started)
    return 0


def _cmd_mf_eval(args, started) -> int:
    d = _mf_from_args(args)
    try:
        mode = d.mode().tolist()
    except KinefisherError:
        mode = None
    payload = {
        "schema_version": ser.SCHEMA_VERSION,
        "kind": "mf_eval",
        "log_c": d.log_c,
        "concentrations": d.concentrations().tolist(),
        "mode": mode,
        "expected_rotation": d.expected_rotation().tolist(),
        "kl_to_uniform": d.kl_to_uniform(),
    }
    if args.r is not None:
        r = _parse_floats(args.r, 9, "--r").reshape(3, 3)
        payload["log_pdf"] = d.log_pdf(r)
    if args.output is None:
        sys.stdout.write(ser.json_bytes(payload).decode("utf-8"))
        return 0
    ser.dump_json(payload, args.output)
    config = {"s": args.s, "f": args.f, "r": args.r}
    _write_manifest("mf eval", config, 0, "none", {}, {"eval": args.output}, started)
    return 0


def _cmd_mf_mle(args, started) -> int:
    draws = ser.rotation_samples_from_dict(ser.load_json(args.samples))
    fit = mle_fit(draws)
    payload = {
        "schema_version": ser.SCHEMA_VERSION,
        "kind": "matrix_fisher",
        "f": fit.f.tolist(),
        "singular_values": fit.svd.s.tolist(),
        "log_c": fit.log_c,
    }
    if args.output is None:
        sys.stdout.write(ser.json_bytes(payload).decode("utf-8"))
        return 0
    ser.dump_json(payload, args.output)
    _write_manifest(
        "mf mle", {"samples": args.samples}, 0, "none",
        {"samples": args.samples}, {"fit": args.output}, started,
    )
    return 0


def _cmd_uncertainty(args, started) -> int:
    seed, source = _resolve_seed(args)
    model = ser.model_from_dict(ser.load_json(args.model))
    dist = ser.distribution_from_dict(ser.load_json(args.dist))
    values = per_vertex_uncertainty(
        model, dist, k=args.samples, rng=RandomTree(seed).child("uncertainty")
    )
    ser.write_uncertainty_csv(values, args.output)
    _write_manifest(
        "uncertainty", {"samples": args.samples}, seed, source,
        {"model": args.model, "dist": args.dist}, {"uncertainty": args.output}, started,
    )
    return 0


def _cmd_export_obj(args, started) -> int:
    if args.dist is not None and args.scene is not None:
        raise _UsageError("pass at most one of --dist / --scene")
    model = ser.model_from_dict(ser.load_json(args.model))
    inputs = {"model": args.model}
    if args.dist is not None:
        dist = ser.distribution_from_dict(ser.load_json(args.dist))
        rots = np.stack([mf.svd.u @ mf.svd.v.T for mf in dist.joints])
        verts, _ = pose_body(model, rots, dist.gamma, dist.shape.mu)
        inputs["dist"] = args.dist
    elif args.scene is not None:
        scene = ser.scene_from_dict(ser.load_json(args.scene))
        if scene.gt is None:
            raise InvalidArgumentError("scene has no ground truth to pose at")
        verts, _ = pose_body(model, scene.gt.rots, scene.gt.gamma, scene.gt.beta)
        inputs["scene"] = args.scene
    else:
        verts = model.template
    ser.write_obj(verts, model.faces, args.output)
    _write_manifest("export obj", {}, 0, "none", inputs, {"mesh": args.output}, started)
    return 0


def _cmd_selftest(args, started) -> int:
    seed, source = _resolve_seed(args)
    only = None
    if args.only is not None:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise _UsageError("--only takes comma-separated criterion indices") from None
    report = run_report(seed, only=only)
    lines = report_lines(report)
    ser.dump_json(report, args.output)
    text_path = str(Path(args.output).with_suffix(".txt"))
    Path(text_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(
        "selftest", {"only": only}, seed, source, {},
        {"report": args.output, "report_text": text_path}, started,
    )
    sys.stdout.write("\n".join(lines) + "\n")
    return 0 if report["passed"] else 2


_HANDLERS = {
    ("model", "make"): _cmd_model_make,
    ("scene", "generate"): _cmd_scene_generate,
    ("fit", None): _cmd_fit,
    ("mf", "sample"): _cmd_mf_sample,
    ("mf", "eval"): _cmd_mf_eval,
    ("mf", "mle"): _cmd_mf_mle,
    ("uncertainty", None): _cmd_uncertainty,
    ("export", "obj"): _cmd_export_obj,
    ("selftest", None): _cmd_selftest,
}


def dispatch(argv=None) -> int:
    """Parse and run one command; returns the process exit code."""
    started = time.perf_counter()
    try:
        args = _build_parser().parse_args(argv)
        handler = _HANDLERS[(args.command, getattr(args, "subcommand", None))]
        return handler(args, started)
    except _UsageError as exc:
        print(f"kinefisher: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"kinefisher: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KinefisherError) as exc:
        print(f"kinefisher: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
