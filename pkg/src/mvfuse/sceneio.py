"""Scene, result and run-config persistence.

Scenes and results use the checksummed record container shared with model
and head files (see ``docs/formats.md``). Run configs are flat JSON objects.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import container
from .bodymodel import PoseParams, model_fields, model_from_fields
from .camera import CameraModel, Extrinsics, Intrinsics
from .losses import LossWeights
from .metrics import MetricReport, evaluate, report_dict
from .optimizer import TTAConfig
from .prior import head_fields, head_from_fields
from .scene import Detection2D, GroundTruth, Scene

SCENE_MAGIC = "MVFUSE-SCENE-v1"
RESULT_MAGIC = "MVFUSE-RESULT-v1"
EXPORT_FORMATS = ("records", "summary")


class ConfigError(ValueError):
    """Unknown key or invalid value in a run config."""


# --------------------------------------------------------------------------
# scenes


def _camera_fields(i, cam):
    p = f"cam{i}."
    out = {p + "kind": cam.kind, p + "intrinsics": cam.intrinsics.as_array(),
           p + "transl": np.asarray(cam.transl, dtype=float)}
    if cam.extrinsics is not None:
        out[p + "R"] = cam.extrinsics.R
        out[p + "t"] = cam.extrinsics.t
    if cam.weak_params is not None:
        out[p + "weak"] = np.asarray(cam.weak_params, dtype=float)
    return out


def _camera_from_fields(f, i):
    p = f"cam{i}."
    ext = Extrinsics(f[p + "R"], f[p + "t"]) if p + "R" in f else None
    weak = tuple(float(x) for x in f[p + "weak"]) if p + "weak" in f else None
    return CameraModel(f[p + "kind"], Intrinsics(*(float(x) for x in f[p + "intrinsics"])),
                       ext, weak, f[p + "transl"])


def scene_fields(scene):
    f = {"n_views": np.int64(scene.n_views), "calibrated": np.int64(scene.calibrated)}
    f.update(model_fields(scene.model, "model."))
    f.update(head_fields(scene.head, "head."))
    for i, (cam, det) in enumerate(zip(scene.cameras, scene.detections)):
        f.update(_camera_fields(i, cam))
        f[f"det{i}.kp"] = det.kp
        f[f"det{i}.ana"] = det.ana
    f["tokens"] = scene.tokens
    if scene.gt is not None:
        gt = scene.gt
        f.update({"gt.pose": gt.pose.rotmats, "gt.beta": gt.beta, "gt.joints3d": gt.joints3d,
                  "gt.vertices": gt.vertices, "gt.pelvis": gt.pelvis})
    plain = {}
    for key, value in scene.meta.items():
        if isinstance(value, np.ndarray):
            f["meta." + key] = value
        else:
            plain[key] = value
    f["meta_json"] = json.dumps(plain, sort_keys=True)
    return f


def scene_from_fields(f):
    try:
        n = int(f["n_views"])
        model = model_from_fields(f, "model.")
        head = head_from_fields(f, "head.")
        cameras = tuple(_camera_from_fields(f, i) for i in range(n))
        detections = tuple(Detection2D(f[f"det{i}.kp"], f[f"det{i}.ana"]) for i in range(n))
        tokens = f["tokens"]
        calibrated = bool(f["calibrated"])
        gt = None
        if "gt.pose" in f:
            gt = GroundTruth(PoseParams.from_rotmats(f["gt.pose"]), f["gt.beta"],
                             f["gt.joints3d"], f["gt.vertices"], f["gt.pelvis"])
        meta = json.loads(f["meta_json"])
    except KeyError as exc:
        raise container.MalformedHeaderError(f"scene record missing: {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, container.FormatError):
            raise
        raise container.InvariantError(f"invalid scene contents: {exc}") from exc
    for key, value in f.items():
        if key.startswith("meta.") and key != "meta_json":
            meta[key[len("meta."):]] = value
    if tokens.shape[0] != n:
        raise container.InvariantError("one prior token per view required")
    return Scene(model, head, cameras, detections, tokens, calibrated, gt, meta)


def save_scene(scene, path):
    container.write(path, SCENE_MAGIC, scene_fields(scene))


def load_scene(path):
    return scene_from_fields(container.read(path, SCENE_MAGIC))


# --------------------------------------------------------------------------
# results


def save_result(result, path, calibrated):
    """Final body of a TTA run plus its loss trace, for later evaluation."""
    names = sorted(result.loss_trace[0]) if result.loss_trace else []
    f = {
        "calibrated": np.int64(calibrated),
        "final_pose": result.final_pose,
        "final_beta": result.final_beta,
        "final_joints": result.final_joints,
        "final_vertices": result.final_vertices,
        "trace_names": json.dumps(names),
        "loss_trace": np.array([[e[k] for k in names] for e in result.loss_trace]),
        "lr_trace": np.array(result.lr_trace, dtype=float),
    }
    container.write(path, RESULT_MAGIC, f)


def load_result(path):
    """Dict with the stored arrays and the loss trace as a list of dicts."""
    f = container.read(path, RESULT_MAGIC)
    try:
        names = json.loads(f["trace_names"])
        out = {k: f[k] for k in ("final_pose", "final_beta", "final_joints", "final_vertices",
                                 "lr_trace")}
        out["calibrated"] = bool(f["calibrated"])
        out["loss_trace"] = [dict(zip(names, map(float, row))) for row in f["loss_trace"]]
    except KeyError as exc:
        raise container.MalformedHeaderError(f"result record missing: {exc}") from exc
    return out


def evaluate_result(result, scene):
    """MetricReport of a stored result against the scene's ground truth."""
    from .optimizer import _detection_epe, _gt_frame

    if scene.gt is None:
        raise ValueError("scene has no ground-truth block")
    gt_joints, gt_verts = _gt_frame(scene, result["calibrated"])
    return evaluate(result["final_joints"], gt_joints, result["final_vertices"], gt_verts,
                    _detection_epe(scene))


def trace_records(result):
    """One dict per recorded step: losses, learning rate and metrics."""
    rows = []
    for t, losses in enumerate(result.loss_trace):
        row = {"step": t, "lr": result.lr_trace[t - 1] if t > 0 else 0.0}
        row.update({f"loss_{k}": float(v) for k, v in losses.items()})
        if t < len(result.metric_trace):
            row.update(report_dict(result.metric_trace[t]))
        rows.append(row)
    return rows


def export_result(result, path, format="records"):
    """Write JSON lines (one per step) or a one-object MetricReport summary."""
    if format not in EXPORT_FORMATS:
        raise ValueError(f"unknown export format {format!r}; choose from {EXPORT_FORMATS}")
    if format == "records":
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace_records(result))
    else:
        report = result.final_report
        if report is None:
            raise ValueError("result has no metrics (scene without ground truth)")
        text = json.dumps(report_dict(report), sort_keys=True) + "\n"
    Path(path).write_text(text)


# --------------------------------------------------------------------------
# run configs


_WEIGHT_KEYS = tuple(f.name for f in dataclasses.fields(LossWeights))
_TTA_KEYS = tuple(f.name for f in dataclasses.fields(TTAConfig) if f.name != "weights")
PATH_KEYS = ("scene", "out_dir")
CONFIG_KEYS = _TTA_KEYS + _WEIGHT_KEYS + PATH_KEYS


def config_to_dict(config, paths=None):
    d = {k: getattr(config, k) for k in _TTA_KEYS}
    d["virtual_components"] = list(d["virtual_components"])
    d.update(dataclasses.asdict(config.weights))
    d.update(paths or {})
    return d


def config_from_dict(d, base=None):
    """Build (TTAConfig, paths) from a flat mapping; unknown keys are rejected."""
    unknown = sorted(set(d) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = base or TTAConfig()
    try:
        weights = dataclasses.replace(base.weights, **{k: float(d[k]) for k in _WEIGHT_KEYS if k in d})
        tta = {k: d[k] for k in _TTA_KEYS if k in d}
        if "virtual_components" in tta:
            tta["virtual_components"] = tuple(tta["virtual_components"])
        config = dataclasses.replace(base, weights=weights, **tta)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config, {k: d[k] for k in PATH_KEYS if k in d}


def load_config(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return d


def save_config(config, path, paths=None):
    Path(path).write_text(json.dumps(config_to_dict(config, paths), indent=2, sort_keys=True) + "\n")


__all__ = [
    "SCENE_MAGIC", "RESULT_MAGIC", "ConfigError", "MetricReport", "save_scene", "load_scene",
    "save_result", "load_result", "evaluate_result", "export_result", "trace_records",
    "config_from_dict", "config_to_dict", "load_config", "save_config",
]
