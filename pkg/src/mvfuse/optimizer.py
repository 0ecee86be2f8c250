"""Test-time adaptation loop.

Each step first updates every view's optimizable vector with the 2D,
consistency and regularization losses, then updates the virtual view with its
own consistency loss. Gradients are clipped per variable and the learning rate
ramps up linearly over the warm-up steps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fusion, losses
from .bodymodel import PELVIS, pose_body
from .camera import project
from .losses import LossWeights, ViewState
from .metrics import evaluate
from .synth import gt_in_view

COMPONENTS = ("learned_token", "smpl_params")
VIRTUAL_COMPONENTS = ("pose", "orientation", "shape")


class NumericalAbort(RuntimeError):
    def __init__(self, step, term):
        super().__init__(f"non-finite {term} at step {step}")
        self.step = step
        self.term = term


@dataclass(frozen=True)
class TTAConfig:
    steps: int = 200
    warmup_steps: int = 20
    clip_norm: float = 0.1
    eta: float = 6e-2
    eta_virtual: float = 1e-2
    weights: LossWeights = field(default_factory=LossWeights)
    consistency_mode: str = "pairwise"
    component: str = "learned_token"
    virtual_components: tuple = VIRTUAL_COMPONENTS
    calibrated: Optional[bool] = None  # None: follow the scene
    strategy: str = "weighted"
    optimizer: str = "adam"
    virtual_optimizer: Optional[str] = None  # None: same as ``optimizer``

    def __post_init__(self):
        if self.steps < 0 or self.warmup_steps < 0 or self.warmup_steps > self.steps:
            raise ValueError("need steps >= 0 and 0 <= warmup_steps <= steps")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if not (self.eta > 0 and self.eta_virtual > 0):
            raise ValueError("learning rates must be positive")
        if self.consistency_mode not in ("pairwise", "star"):
            raise ValueError(f"unknown consistency_mode {self.consistency_mode!r}")
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        comps = tuple(self.virtual_components)
        if any(c not in VIRTUAL_COMPONENTS for c in comps):
            raise ValueError(f"virtual_components must be a subset of {VIRTUAL_COMPONENTS}")
        object.__setattr__(self, "virtual_components", comps)
        if self.strategy not in fusion.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        for name in ("optimizer", "virtual_optimizer"):
            value = getattr(self, name)
            if value not in ("gd", "adam") and not (name == "virtual_optimizer" and value is None):
                raise ValueError(f"unknown {name} {value!r}")


@dataclass
class TTAResult:
    views: list
    virtual: Optional[losses.VirtualView]
    loss_trace: list
    metric_trace: list
    lr_trace: list
    diagnostics: dict
    final_pose: np.ndarray  # (J, 3, 3), root in the evaluation frame
    final_beta: np.ndarray
    final_joints: np.ndarray  # pelvis-centred
    final_vertices: np.ndarray

    @property
    def final_report(self):
        return self.metric_trace[-1] if self.metric_trace else None


def clip_gradient(g, max_norm):
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    g = np.asarray(g, dtype=float)
    n = np.linalg.norm(g)
    if n > max_norm:
        return g * (max_norm / n)
    return g


def warmup_ramp(t, warmup_steps):
    """Multiplier on the learning rate at step ``t`` (1-based)."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, t / warmup_steps)


class _Stepper:
    """Plain descent or Adam on one variable."""

    def __init__(self, kind, size):
        self.kind = kind
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def delta(self, g, lr):
        if self.kind == "gd":
            return -lr * g
        self.t += 1
        b1, b2 = 0.9, 0.999
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return -lr * mhat / (np.sqrt(vhat) + 1e-8)


def _virtual_mask(model, components):
    mask = np.zeros(model.n_joints * 6 + model.n_betas)
    if "orientation" in components:
        mask[:6] = 1.0
    if "pose" in components:
        mask[6 : model.n_joints * 6] = 1.0
    if "shape" in components:
        mask[model.n_joints * 6 :] = 1.0
    return mask


def _scene_views(scene, head, kind, calibrated):
    views = []
    for cam, det, z in zip(scene.cameras, scene.detections, scene.tokens):
        if not calibrated and cam.extrinsics is not None:
            cam = dataclasses.replace(cam, extrinsics=None)
        params = z if kind == "token" else head.W @ z + head.b
        views.append(ViewState(scene.model, head, params, cam, det, kind))
    return views


def _check(value, step, term):
    if not np.all(np.isfinite(value)):
        raise NumericalAbort(step, term)


def _view_losses(views, weights, mode, calibrated, step, diag):
    values = {"2d": 0.0, "con": 0.0, "reg": 0.0}
    cots = [v.new_cot() for v in views]
    active = 0
    for view, cot in zip(views, cots):
        value, c, n = losses._terms_2d(view, weights)
        active += n
        values["2d"] += value
        cot.add(c)
        value, c = losses._terms_reg(view, weights)
        values["reg"] += value
        cot.add(c)
    if len(views) >= 2:
        terms = losses._terms_star if mode == "star" else losses._terms_pairwise
        value, cs = terms(views, weights, calibrated)
        values["con"] = value
        for cot, c in zip(cots, cs):
            cot.add(c)
    for name, value in values.items():
        _check(value, step, f"loss_{name}")
    grads = [v.backprop(c) for v, c in zip(views, cots)]
    for g in grads:
        _check(g, step, "view gradient")
    if active == 0:
        diag["no_active_detections"] = True
    return values, grads


def _output_body(model, views, virtual, calibrated):
    """Current reconstruction: the virtual view, else the mean of the views."""
    if virtual is None:
        pairs = [v.decoded for v in views]
        ext = [v.camera.extrinsics for v in views] if calibrated else None
        virtual = fusion.init_strategy(pairs, "averaged", ext)
    R, beta = virtual.pose.rotmats, virtual.shape
    posed = pose_body(model, R, beta)
    return R, beta, posed.tw - posed.Jr[0], posed.verts - posed.Jr[0]


def _gt_frame(scene, calibrated):
    if calibrated:
        gt = scene.gt
        return gt.joints3d - gt.pelvis, gt.vertices - gt.pelvis
    return gt_in_view(scene, 0)


def _detection_epe(scene):
    """Mean pixel error of the confident detected keypoints against the truth."""
    if scene.gt is None or "view_rotations" not in scene.meta:
        return 0.0
    errs = []
    for i, (cam, det) in enumerate(zip(scene.cameras, scene.detections)):
        _, verts = gt_in_view(scene, i)
        kp = project(cam, scene.model.kp_regressor @ (verts + cam.transl), in_camera_frame=True)
        mask = det.kp[:, 2] > losses.CONF_THRESHOLD
        if np.any(mask):
            errs.append(np.linalg.norm(kp[mask] - det.kp[mask, :2], axis=1))
    return float(np.concatenate(errs).mean()) if errs else 0.0


def run_tta(scene, head=None, config=TTAConfig()):
    head = head if head is not None else scene.head
    calibrated = scene.calibrated if config.calibrated is None else config.calibrated
    if calibrated and not all(c.extrinsics is not None for c in scene.cameras):
        raise ValueError("calibrated mode requested but the scene has no extrinsics")
    model = scene.model
    kind = "token" if config.component == "learned_token" else "smpl"
    views = _scene_views(scene, head, kind, calibrated)
    weights = config.weights
    diag = {"clip_events": 0, "virtual_clip_events": 0, "no_active_detections": False,
            "masked_detections": [int(np.sum(d.kp[:, 2] <= losses.CONF_THRESHOLD)
                                      + np.sum(d.ana[:, 2] <= losses.CONF_THRESHOLD))
                                  for d in scene.detections]}

    pairs = [v.decoded for v in views]
    ext = [v.camera.extrinsics for v in views] if calibrated else None
    virtual = fusion.init_strategy(pairs, config.strategy, ext)
    mask = _virtual_mask(model, config.virtual_components)
    if virtual is not None and not calibrated:
        mask[:6] = 0.0  # view-specific root has no shared frame

    gt_joints = gt_verts = None
    epe_px = 0.0
    if scene.gt is not None:
        gt_joints, gt_verts = _gt_frame(scene, calibrated)
        epe_px = _detection_epe(scene)

    loss_trace, metric_trace, lr_trace = [], [], []

    def record(values, virtual_value):
        entry = dict(values)
        entry["virtual"] = virtual_value
        entry["total"] = values["2d"] + values["con"] + values["reg"] + virtual_value
        loss_trace.append(entry)
        if gt_joints is not None:
            _, _, joints, verts = _output_body(model, views, virtual, calibrated)
            metric_trace.append(evaluate(joints, gt_joints, verts, gt_verts, epe_px, PELVIS))

    def virtual_loss(step, with_grad=True):
        if virtual is None:
            return 0.0, None
        value, grad, _ = losses._virtual_value_grad(model, virtual, views, weights, calibrated,
                                                    with_grad)
        _check(value, step, "loss_virtual")
        if with_grad:
            _check(grad, step, "virtual gradient")
        return value, grad

    values, grads = _view_losses(views, weights, config.consistency_mode, calibrated, 0, diag)
    record(values, virtual_loss(0, False)[0])

    steppers = [_Stepper(config.optimizer, v.params.size) for v in views]
    vstepper = _Stepper(config.virtual_optimizer or config.optimizer, mask.size)
    for t in range(1, config.steps + 1):
        ramp = warmup_ramp(t, config.warmup_steps)
        lr_trace.append(config.eta * ramp)
        for view, g, st in zip(views, grads, steppers):
            if np.linalg.norm(g) > config.clip_norm:
                diag["clip_events"] += 1
            view.set_params(view.params + st.delta(clip_gradient(g, config.clip_norm), config.eta * ramp))
        if virtual is not None:
            _, vg = virtual_loss(t)
            vg = vg * mask
            if np.linalg.norm(vg) > config.clip_norm:
                diag["virtual_clip_events"] += 1
            step = vstepper.delta(clip_gradient(vg, config.clip_norm), config.eta_virtual * ramp)
            virtual.params = virtual.params + step * mask
        values, grads = _view_losses(views, weights, config.consistency_mode, calibrated, t, diag)
        record(values, virtual_loss(t, False)[0])

    R, beta, joints, verts = _output_body(model, views, virtual, calibrated)
    return TTAResult(views, virtual, loss_trace, metric_trace, lr_trace, diag, R, beta, joints, verts)


def optimize_smpl_direct(scene, config=TTAConfig()):
    """Same loop, optimizing each view's raw 6D pose and shape directly."""
    return run_tta(scene, scene.head, dataclasses.replace(config, component="smpl_params"))
