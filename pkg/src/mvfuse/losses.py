"""Test-time losses: 2D reprojection, cross-view consistency (pairwise and
star), regularization toward the initial predictions, and the virtual-view
consistency loss.

Every ``||.||_2`` term is the mean Euclidean norm over rows (keypoints, joints
or vertices), so weights do not scale with point counts. Gradients are exact
reverse-mode pullbacks through projection, skinning, forward kinematics,
Gram-Schmidt and the linear head.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, fields
from itertools import combinations

import numpy as np

from .bodymodel import PoseParams, MeshResult, pose_body, pose_body_vjp
from .camera import project_with_jacobian
from .prior import body_to_vector, decode_vector, vector_to_body, vector_to_body_vjp
from .rotmath import rotmat_to_6d

CONF_THRESHOLD = 0.9
# rows whose residual norm is below this are treated as exactly matched
NORM_DEADZONE = 1e-10


@dataclass(frozen=True)
class LossWeights:
    lambda_kp: float = 3e-1
    lambda_ana: float = 3e-1
    lambda_reg_orient: float = 3e1
    lambda_reg_pose: float = 1e-1
    lambda_reg_betas: float = 2e-2
    lambda_reg_vertice: float = 1e-2
    lambda_con_orient: float = 5.0
    lambda_con_pose: float = 5.0
    lambda_con_betas: float = 5.0
    lambda_con_vertice: float = 3e-1
    lambda_virtual_orient: float = 3e2
    lambda_virtual_pose: float = 1e1
    lambda_virtual_betas: float = 1.0
    lambda_virtual_vertice: float = 1e-1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be a finite nonnegative number, got {v}")


def mean_norm(diff):
    """Mean row norm of ``diff`` and its gradient.

    Rows inside the dead zone count as exact matches: they add nothing to
    the value or the gradient.
    """
    d = diff if diff.ndim == 2 else diff.reshape(1, -1)
    n = np.sqrt(np.einsum("ij,ij->i", d, d))
    live = n > NORM_DEADZONE
    scale = np.divide(1.0 / len(n), n, out=np.zeros_like(n), where=live)
    return float(n[live].sum() / len(n)), (d * scale[:, None]).reshape(diff.shape)


class Cot:
    """Cotangent on one view's decoded body and meshes."""

    __slots__ = ("dR", "dbeta", "du", "du_canon")

    def __init__(self, n_joints, n_betas, n_verts):
        self.dR = np.zeros((n_joints, 3, 3))
        self.dbeta = np.zeros(n_betas)
        self.du = np.zeros((n_verts, 3))
        self.du_canon = None

    def add(self, other):
        self.dR += other.dR
        self.dbeta += other.dbeta
        self.du += other.du
        if other.du_canon is not None:
            self.du_canon = other.du_canon.copy() if self.du_canon is None \
                else self.du_canon + other.du_canon
        return self


class ViewState:
    """One camera view: its optimizable vector, camera, detections and the
    current decode, plus a frozen snapshot of the step-0 prediction.

    ``kind`` is ``"token"`` (vector is the latent token, decoded through the
    head) or ``"smpl"`` (vector is the raw 24 x 6D + beta head output).
    """

    def __init__(self, model, head, params, camera, detection, kind="token"):
        if kind not in ("token", "smpl"):
            raise ValueError(f"unknown parameterization {kind!r}")
        self.model = model
        self.head = head
        self.camera = camera
        self.detection = detection
        self.kind = kind
        self.params = np.array(params, dtype=float)
        self.refresh()
        self.initial_snapshot = _Snapshot(self)

    @property
    def token(self):
        return self.params

    @property
    def calibrated(self):
        return self.camera.extrinsics is not None

    @property
    def decoded(self):
        return PoseParams.from_rotmats(self.R), self.beta.copy()

    @property
    def mesh(self):
        """Posed mesh in this camera's frame."""
        return MeshResult(self.u + self.camera.transl, self.posed.tw - self.posed.Jr[0] + self.camera.transl)

    def set_params(self, params):
        self.params = np.array(params, dtype=float)
        self.refresh()

    def refresh(self):
        self.y = decode_vector(self.head, self.params) if self.kind == "token" else self.params.copy()
        self.R, self.beta = vector_to_body(self.y)
        self.posed = pose_body(self.model, self.R, self.beta)
        self.u = self.posed.verts - self.posed.Jr[0]
        self.body6d = rotmat_to_6d(self.R[1:])
        self.root6d = rotmat_to_6d(self.R[0])
        if self.calibrated:
            Rext = self.camera.extrinsics.R
            self.world_root6d = rotmat_to_6d(Rext.T @ self.R[0])
            self.cmp_mesh = self.u @ Rext
            self.posed_canon = None
        else:
            self.world_root6d = None
            Rc = self.R.copy()
            Rc[0] = np.eye(3)
            self.posed_canon = pose_body(self.model, Rc, self.beta)
            self.cmp_mesh = self.posed_canon.verts - self.posed_canon.Jr[0]

    def new_cot(self):
        return Cot(self.model.n_joints, self.model.n_betas, self.model.n_verts)

    def cmp_pullback(self, cot, d_orient=None, d_body=None, d_beta=None, d_mesh=None):
        """Accumulate cotangents on the cross-view comparison quantities."""
        if d_orient is not None and self.calibrated:
            dM = np.stack([d_orient[:3], d_orient[3:], np.zeros(3)], axis=-1)
            cot.dR[0] += self.camera.extrinsics.R @ dM
        if d_body is not None:
            cot.dR[1:, :, 0] += d_body[:, :3]
            cot.dR[1:, :, 1] += d_body[:, 3:]
        if d_beta is not None:
            cot.dbeta += d_beta
        if d_mesh is not None:
            if self.calibrated:
                cot.du += d_mesh @ self.camera.extrinsics.R.T
            else:
                cot.du_canon = d_mesh.copy() if cot.du_canon is None else cot.du_canon + d_mesh
        return cot

    def backprop(self, cot):
        """Gradient of the cotangent's loss with respect to ``self.params``."""
        model = self.model
        dR = cot.dR.copy()
        dbeta = cot.dbeta.copy()
        if np.any(cot.du):
            gR, gb = pose_body_vjp(model, self.posed, d_verts=cot.du,
                                   d_root_rest=-cot.du.sum(axis=0))
            dR += gR
            dbeta += gb
        if cot.du_canon is not None and np.any(cot.du_canon):
            gR, gb = pose_body_vjp(model, self.posed_canon, d_verts=cot.du_canon,
                                   d_root_rest=-cot.du_canon.sum(axis=0))
            gR[0] = 0.0  # canonical root is fixed to identity
            dR += gR
            dbeta += gb
        dy = vector_to_body_vjp(self.y, dR, dbeta)
        if self.kind == "token":
            return self.head.W.T @ dy
        return dy


class _Snapshot:
    def __init__(self, view):
        self.params = view.params.copy()
        self.root6d = view.root6d.copy()
        self.body6d = view.body6d.copy()
        self.beta = view.beta.copy()
        self.u = view.u.copy()
        self.decoded = view.decoded
        self.mesh = view.mesh
        for arr in (self.params, self.root6d, self.body6d, self.beta, self.u):
            arr.setflags(write=False)


class VirtualView:
    """Optimizable aggregate body. ``params`` is the raw 24 x 6D + beta vector."""

    def __init__(self, params, orient_mode="world"):
        if orient_mode not in ("world", "per-view-free"):
            raise ValueError(f"unknown orient_mode {orient_mode!r}")
        self.params = np.array(params, dtype=float)
        self.orient_mode = orient_mode

    @classmethod
    def from_body(cls, pose, beta, orient_mode="world"):
        return cls(body_to_vector(pose, beta), orient_mode)

    @property
    def pose(self):
        return PoseParams.from_rotmats(vector_to_body(self.params)[0])

    @property
    def shape(self):
        return vector_to_body(self.params)[1]

    def copy(self):
        return VirtualView(self.params.copy(), self.orient_mode)


# --------------------------------------------------------------------------
# internal term builders: value plus per-view cotangents


def _terms_2d(view, weights):
    det = view.detection
    model = view.model
    verts = view.u + view.camera.transl
    cot = view.new_cot()
    total = 0.0
    active = 0
    parts = (
        (weights.lambda_kp, model.kp_regressor @ verts, det.kp, "kp"),
        (weights.lambda_ana, verts[model.landmark_indices], det.ana, "ana"),
    )
    for lam, pts, obs, which in parts:
        mask = obs[:, 2] > CONF_THRESHOLD
        if not np.any(mask):
            continue
        active += int(mask.sum())
        px, jac = project_with_jacobian(view.camera, pts[mask], in_camera_frame=True)
        value, g = mean_norm(px - obs[mask, :2])
        total += lam * value
        dpts = np.zeros_like(pts)
        dpts[mask] = lam * np.einsum("kij,ki->kj", jac, g)
        if which == "kp":
            cot.du += model.kp_regressor.T @ dpts
        else:
            np.add.at(cot.du, model.landmark_indices, dpts)
    return total, cot, active


def _pair_terms(a, b, weights, calibrated, prefix):
    """Weighted distance between two sets of comparison quantities.

    ``a`` and ``b`` are (orient6d, body6d, beta, mesh) tuples. Returns the
    value and the gradient with respect to ``a``'s entries.
    """
    lam = lambda name: getattr(weights, f"lambda_{prefix}_{name}")  # noqa: E731
    value = 0.0
    grads = [None, None, None, None]
    if calibrated:
        v, g = mean_norm(a[0] - b[0])
        value += lam("orient") * v
        grads[0] = lam("orient") * g
    for slot, name in ((1, "pose"), (2, "betas"), (3, "vertice")):
        v, g = mean_norm(a[slot] - b[slot])
        value += lam(name) * v
        grads[slot] = lam(name) * g
    return value, grads


def _quantities(view):
    return (view.world_root6d, view.body6d, view.beta, view.cmp_mesh)


def _check_calibration(views, calibrated):
    if calibrated and not all(v.calibrated for v in views):
        raise ValueError("calibrated consistency needs extrinsics for every view")


def _terms_pairwise(views, weights, calibrated, counter=None):
    if len(views) < 2:
        raise ValueError("consistency needs at least two views")
    _check_calibration(views, calibrated)
    cots = [v.new_cot() for v in views]
    qs = [_quantities(v) for v in views]
    total = 0.0
    for i, j in combinations(range(len(views)), 2):
        value, g = _pair_terms(qs[i], qs[j], weights, calibrated, "con")
        total += value
        views[i].cmp_pullback(cots[i], *g)
        views[j].cmp_pullback(cots[j], *[None if x is None else -x for x in g])
        if counter is not None:
            counter["compare"] += 1
    return total, cots


def _terms_star(views, weights, calibrated, counter=None):
    if len(views) < 2:
        raise ValueError("consistency needs at least two views")
    _check_calibration(views, calibrated)
    qs = [_quantities(v) for v in views]
    ref = [None if (slot == 0 and not calibrated)
           else sum(q[slot] for q in qs) / len(qs) for slot in range(4)]
    if counter is not None:
        counter["accumulate"] += len(qs)
    total = 0.0
    cots = []
    # reference is held constant: each view only sees its own deviation
    for view, q in zip(views, qs):
        value, g = _pair_terms(q, ref, weights, calibrated, "con")
        total += value
        cots.append(view.cmp_pullback(view.new_cot(), *g))
        if counter is not None:
            counter["compare"] += 1
    return total, cots


def _terms_reg(view, weights):
    snap = view.initial_snapshot
    cot = view.new_cot()
    total = 0.0
    v, g = mean_norm(view.root6d - snap.root6d)
    total += weights.lambda_reg_orient * v
    cot.dR[0, :, 0] += weights.lambda_reg_orient * g[:3]
    cot.dR[0, :, 1] += weights.lambda_reg_orient * g[3:]
    v, g = mean_norm(view.body6d - snap.body6d)
    total += weights.lambda_reg_pose * v
    cot.dR[1:, :, 0] += weights.lambda_reg_pose * g[:, :3]
    cot.dR[1:, :, 1] += weights.lambda_reg_pose * g[:, 3:]
    v, g = mean_norm(view.beta - snap.beta)
    total += weights.lambda_reg_betas * v
    cot.dbeta += weights.lambda_reg_betas * g
    v, g = mean_norm(view.u - snap.u)
    total += weights.lambda_reg_vertice * v
    cot.du += weights.lambda_reg_vertice * g
    return total, cot


class _VirtualEval:
    """Decode of the virtual view with what its pullback needs."""

    def __init__(self, model, virtual, calibrated):
        self.params = virtual.params
        self.R, self.beta = vector_to_body(virtual.params)
        Rm = self.R.copy()
        if not calibrated:
            Rm[0] = np.eye(3)
        self.posed = pose_body(model, Rm, self.beta)
        self.u = self.posed.verts - self.posed.Jr[0]
        self.q = (rotmat_to_6d(self.R[0]) if calibrated else None,
                  rotmat_to_6d(self.R[1:]), self.beta, self.u)


def _virtual_value_grad(model, virtual, views, weights, calibrated, with_grad=True):
    if calibrated and virtual.orient_mode != "world":
        raise ValueError("calibrated virtual loss needs a world-frame virtual view")
    if calibrated:
        _check_calibration(views, True)
    ev = _VirtualEval(model, virtual, calibrated)
    total = 0.0
    g_orient = np.zeros(6)
    g_body = np.zeros((model.n_joints - 1, 6))
    g_beta = np.zeros(model.n_betas)
    g_mesh = np.zeros((model.n_verts, 3))
    for view in views:
        value, g = _pair_terms(ev.q, _quantities(view), weights, calibrated, "virtual")
        total += value
        if g[0] is not None:
            g_orient += g[0]
        g_body += g[1]
        g_beta += g[2]
        g_mesh += g[3]
    if not with_grad:
        return total, None, ev
    dR = np.zeros((model.n_joints, 3, 3))
    dR[0, :, 0] = g_orient[:3]
    dR[0, :, 1] = g_orient[3:]
    dR[1:, :, 0] = g_body[:, :3]
    dR[1:, :, 1] = g_body[:, 3:]
    dbeta = g_beta.copy()
    if np.any(g_mesh):
        gR, gb = pose_body_vjp(model, ev.posed, d_verts=g_mesh, d_root_rest=-g_mesh.sum(axis=0))
        if not calibrated:
            gR[0] = 0.0
        dR += gR
        dbeta += gb
    grad = vector_to_body_vjp(ev.params, dR, dbeta)
    return total, grad, ev


# --------------------------------------------------------------------------
# public losses: (value, gradient with respect to the optimizable vectors)


def loss_2d(view, weights, diagnostics=None):
    value, cot, active = _terms_2d(view, weights)
    if diagnostics is not None:
        diagnostics["active_detections"] = active
        diagnostics["all_masked"] = active == 0
    if active == 0:
        return 0.0, np.zeros_like(view.params)
    return value, view.backprop(cot)


def loss_consistency_pairwise(views, weights, calibrated, counter=None):
    value, cots = _terms_pairwise(views, weights, calibrated, counter)
    return value, [v.backprop(c) for v, c in zip(views, cots)]


def loss_consistency_star(views, weights, calibrated, counter=None):
    value, cots = _terms_star(views, weights, calibrated, counter)
    return value, [v.backprop(c) for v, c in zip(views, cots)]


def loss_regularization(views, weights):
    total = 0.0
    grads = []
    for view in views:
        value, cot = _terms_reg(view, weights)
        total += value
        grads.append(view.backprop(cot))
    return total, grads


def loss_virtual(virtual, views, weights, calibrated):
    """Virtual-view consistency; the gradient is with respect to the virtual
    parameters only (views are treated as constants)."""
    if len(views) < 1:
        raise ValueError("virtual loss needs at least one view")
    model = views[0].model
    value, grad, _ = _virtual_value_grad(model, virtual, views, weights, calibrated)
    return value, grad


def new_counter():
    return Counter()
