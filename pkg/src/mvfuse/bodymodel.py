"""Parametric body model: shape blendshapes, forward kinematics and linear blend
skinning, plus keypoint regression and landmark indexing.

Pose-corrective blendshapes are not modelled. Joint rotations are relative to
the parent and act about the rest joint centres; the root joint stays at its
rest (shaped) position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .rotmath import check_rotmat

MODEL_MAGIC = "MVFUSE-MODEL-v1"
N_KEYPOINTS = 44
N_LANDMARKS = 35
PELVIS = 0

# 24-joint kinematic tree (pelvis rooted)
SMPL_PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]
)
L_WRIST, R_WRIST = 20, 21
L_ELBOW, R_ELBOW = 18, 19


@dataclass(frozen=True)
class PoseParams:
    root_orient: np.ndarray  # (3, 3)
    body_pose: np.ndarray  # (J-1, 3, 3)

    @classmethod
    def from_rotmats(cls, R):
        R = np.asarray(R, dtype=float)
        return cls(R[0].copy(), R[1:].copy())

    @classmethod
    def identity(cls, n_joints=24):
        return cls.from_rotmats(np.tile(np.eye(3), (n_joints, 1, 1)))

    @property
    def rotmats(self):
        return np.concatenate([self.root_orient[None], self.body_pose], axis=0)

    def validate(self):
        check_rotmat(self.rotmats)
        return self


@dataclass(frozen=True)
class MeshResult:
    vertices: np.ndarray  # (V, 3)
    joints3d: np.ndarray  # (J, 3)


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray  # (V, 3)
    shape_dirs: np.ndarray  # (V, 3, B)
    parents: np.ndarray  # (J,)
    joint_regressor_rest: np.ndarray  # (J, V)
    skin_weights: np.ndarray  # (V, J)
    kp_regressor: np.ndarray  # (44, V)
    landmark_indices: np.ndarray  # (35,)
    order: tuple = field(init=False, repr=False)
    _parent_list: tuple = field(init=False, repr=False)

    def __post_init__(self):
        validate_model(self)
        object.__setattr__(self, "order", tuple(_topological_order(self.parents)))
        object.__setattr__(self, "_parent_list", tuple(int(p) for p in self.parents))
        for name in ("template_vertices", "shape_dirs", "joint_regressor_rest",
                     "skin_weights", "kp_regressor", "landmark_indices", "parents"):
            getattr(self, name).setflags(write=False)

    @property
    def n_verts(self):
        return self.template_vertices.shape[0]

    @property
    def n_joints(self):
        return self.parents.shape[0]

    @property
    def n_betas(self):
        return self.shape_dirs.shape[2]


def _topological_order(parents):
    children = {i: [] for i in range(len(parents))}
    for k, p in enumerate(parents):
        if k > 0:
            children[int(p)].append(k)
    order, stack = [], [0]
    while stack:
        k = stack.pop()
        order.append(k)
        stack.extend(reversed(children[k]))
    return order


def validate_model(m):
    """Raise :class:`container.InvariantError` on any broken invariant."""
    err = container.InvariantError
    V = m.template_vertices.shape[0]
    J = m.parents.shape[0]
    if m.template_vertices.shape != (V, 3):
        raise err("template_vertices must be V x 3")
    if m.shape_dirs.ndim != 3 or m.shape_dirs.shape[:2] != (V, 3):
        raise err("shape_dirs must be V x 3 x B")
    if m.joint_regressor_rest.shape != (J, V) or m.skin_weights.shape != (V, J):
        raise err("regressor / skin weight dimensions do not match V, J")
    if m.kp_regressor.shape != (N_KEYPOINTS, V):
        raise err(f"kp_regressor must be {N_KEYPOINTS} x V")
    if m.landmark_indices.shape != (N_LANDMARKS,):
        raise err(f"expected {N_LANDMARKS} landmark indices")
    for name in ("template_vertices", "shape_dirs", "joint_regressor_rest", "skin_weights",
                 "kp_regressor"):
        if not np.all(np.isfinite(getattr(m, name))):
            raise err(f"{name} is not finite")
    if np.any(m.skin_weights < 0) or np.any(np.abs(m.skin_weights.sum(1) - 1) > 1e-6):
        raise err("skin_weights rows must be nonnegative and sum to 1")
    if np.any(np.abs(m.kp_regressor.sum(1) - 1) > 1e-6):
        raise err("kp_regressor rows must sum to 1")
    if np.any(m.landmark_indices < 0) or np.any(m.landmark_indices >= V):
        raise err("landmark index out of range")
    if J == 0 or m.parents[0] != -1:
        raise err("joint 0 must be the root (parent -1)")
    for k in range(1, J):
        p = int(m.parents[k])
        if not 0 <= p < J or p == k:
            raise err(f"joint {k} has invalid parent {p}")
    if len(_topological_order(m.parents)) != J:
        raise err("parents do not form a tree rooted at joint 0")


# --------------------------------------------------------------------------
# forward kinematics + LBS with a reverse-mode pullback


class Posed:
    """Intermediates of one forward evaluation, reused by :meth:`vjp`."""

    __slots__ = ("R", "beta", "T", "Jr", "Rw", "tw", "verts")

    @property
    def joints(self):
        return self.tw


def pose_body(model, R, beta):
    """Forward pass on raw arrays: R (J, 3, 3) local rotations, beta (B,)."""
    R = np.asarray(R, dtype=float)
    beta = np.asarray(beta, dtype=float)
    J = model.n_joints
    if R.shape != (J, 3, 3):
        raise ValueError(f"expected {J} rotations, got array of shape {R.shape}")
    if beta.shape != (model.n_betas,):
        raise ValueError(f"expected {model.n_betas} shape coefficients, got {beta.shape}")
    T = model.template_vertices + model.shape_dirs @ beta
    Jr = model.joint_regressor_rest @ T
    Rw = np.empty((J, 3, 3))
    tw = np.empty((J, 3))
    parents = model._parent_list
    for k in model.order:
        p = parents[k]
        if p < 0:
            Rw[k] = R[k]
            tw[k] = Jr[k]
        else:
            Rw[k] = Rw[p] @ R[k]
            tw[k] = Rw[p] @ (Jr[k] - Jr[p]) + tw[p]
    W = model.skin_weights
    # v = sum_k w_vk (Rw_k (T_v - Jr_k) + tw_k)
    blended = (W @ Rw.reshape(J, 9)).reshape(-1, 3, 3)
    offs = tw - np.einsum("kij,kj->ki", Rw, Jr)
    verts = (blended @ T[:, :, None])[:, :, 0] + W @ offs

    out = Posed()
    out.R, out.beta, out.T, out.Jr, out.Rw, out.tw, out.verts = R, beta, T, Jr, Rw, tw, verts
    return out


def pose_body_vjp(model, posed, d_verts=None, d_joints=None, d_root_rest=None):
    """Cotangents on vertices / joints / rest root position -> (dR, dbeta)."""
    J = model.n_joints
    V = model.n_verts
    W = model.skin_weights
    Rw, tw, T, Jr, R = posed.Rw, posed.tw, posed.T, posed.Jr, posed.R
    dRw = np.zeros((J, 3, 3))
    dtw = np.zeros((J, 3)) if d_joints is None else np.array(d_joints, dtype=float)
    dT = np.zeros((V, 3))
    dJr = np.zeros((J, 3))
    if d_root_rest is not None:
        dJr[0] += d_root_rest
    if d_verts is not None:
        dv = np.asarray(d_verts, dtype=float)
        wdv = W.T @ dv  # (J, 3): sum_v w_vk dv_v
        # d/dRw_k of sum_v w_vk dv_v . (Rw_k (T_v - Jr_k))
        outer = (dv[:, :, None] * T[:, None, :]).reshape(V, 9)
        dRw += (W.T @ outer).reshape(J, 3, 3) - wdv[:, :, None] * Jr[:, None, :]
        dtw += wdv
        blended = (W @ Rw.reshape(J, 9)).reshape(V, 3, 3)
        dT += (dv[:, None, :] @ blended)[:, 0, :]
        dJr -= (wdv[:, None, :] @ Rw)[:, 0, :]
    dR = np.zeros((J, 3, 3))
    parents = model._parent_list
    for k in reversed(model.order):
        p = parents[k]
        if p < 0:
            dR[k] = dRw[k]
            dJr[k] += dtw[k]
            continue
        rel = Jr[k] - Jr[p]
        dRw[p] += np.outer(dtw[k], rel) + dRw[k] @ R[k].T
        g = Rw[p].T @ dtw[k]
        dJr[k] += g
        dJr[p] -= g
        dtw[p] += dtw[k]
        dR[k] = Rw[p].T @ dRw[k]
    dT += model.joint_regressor_rest.T @ dJr
    dbeta = np.einsum("vib,vi->b", model.shape_dirs, dT)
    return dR, dbeta


def forward(model, pose, shape):
    """Posed mesh for ``pose`` (PoseParams) and ``shape`` (beta vector)."""
    posed = pose_body(model, pose.rotmats, shape)
    return MeshResult(posed.verts, posed.tw.copy())


def regress_keypoints(model, mesh):
    verts = mesh.vertices if isinstance(mesh, MeshResult) else np.asarray(mesh)
    if verts.shape != (model.n_verts, 3):
        raise ValueError(f"mesh has {verts.shape[0]} vertices, model expects {model.n_verts}")
    return model.kp_regressor @ verts


def extract_landmarks(model, mesh):
    verts = mesh.vertices if isinstance(mesh, MeshResult) else np.asarray(mesh)
    return verts[model.landmark_indices]


# --------------------------------------------------------------------------
# persistence

_FIELDS = ("template_vertices", "shape_dirs", "parents", "joint_regressor_rest",
           "skin_weights", "kp_regressor", "landmark_indices")


def model_fields(model, prefix=""):
    V, J, B = model.n_verts, model.n_joints, model.n_betas
    out = {prefix + "V": np.int64(V), prefix + "J": np.int64(J), prefix + "B": np.int64(B)}
    for name in _FIELDS:
        out[prefix + name] = getattr(model, name)
    return out


def model_from_fields(fields, prefix=""):
    try:
        arrays = {name: np.array(fields[prefix + name]) for name in _FIELDS}
        dims = tuple(int(fields[prefix + k]) for k in ("V", "J", "B"))
    except KeyError as exc:
        raise container.MalformedHeaderError(f"model record missing: {exc}") from exc
    V, J, B = dims
    if arrays["template_vertices"].shape != (V, 3) or arrays["parents"].shape != (J,) \
            or arrays["shape_dirs"].shape != (V, 3, B):
        raise container.InvariantError("array shapes disagree with declared V, J, B")
    return BodyModel(**arrays)


def save_model(model, path):
    container.write(path, MODEL_MAGIC, model_fields(model))


def load_model(path):
    return model_from_fields(container.read(path, MODEL_MAGIC))
