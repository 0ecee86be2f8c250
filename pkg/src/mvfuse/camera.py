"""Camera models and world/camera orientation handling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rotmath import check_rotmat

MIN_DEPTH = 1e-6


class DepthError(ValueError):
    def __init__(self, index, depth):
        super().__init__(f"point {index} has nonpositive depth {depth:.3g} m")
        self.index = index


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: float
    image_h: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.image_w and 0 <= self.cy <= self.image_h):
            raise ValueError("principal point outside the image")

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy, self.image_w, self.image_h])


@dataclass(frozen=True)
class Extrinsics:
    """World -> camera: x_cam = R x_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        check_rotmat(self.R)

    def to_camera(self, pts):
        return np.asarray(pts) @ self.R.T + self.t


@dataclass(frozen=True)
class CameraModel:
    """One view's camera.

    ``transl`` is the pelvis position in this camera's frame; per-view body
    meshes are placed pelvis-first so the 2D loss works with or without
    extrinsics.
    """

    kind: str
    intrinsics: Intrinsics
    extrinsics: Optional[Extrinsics] = None
    weak_params: Optional[tuple] = None
    transl: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("perspective", "weak-perspective"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.kind == "weak-perspective":
            if self.weak_params is None or not self.weak_params[0] > 0:
                raise ValueError("weak-perspective camera needs (s > 0, tx, ty)")
        if self.transl is None:
            object.__setattr__(self, "transl", np.zeros(3))

    @property
    def calibrated(self):
        return self.extrinsics is not None


def _camera_points(cam, pts, in_camera_frame):
    pts = np.asarray(pts, dtype=float)
    if in_camera_frame:
        return pts
    if cam.extrinsics is None:
        raise ValueError("world-frame projection needs extrinsics")
    return cam.extrinsics.to_camera(pts)


def weak_normalized(cam, pts):
    s, tx, ty = cam.weak_params
    pts = np.asarray(pts, dtype=float)
    return np.stack([s * pts[:, 0] + tx, s * pts[:, 1] + ty], axis=-1)


def _weak_pixel_scale(intr):
    return 0.5 * max(intr.image_w, intr.image_h)


def project(cam, pts, in_camera_frame=False):
    """K x 3 points (meters) -> K x 2 pixels."""
    return project_with_jacobian(cam, pts, in_camera_frame)[0]


def project_with_jacobian(cam, pts, in_camera_frame=False):
    """Pixels plus the K x 2 x 3 Jacobian with respect to camera-frame points."""
    X = _camera_points(cam, pts, in_camera_frame)
    intr = cam.intrinsics
    K = X.shape[0]
    jac = np.zeros((K, 2, 3))
    if cam.kind == "perspective":
        z = X[:, 2]
        bad = np.flatnonzero(~(z > MIN_DEPTH))
        if bad.size:
            raise DepthError(int(bad[0]), float(z[bad[0]]))
        u = intr.fx * X[:, 0] / z + intr.cx
        v = intr.fy * X[:, 1] / z + intr.cy
        jac[:, 0, 0] = intr.fx / z
        jac[:, 0, 2] = -intr.fx * X[:, 0] / z**2
        jac[:, 1, 1] = intr.fy / z
        jac[:, 1, 2] = -intr.fy * X[:, 1] / z**2
        return np.stack([u, v], axis=-1), jac
    scale = _weak_pixel_scale(intr)
    n = weak_normalized(cam, X)
    s = cam.weak_params[0]
    jac[:, 0, 0] = s * scale
    jac[:, 1, 1] = s * scale
    px = np.stack([intr.cx + scale * n[:, 0], intr.cy + scale * n[:, 1]], axis=-1)
    return px, jac


def orient_to_world(root, ext):
    """Camera-frame body orientation expressed in the world frame."""
    return ext.R.T @ np.asarray(root)


def orient_to_view(root_world, ext):
    return ext.R @ np.asarray(root_world)


def look_at(position, target, up=(0.0, 1.0, 0.0)):
    """Extrinsics of a camera at ``position`` looking at ``target``.

    Camera axes follow the x-right, y-down, z-forward convention; ``up`` is the
    world up direction.
    """
    position = np.asarray(position, dtype=float)
    fwd = np.asarray(target, dtype=float) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("view direction is parallel to up")
    right /= n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    return Extrinsics(R, -R @ position)
