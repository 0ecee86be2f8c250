"""Virtual-view initialization from per-view predictions.

Each joint's per-view rotations are compared in 6D; views farther from the
mean than the standard deviation of those distances are dropped before
averaging (the "1-delta" filter). Shape coefficients are plain means.
"""

from __future__ import annotations

import numpy as np

from .bodymodel import PoseParams
from .camera import orient_to_world
from .losses import VirtualView
from .rotmath import rotmat_to_6d, sixd_to_rotmat

STRATEGIES = ("none", "t-pose", "averaged", "weighted")
FALLBACK_SLACK = 1e-9


def filter_joint(rotations):
    """Indices of the reliable views for one joint.

    ``rotations`` is N x 6 (raw 6D). A view is kept when its distance to the
    mean is at most the population standard deviation of all distances. That
    set is empty whenever every distance exceeds the spread, e.g. three equal
    views and one outlier (distances D/4 against a spread of about 0.22 D).
    The fallback then keeps the views within one spread above the mean
    distance, which drops a lone far view (0.75 D against 0.59 D) and retains
    everything when all distances are equal.
    """
    rot = np.asarray(rotations, dtype=float)
    if rot.ndim != 2 or rot.shape[0] == 0:
        raise ValueError("filter_joint needs at least one rotation")
    d = np.linalg.norm(rot - rot.mean(axis=0), axis=1)
    sigma = d.std()
    keep = np.flatnonzero(d <= sigma)
    if keep.size == 0:
        # slack absorbs rounding when the distances are equal up to ulps
        keep = np.flatnonzero(d <= d.mean() + sigma + FALLBACK_SLACK * d.max())
    return keep


def _check_views(poses, extrinsics):
    if len(poses) == 0:
        raise ValueError("need at least one view")
    if extrinsics is not None:
        if len(extrinsics) != len(poses):
            raise ValueError("one extrinsics entry per view required")
        present = [e is not None for e in extrinsics]
        if any(present) and not all(present):
            raise ValueError("mixed calibrated and uncalibrated views")
        if not any(present):
            return None
    return extrinsics


def _per_joint_6d(poses, extrinsics):
    """N x J x 6 array; roots mapped to the world frame when calibrated."""
    R = np.stack([p.rotmats for p in poses])
    if extrinsics is not None:
        R = R.copy()
        for i, ext in enumerate(extrinsics):
            R[i, 0] = orient_to_world(R[i, 0], ext)
    return rotmat_to_6d(R)


def retained_sets(poses, extrinsics=None):
    """Per-joint retained view indices (the root is None when uncalibrated)."""
    extrinsics = _check_views(poses, extrinsics)
    six = _per_joint_6d(poses, extrinsics)
    out = [filter_joint(six[:, k]) for k in range(six.shape[1])]
    if extrinsics is None:
        out[0] = None
    return out


def _fuse(poses, extrinsics, filtered):
    extrinsics = _check_views(poses, extrinsics)
    six = _per_joint_6d(poses, extrinsics)
    J = six.shape[1]
    fused = np.empty((J, 6))
    for k in range(J):
        keep = filter_joint(six[:, k]) if filtered else slice(None)
        fused[k] = six[keep, k].mean(axis=0)
    R = sixd_to_rotmat(fused)
    if extrinsics is None:
        # root stays view-specific; the first view's root is a placeholder
        R[0] = poses[0].rotmats[0]
    mode = "world" if extrinsics is not None else "per-view-free"
    return PoseParams.from_rotmats(R), mode


def init_virtual_pose(poses, extrinsics=None):
    """Filtered 6D mean per joint; returns (PoseParams, orient_mode)."""
    return _fuse(poses, extrinsics, filtered=True)


def init_virtual_shape(betas):
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 2 or betas.shape[0] == 0:
        raise ValueError("need at least one shape vector")
    return betas.mean(axis=0)


def init_strategy(views, strategy, extrinsics=None):
    """Virtual view for one of the initialization strategies, or None.

    ``views`` is a sequence of (PoseParams, beta) pairs.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy == "none":
        return None
    poses = [p for p, _ in views]
    extrinsics = _check_views(poses, extrinsics)
    mode = "world" if extrinsics is not None else "per-view-free"
    if strategy == "t-pose":
        n_joints = poses[0].rotmats.shape[0]
        n_betas = np.asarray(views[0][1]).shape[0]
        return VirtualView.from_body(PoseParams.identity(n_joints), np.zeros(n_betas), mode)
    pose, mode = _fuse(poses, extrinsics, filtered=(strategy == "weighted"))
    beta = init_virtual_shape([b for _, b in views])
    return VirtualView.from_body(pose, beta, mode)
