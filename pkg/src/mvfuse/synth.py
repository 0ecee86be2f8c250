"""Synthetic scenes with known truth: a procedural body rig, a ring of cameras,
noisy 2D detections and perturbed single-view priors."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import camera as cam_mod
from .bodymodel import N_KEYPOINTS, N_LANDMARKS, SMPL_PARENTS, BodyModel, PoseParams, pose_body
from .camera import CameraModel, Intrinsics
from .prior import fit_token_exact
from .rotmath import aa_to_rotmat, geodesic_dist
from .scene import Detection2D, GroundTruth, Scene

REST_JOINTS = np.array([
    [0.00, 0.00, 0.00], [0.06, -0.09, 0.00], [-0.06, -0.09, 0.00], [0.00, 0.11, -0.02],
    [0.10, -0.47, 0.00], [-0.10, -0.47, 0.00], [0.00, 0.24, 0.00], [0.08, -0.87, -0.04],
    [-0.08, -0.87, -0.04], [0.00, 0.30, 0.02], [0.12, -0.92, 0.08], [-0.12, -0.92, 0.08],
    [0.00, 0.52, -0.01], [0.08, 0.42, 0.00], [-0.08, 0.42, 0.00], [0.00, 0.60, 0.04],
    [0.18, 0.45, -0.01], [-0.18, 0.45, -0.01], [0.44, 0.43, -0.03], [-0.44, 0.43, -0.03],
    [0.70, 0.44, -0.02], [-0.70, 0.44, -0.02], [0.78, 0.43, -0.03], [-0.78, 0.43, -0.03],
])
RING_RADIUS = np.array([
    0.12, 0.08, 0.08, 0.12, 0.06, 0.06, 0.12, 0.045, 0.045, 0.12, 0.04, 0.04,
    0.06, 0.05, 0.05, 0.09, 0.05, 0.05, 0.04, 0.04, 0.03, 0.03, 0.03, 0.03,
])
LEAVES = (10, 11, 15, 22, 23)
N_BETAS = 10


def _ring_frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _ring(center, axis, radius, n, phase):
    e1, e2 = _ring_frame(axis)
    ang = phase + 2 * np.pi * np.arange(n) / n
    return center + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def make_rig(n_verts=200, seed=0):
    """Procedural 24-joint body rig built from vertex rings.

    Every joint, bone midpoint and leaf tip carries a regular polygon of
    vertices, so ring centroids coincide with the skeleton under any pose.
    Joint rings regress the joints; bone rings are rigidly attached to the
    parent joint.
    """
    J = len(SMPL_PARENTS)
    bone_dir = np.zeros((J, 3))
    bone_dir[0] = [0.0, 1.0, 0.0]
    for k in range(1, J):
        bone_dir[k] = REST_JOINTS[k] - REST_JOINTS[SMPL_PARENTS[k]]

    # (center, axis, radius, skin {joint: weight}, kind, joint)
    rings = []
    for k in range(J):
        skin = {k: 1.0} if k == 0 else {k: 0.5, int(SMPL_PARENTS[k]): 0.5}
        rings.append((REST_JOINTS[k], bone_dir[k], RING_RADIUS[k], skin, "joint", k))
    for k in range(1, J):
        p = int(SMPL_PARENTS[k])
        mid = 0.5 * (REST_JOINTS[k] + REST_JOINTS[p])
        radius = 0.5 * (RING_RADIUS[k] + RING_RADIUS[p])
        rings.append((mid, bone_dir[k], radius, {p: 1.0}, "bone", k))
    for k in LEAVES:
        length = 0.12 if k == 15 else 0.08
        tip = REST_JOINTS[k] + length * bone_dir[k] / np.linalg.norm(bone_dir[k])
        rings.append((tip, bone_dir[k], 0.7 * RING_RADIUS[k], {k: 1.0}, "tip", k))

    n_rings = len(rings)
    if n_verts < 2 * n_rings:
        raise ValueError(f"rig needs at least {2 * n_rings} vertices")
    counts = np.full(n_rings, n_verts // n_rings)
    counts[: n_verts % n_rings] += 1

    rng = np.random.default_rng(seed)
    verts, skin, ring_of = [], np.zeros((n_verts, J)), []
    for r, ((center, axis, radius, weights, _, _), n) in enumerate(zip(rings, counts)):
        start = len(verts)
        verts.extend(_ring(center, axis, radius, n, rng.uniform(0, 2 * np.pi)))
        for j, w in weights.items():
            skin[start : start + n, j] = w
        ring_of.extend([r] * n)
    T = np.array(verts)
    ring_of = np.array(ring_of)
    members = [np.flatnonzero(ring_of == r) for r in range(n_rings)]

    joint_reg = np.zeros((J, n_verts))
    for k in range(J):
        joint_reg[k, members[k]] = 1.0 / len(members[k])
    kp_reg = np.zeros((N_KEYPOINTS, n_verts))
    kp_reg[:J] = joint_reg
    for i in range(N_KEYPOINTS - J):
        idx = members[J + i]  # bone rings of joints 1..20
        kp_reg[J + i, idx] = 1.0 / len(idx)

    landmarks = [members[J + k - 1][0] for k in range(1, J)]
    landmarks += [members[J + (J - 1) + i][0] for i in range(len(LEAVES))]
    landmarks += [members[J + k - 1][1] for k in (15, 18, 19, 20, 21, 22, 23)]
    landmarks = np.array(landmarks[:N_LANDMARKS])

    # shape space: ring-coherent affine displacements keep ring centroids exact
    centers = np.array([c for c, *_ in rings])[ring_of]
    dirs = np.zeros((n_verts, 3, N_BETAS))
    dirs[:, :, 0] = 0.06 * T
    dirs[:, 0, 1] = 0.05 * T[:, 0]
    arm = np.abs(T[:, 0]) > 0.18
    dirs[arm, 0, 2] = 0.05 * (T[arm, 0] - np.sign(T[arm, 0]) * 0.18)
    leg = T[:, 1] < -0.09
    dirs[leg, 1, 3] = 0.05 * (T[leg, 1] + 0.09)
    for b in range(4, N_BETAS):
        shift = rng.normal(0.0, 0.01, size=(n_rings, 3))[ring_of]
        radial = rng.normal(0.0, 0.05, size=n_rings)[ring_of, None] * (T - centers)
        dirs[:, :, b] = shift + radial

    return BodyModel(
        template_vertices=T,
        shape_dirs=dirs,
        parents=SMPL_PARENTS.copy(),
        joint_regressor_rest=joint_reg,
        skin_weights=skin,
        kp_regressor=kp_reg,
        landmark_indices=landmarks,
    )


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_views: int = 4
    ring_radius: float = 3.0
    ring_height: float = 1.2
    look_at_jitter: float = 0.05
    detection_noise_px: float = 3.0
    detection_dropout: float = 0.05
    prior_pose_noise_rad: float = 0.15
    prior_shape_noise: float = 0.1
    outlier_views: tuple = ()  # (view, joint, geodesic offset in rad)
    calibrated: bool = True
    max_pose_angle: float = 0.6

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        for name in ("detection_noise_px", "prior_pose_noise_rad", "prior_shape_noise",
                     "look_at_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ValueError("detection_dropout must be in [0, 1]")
        object.__setattr__(self, "outlier_views",
                           tuple(tuple(o) for o in self.outlier_views))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["outlier_views"] = [list(o) for o in self.outlier_views]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["outlier_views"] = tuple(tuple(o) for o in d.get("outlier_views", ()))
        return cls(**d)


def _ball_aa(rng, n, radius):
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    return axis * (radius * rng.uniform(size=(n, 1)) ** (1.0 / 3.0))


def _random_axis(rng):
    a = rng.normal(size=3)
    return a / np.linalg.norm(a)


def _place_camera(rng, spec, phi, target):
    pos = target + np.array([spec.ring_radius * np.sin(phi), 0.0, spec.ring_radius * np.cos(phi)])
    pos[1] = spec.ring_height
    aim = target + rng.normal(0.0, spec.look_at_jitter, size=3)
    return cam_mod.look_at(pos, aim)


def generate_scene(model, head, spec=SceneSpec()):
    rng = np.random.default_rng(spec.seed)
    J = model.n_joints

    yaw = aa_to_rotmat(np.array([0.0, rng.uniform(-np.pi, np.pi), 0.0]))
    tilt = aa_to_rotmat(rng.normal(0.0, 0.1, size=3))
    R_gt = np.empty((J, 3, 3))
    R_gt[0] = yaw @ tilt
    R_gt[1:] = aa_to_rotmat(_ball_aa(rng, J - 1, spec.max_pose_angle))
    beta_gt = np.clip(rng.normal(0.0, 0.5, size=model.n_betas), -2.0, 2.0)
    pelvis = np.array([0.0, 1.0, 0.0]) + rng.normal(0.0, 0.05, size=3)

    posed = pose_body(model, R_gt, beta_gt)
    rel_verts = posed.verts - posed.Jr[0]
    gt = GroundTruth(
        pose=PoseParams.from_rotmats(R_gt),
        beta=beta_gt,
        joints3d=posed.tw - posed.Jr[0] + pelvis,
        vertices=rel_verts + pelvis,
        pelvis=pelvis,
    )

    intr = Intrinsics(1000.0, 1000.0, 500.0, 500.0, 1000.0, 1000.0)
    cameras, detections, tokens, view_R = [], [], [], []
    for i in range(spec.n_views):
        phi = 2 * np.pi * i / spec.n_views
        for _ in range(100):
            ext = _place_camera(rng, spec, phi, pelvis)
            z = ext.to_camera(gt.vertices)[:, 2]
            if np.all(z > cam_mod.MIN_DEPTH):
                break
        else:
            raise RuntimeError(f"could not place camera {i} with positive depth")
        transl = ext.R @ pelvis + ext.t
        cam = CameraModel("perspective", intr, ext if spec.calibrated else None, transl=transl)
        cam_gt = CameraModel("perspective", intr, None, transl=transl)
        view_R.append(ext.R)

        verts_cam = rel_verts @ ext.R.T + transl
        kp3d = model.kp_regressor @ verts_cam
        lm3d = verts_cam[model.landmark_indices]
        kp = cam_mod.project(cam_gt, kp3d, in_camera_frame=True)
        ana = cam_mod.project(cam_gt, lm3d, in_camera_frame=True)
        det = []
        for px in (kp, ana):
            noisy = px + rng.normal(0.0, spec.detection_noise_px, size=px.shape) \
                if spec.detection_noise_px > 0 else px.copy()
            dropped = rng.uniform(size=len(px)) < spec.detection_dropout
            conf = np.where(dropped, rng.uniform(0.0, 0.9, size=len(px)),
                            rng.uniform(0.95, 1.0, size=len(px)))
            det.append(np.column_stack([noisy, conf]))
        detections.append(Detection2D(det[0], det[1]))
        cameras.append(cam)

        R_view = R_gt.copy()
        R_view[0] = ext.R @ R_gt[0]
        if spec.prior_pose_noise_rad > 0:
            noise = rng.normal(0.0, spec.prior_pose_noise_rad / np.sqrt(3.0), size=(J, 3))
            R_view = R_view @ aa_to_rotmat(noise)
        for view, joint, offset in spec.outlier_views:
            if view == i:
                R_view[joint] = R_view[joint] @ aa_to_rotmat(_random_axis(rng) * offset)
        beta_view = beta_gt + rng.normal(0.0, spec.prior_shape_noise, size=model.n_betas) \
            if spec.prior_shape_noise > 0 else beta_gt.copy()
        tokens.append(fit_token_exact(head, R_view, beta_view).token)

    meta = {"spec": spec.to_dict(), "view_rotations": np.array(view_R)}
    return Scene(model, head, tuple(cameras), tuple(detections), np.array(tokens),
                 spec.calibrated, gt, meta)


def gt_in_view(scene, view=0):
    """Ground-truth joints and vertices, pelvis-centred, in a camera's frame."""
    R = scene.meta["view_rotations"][view]
    gt = scene.gt
    return (gt.joints3d - gt.pelvis) @ R.T, (gt.vertices - gt.pelvis) @ R.T


def outlier_offset(scene, view, joint):
    """Geodesic distance of a view's decoded prior joint from ground truth."""
    from .prior import decode

    pose, _ = decode(scene.head, scene.tokens[view])
    R_gt = scene.gt.pose.rotmats[joint]
    if joint == 0:
        R_gt = scene.meta["view_rotations"][view] @ R_gt
    return float(geodesic_dist(pose.rotmats[joint], R_gt))


SWEEP_AXES = ("n_views", "steps", "lr", "noise")


def sweep(model, head, spec, axis, values, config=None):
    """Run TTA once per value along ``axis``; returns a list of row dicts."""
    from .metrics import report_dict
    from .optimizer import TTAConfig, run_tta

    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    config = config or TTAConfig()
    values = list(values)
    rows = []
    if axis == "n_views":
        base = generate_scene(model, head, dataclasses.replace(spec, n_views=max(values)))
    elif axis != "noise":
        base = generate_scene(model, head, spec)
    for v in values:
        if axis == "n_views":
            scene, cfg = base.subset(range(int(v))), config
        elif axis == "steps":
            scene = base
            cfg = dataclasses.replace(config, steps=int(v),
                                      warmup_steps=min(config.warmup_steps, int(v)))
        elif axis == "lr":
            scene, cfg = base, dataclasses.replace(config, eta=float(v))
        else:
            scene = generate_scene(model, head, dataclasses.replace(spec, detection_noise_px=float(v)))
            cfg = config
        result = run_tta(scene, head, cfg)
        rows.append({axis: v, **report_dict(result.final_report)})
    return rows
