"""Plain data containers shared by the generator, optimizer and file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bodymodel import BodyModel, PoseParams
from .camera import CameraModel
from .prior import PriorHead


@dataclass(frozen=True)
class Detection2D:
    """2D pseudo ground truth: rows are (u, v, confidence)."""

    kp: np.ndarray  # (44, 3)
    ana: np.ndarray  # (35, 3)

    def __post_init__(self):
        for arr in (self.kp, self.ana):
            if not np.all(np.isfinite(arr)):
                raise ValueError("detections must be finite")
            if np.any(arr[:, 2] < 0) or np.any(arr[:, 2] > 1):
                raise ValueError("confidence outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    pose: PoseParams  # root orientation in the world frame
    beta: np.ndarray
    joints3d: np.ndarray  # world frame
    vertices: np.ndarray  # world frame
    pelvis: np.ndarray  # world pelvis position


@dataclass(frozen=True, eq=False)
class Scene:
    model: BodyModel
    head: PriorHead
    cameras: tuple
    detections: tuple
    tokens: np.ndarray  # (N, D) prior tokens, one per view
    calibrated: bool
    gt: Optional[GroundTruth] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_views(self):
        return len(self.cameras)

    def subset(self, views):
        """Scene restricted to the listed view indices."""
        views = list(views)
        meta = dict(self.meta)
        if "view_rotations" in meta:
            meta["view_rotations"] = np.asarray(meta["view_rotations"])[views].copy()
        return replace(
            self,
            cameras=tuple(self.cameras[i] for i in views),
            detections=tuple(self.detections[i] for i in views),
            tokens=self.tokens[views].copy(),
            meta=meta,
        )

    def extrinsics(self):
        if not self.calibrated:
            return None
        return [cam.extrinsics for cam in self.cameras]
