"""Multi-view human body fitting by test-time adaptation of single-view priors.

The package works on plain numpy arrays: a small parametric body model, camera
projection, a linear prior head, losses with hand-written gradients, the
adaptation loop, metrics and a synthetic scene generator with known truth.
"""

from .bodymodel import BodyModel, MeshResult, PoseParams, forward, load_model, save_model
from .camera import CameraModel, Extrinsics, Intrinsics, project
from .losses import LossWeights
from .metrics import MetricReport, evaluate
from .optimizer import NumericalAbort, TTAConfig, TTAResult, optimize_smpl_direct, run_tta
from .prior import PriorHead, decode, fit_token, load_head, save_head, synth_head
from .sceneio import export_result, load_scene, save_scene
from .synth import SceneSpec, generate_scene, make_rig, sweep

__version__ = "0.1.0"

__all__ = [
    "BodyModel", "MeshResult", "PoseParams", "forward", "load_model", "save_model",
    "CameraModel", "Extrinsics", "Intrinsics", "project", "LossWeights", "MetricReport",
    "evaluate", "NumericalAbort", "TTAConfig", "TTAResult", "optimize_smpl_direct", "run_tta",
    "PriorHead", "decode", "fit_token", "load_head", "save_head", "synth_head",
    "export_result", "load_scene", "save_scene", "SceneSpec", "generate_scene", "make_rig",
    "sweep",
]
