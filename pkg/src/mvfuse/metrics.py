"""Evaluation metrics. 3D inputs are in meters, reported errors in millimeters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.linspace(0.0, 150.0, 31)


@dataclass(frozen=True)
class MetricReport:
    mpjpe: float
    pa_mpjpe: float
    mpvpe: float
    pck: float
    auc: float
    epe: float


def report_dict(report):
    return asdict(report)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def _aligned_errors_mm(pred, gt, pelvis_index):
    pred, gt = _pair(pred, gt)
    pred = pred - pred[pelvis_index]
    gt = gt - gt[pelvis_index]
    return 1000.0 * np.linalg.norm(pred - gt, axis=1)


def mpjpe(pred, gt, pelvis_index=0):
    return float(_aligned_errors_mm(pred, gt, pelvis_index).mean())


def mpvpe(pred_verts, gt_verts, pelvis):
    """Per-vertex error after aligning a pelvis position.

    ``pelvis`` is either an index into the vertex arrays or a pair of
    (pred_pelvis, gt_pelvis) 3-vectors.
    """
    pred, gt = _pair(pred_verts, gt_verts)
    if np.ndim(pelvis) == 0:
        return mpjpe(pred, gt, int(pelvis))
    p_pred, p_gt = (np.asarray(p, dtype=float) for p in pelvis)
    return float(1000.0 * np.linalg.norm((pred - p_pred) - (gt - p_gt), axis=1).mean())


def procrustes_align(pred, gt):
    """Least-squares similarity transform of ``pred`` onto ``gt``."""
    pred, gt = _pair(pred, gt)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    X = pred - mu_p
    Y = gt - mu_g
    sv = np.linalg.svd(Y, compute_uv=False)
    if sv.size < 2 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise ValueError("ground truth is degenerate (collinear) for Procrustes alignment")
    U, S, Vt = np.linalg.svd(X.T @ Y)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt  # applied as X @ R
    var_x = (X**2).sum()
    scale = (S * np.diag(D)).sum() / var_x if var_x > 0 else 0.0
    return scale * X @ R + mu_g


def pa_mpjpe(pred, gt):
    aligned = procrustes_align(pred, gt)
    return float(1000.0 * np.linalg.norm(aligned - gt, axis=1).mean())


def pck(pred, gt, threshold_mm=PCK_THRESHOLD_MM, pelvis_index=0):
    if not threshold_mm > 0:
        raise ValueError("threshold must be positive")
    err = _aligned_errors_mm(pred, gt, pelvis_index)
    return float(100.0 * np.mean(err <= threshold_mm))


def auc(pred, gt, thresholds=AUC_THRESHOLDS_MM, pelvis_index=0):
    """Trapezoidal area under the PCK curve divided by the threshold span."""
    t = np.asarray(thresholds, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("need at least two strictly increasing thresholds")
    err = _aligned_errors_mm(pred, gt, pelvis_index)
    curve = 100.0 * (err[None, :] <= t[:, None]).mean(axis=1)
    area = np.sum(0.5 * (curve[1:] + curve[:-1]) * np.diff(t))
    return float(area / (t[-1] - t[0]))


def epe(pred2d, gt2d):
    pred, gt = _pair(pred2d, gt2d)
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def evaluate(pred_joints, gt_joints, pred_verts, gt_verts, epe_px=0.0, pelvis_index=0):
    """Full report for one body; vertices are aligned on the joint pelvis."""
    pelvis = (np.asarray(pred_joints)[pelvis_index], np.asarray(gt_joints)[pelvis_index])
    return MetricReport(
        mpjpe=mpjpe(pred_joints, gt_joints, pelvis_index),
        pa_mpjpe=pa_mpjpe(pred_joints, gt_joints),
        mpvpe=mpvpe(pred_verts, gt_verts, pelvis),
        pck=pck(pred_joints, gt_joints, pelvis_index=pelvis_index),
        auc=auc(pred_joints, gt_joints, pelvis_index=pelvis_index),
        epe=float(epe_px),
    )
