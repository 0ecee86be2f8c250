"""Rotation representations: axis-angle, rotation matrix and the continuous 6D form.

All functions broadcast over leading batch dimensions. A 6D rotation is stored
as a length-6 vector ``[a, b]`` holding the first two columns of a rotation
matrix before orthonormalization.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-6
DEGENERATE_6D = 1e-8


class DegenerateRotationError(ValueError):
    """A 6D vector cannot be orthonormalized (zero or parallel columns)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def hat(v):
    """Skew-symmetric matrix of ``v`` (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def cross(a, b):
    """Cross product over the last axis (faster than np.cross for small batches)."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def vee(K):
    return np.stack([K[..., 2, 1], K[..., 0, 2], K[..., 1, 0]], axis=-1)


def aa_to_rotmat(aa):
    """Rodrigues' formula. (..., 3) -> (..., 3, 3)."""
    aa = np.asarray(aa, dtype=float)
    if aa.shape[-1] != 3:
        raise ValueError(f"axis-angle must have trailing dimension 3, got {aa.shape}")
    if not np.all(np.isfinite(aa)):
        raise ValueError("axis-angle input is not finite")
    angle = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = hat(aa)
    KK = K @ K
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    # second-order Taylor terms below SMALL_ANGLE
    s = np.where(small, 1.0, np.sin(safe) / safe)
    c = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + s * K + c * KK


def check_rotmat(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise ValueError(f"rotation matrix must be (..., 3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation matrix is not finite")
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(axis=(-1, -2))
    det = np.linalg.det(R)
    if np.any(err > tol) or np.any(np.abs(det - 1.0) > tol):
        raise ValueError("matrix is not a proper rotation (R^T R != I or det != 1)")
    return R


def _angle_from_matrix(R):
    # atan2 form of arccos((tr - 1) / 2); keeps full precision near 0 and pi
    w = vee(R - np.swapaxes(R, -1, -2))
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c), w, s, c


def rotmat_to_aa(R):
    """Inverse of :func:`aa_to_rotmat` with angle in [0, pi].

    At exactly pi the axis sign is fixed by making its first nonzero
    component nonnegative.
    """
    R = check_rotmat(R)
    angle, w, s, c = _angle_from_matrix(R)
    out = np.empty(R.shape[:-1])

    # generic branch: axis from the antisymmetric part
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(s > 1e-300, angle / np.where(s > 1e-300, 2.0 * s, 1.0), 0.5)
    out[...] = w * scale[..., None]

    # obtuse branch: axis from the symmetric part, sign from the antisymmetric part
    obtuse = c < 0.0
    if np.any(obtuse):
        Ro = R[obtuse]
        co = c[obtuse]
        B = 0.5 * (Ro + np.swapaxes(Ro, -1, -2)) - co[:, None, None] * np.eye(3)
        idx = np.argmax(np.diagonal(B, axis1=-2, axis2=-1), axis=-1)
        cols = B[np.arange(len(idx)), :, idx]
        axis = cols / np.linalg.norm(cols, axis=-1, keepdims=True)
        wo = w[obtuse]
        dot = np.einsum("ni,ni->n", axis, wo)
        tie = np.abs(dot) < 1e-12
        sign = np.where(dot < 0.0, -1.0, 1.0)
        if np.any(tie):
            first = np.array([_first_nonzero_sign(a) for a in axis[tie]])
            sign[tie] = first
        out[obtuse] = axis * (sign * angle[obtuse])[:, None]
    return out


def _first_nonzero_sign(axis):
    for v in axis:
        if abs(v) > 1e-12:
            return 1.0 if v > 0 else -1.0
    return 1.0


def rotmat_to_6d(R):
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def _gram_schmidt(d):
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != 6:
        raise ValueError(f"6D rotation must have trailing dimension 6, got {d.shape}")
    a = d[..., :3]
    b = d[..., 3:]
    n1 = np.linalg.norm(a, axis=-1, keepdims=True)
    bad = (n1[..., 0] < DEGENERATE_6D) | ~np.all(np.isfinite(d), axis=-1)
    c1 = a / np.where(n1 < DEGENERATE_6D, 1.0, n1)
    proj = np.sum(c1 * b, axis=-1, keepdims=True)
    bp = b - proj * c1
    n2 = np.linalg.norm(bp, axis=-1, keepdims=True)
    bad |= n2[..., 0] < DEGENERATE_6D * np.maximum(1.0, np.linalg.norm(b, axis=-1))
    if np.any(bad):
        first = np.argwhere(np.atleast_1d(bad))[0]
        index = int(first[-1]) if first.size else None
        raise DegenerateRotationError(
            "degenerate 6D rotation (zero or parallel columns)", index=index
        )
    c2 = bp / n2
    c3 = cross(c1, c2)
    return (c1, c2, c3), (b, n1, proj, n2)


def sixd_to_rotmat(d):
    """Gram-Schmidt decode of a 6D rotation. (..., 6) -> (..., 3, 3)."""
    (c1, c2, c3), _ = _gram_schmidt(d)
    return np.stack([c1, c2, c3], axis=-1)


def sixd_to_rotmat_vjp(d, dR):
    """Pull a cotangent on the decoded matrix back to the raw 6D input."""
    (c1, c2, c3), (b, n1, proj, n2) = _gram_schmidt(d)
    g1 = dR[..., :, 0]
    g2 = dR[..., :, 1]
    g3 = dR[..., :, 2]
    # c3 = c1 x c2
    g1 = g1 + cross(c2, g3)
    g2 = g2 + cross(g3, c1)
    # c2 = bp / |bp|
    gbp = (g2 - c2 * np.sum(c2 * g2, axis=-1, keepdims=True)) / n2
    # bp = b - (c1.b) c1
    gb = gbp - c1 * np.sum(c1 * gbp, axis=-1, keepdims=True)
    g1 = g1 - proj * gbp - b * np.sum(c1 * gbp, axis=-1, keepdims=True)
    # c1 = a / |a|
    ga = (g1 - c1 * np.sum(c1 * g1, axis=-1, keepdims=True)) / n1
    return np.concatenate([ga, gb], axis=-1)


def geodesic_dist(R1, R2):
    """Angle of the relative rotation R1^T R2, in [0, pi]."""
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    angle, _, _, _ = _angle_from_matrix(np.swapaxes(R1, -1, -2) @ R2)
    return angle


def random_rotations(rng, n, max_angle=np.pi):
    """Uniform axes with angles uniform in (0, max_angle)."""
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(0.0, max_angle, size=(n, 1))
    return aa_to_rotmat(axis * angle)
