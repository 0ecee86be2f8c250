"""Frozen single-view prior: a latent token per view decoded by a shared linear
head into per-joint 6D rotations and shape coefficients.

Only this last linear layer sits on the gradient path during test-time
adaptation, so it is all that is modelled here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import container
from .bodymodel import PoseParams
from .rotmath import DegenerateRotationError, rotmat_to_6d, sixd_to_rotmat, sixd_to_rotmat_vjp

HEAD_MAGIC = "MVFUSE-HEAD-v1"
N_JOINTS = 24
N_BETAS = 10
P_OUT = N_JOINTS * 6 + N_BETAS
# smallest column scale accepted from the exact token fit
GAUGE_FLOOR = 0.2
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True, eq=False)
class PriorHead:
    W: np.ndarray  # (P_out, D)
    b: np.ndarray  # (P_out,)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError("head needs W (P_out x D) and b (P_out,)")
        if W.shape[0] != P_OUT:
            raise ValueError(f"head output must have {P_OUT} rows, got {W.shape[0]}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("head parameters are not finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.W.shape[1]


def synth_head(seed, D=128, scale=0.05):
    """Random head whose zero token decodes to the identity pose and beta = 0."""
    if D < 1:
        raise ValueError("token dimension must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, scale, size=(P_OUT, D))
    b = np.concatenate([np.tile(IDENTITY_6D, N_JOINTS), np.zeros(N_BETAS)])
    return PriorHead(W, b)


def split_vector(y):
    """Head output vector -> (24 x 6 raw rotations, beta)."""
    y = np.asarray(y, dtype=float)
    return y[: N_JOINTS * 6].reshape(N_JOINTS, 6), y[N_JOINTS * 6 :]


def decode_vector(head, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (head.dim,):
        raise ValueError(f"token has shape {z.shape}, head expects ({head.dim},)")
    return head.W @ z + head.b


def vector_to_body(y):
    """Raw head output -> (R (24, 3, 3), beta); errors name the bad joint."""
    sixd, beta = split_vector(y)
    try:
        R = sixd_to_rotmat(sixd)
    except DegenerateRotationError as exc:
        raise DegenerateRotationError(
            f"joint {exc.index}: degenerate 6D rotation in decoded token", index=exc.index
        ) from None
    return R, beta.copy()


def vector_to_body_vjp(y, dR, dbeta):
    sixd, _ = split_vector(y)
    return np.concatenate([sixd_to_rotmat_vjp(sixd, dR).ravel(), dbeta])


def decode(head, z):
    R, beta = vector_to_body(decode_vector(head, z))
    return PoseParams.from_rotmats(R), beta


def decode_vjp(head, z, dR, dbeta):
    """Gradient with respect to the token of <dR, R(z)> + <dbeta, beta(z)>."""
    y = decode_vector(head, z)
    return head.W.T @ vector_to_body_vjp(y, dR, dbeta)


def body_to_vector(pose, beta):
    R = pose.rotmats if isinstance(pose, PoseParams) else np.asarray(pose)
    return np.concatenate([rotmat_to_6d(R).ravel(), np.asarray(beta, dtype=float)])


class TokenFit(NamedTuple):
    token: np.ndarray
    residual: np.ndarray
    rank_deficient: bool


def fit_token(head, pose, shape, rcond=1e-10):
    """Least-squares token whose decoded vector is closest to the target's 6D/beta
    vector. When the target is outside the head's range the residual is
    nonzero and ``rank_deficient`` is set if W lacks full row rank.
    """
    target = body_to_vector(pose, shape)
    rhs = target - head.b
    z, _, rank, _ = np.linalg.lstsq(head.W, rhs, rcond=rcond)
    residual = rhs - head.W @ z
    return TokenFit(z, residual, rank < head.W.shape[0])


def fit_token_exact(head, pose, shape, rcond=1e-10):
    """Token whose decode reproduces the target rotations exactly.

    Gram-Schmidt ignores the scale of the first column and any multiple of the
    first column added to the second, so each joint's target may be any
    (s r1, u r1 + v r2) with s, v > 0. Solving for those three gauge
    coefficients together with the token makes the target reachable whenever
    D + 72 >= 154, which the plain least-squares fit is not.
    """
    R = pose.rotmats if isinstance(pose, PoseParams) else np.asarray(pose)
    beta = np.asarray(shape, dtype=float)
    D = head.dim
    G = np.zeros((P_OUT, 3 * N_JOINTS))
    for k in range(N_JOINTS):
        r1, r2 = R[k, :, 0], R[k, :, 1]
        rows = slice(6 * k, 6 * k + 6)
        G[rows, 3 * k] = np.concatenate([r1, np.zeros(3)])
        G[rows, 3 * k + 1] = np.concatenate([np.zeros(3), r1])
        G[rows, 3 * k + 2] = np.concatenate([np.zeros(3), r2])
    A = np.hstack([head.W, -G])
    rhs = -head.b.copy()
    rhs[N_JOINTS * 6 :] += beta
    x0 = np.concatenate([np.zeros(D), np.tile([1.0, 0.0, 1.0], N_JOINTS)])
    dx, _, rank, _ = np.linalg.lstsq(A, rhs - A @ x0, rcond=rcond)
    x = x0 + dx
    if rank == P_OUT:
        x = _positive_gauge(A, x, D, rank)
    gauge = x[D:].reshape(N_JOINTS, 3)
    if np.any(gauge[:, 0] <= 0) or np.any(gauge[:, 2] <= 0):
        # no sign-preserving gauge found; the decode would flip an axis
        return fit_token(head, pose, shape, rcond)
    residual = rhs - A @ x
    return TokenFit(x[:D], residual, rank < P_OUT)


def _positive_gauge(A, x, D, rank, floor=GAUGE_FLOOR, max_iter=5000):
    """Move ``x`` within the solution set of A x = const until every column
    scale (gauge entries 0 and 2 of each joint) is at least ``floor``.

    Alternating projections between the affine solution set and the
    half-spaces; returns ``x`` unchanged if it already satisfies the bound.
    """
    lo = np.full(A.shape[1] - D, -np.inf)
    lo[0::3] = floor
    lo[2::3] = floor
    g = x[D:]
    if np.all(g >= lo):
        return x
    _, _, Vt = np.linalg.svd(A)
    N = Vt[rank:].T
    if N.shape[1] == 0:
        return x
    Ng = N[D:]
    Ng_pinv = np.linalg.pinv(Ng)
    c = np.zeros(N.shape[1])
    for _ in range(max_iter):
        gc = g + Ng @ c
        if np.all(gc >= lo - 1e-9):
            break
        c += Ng_pinv @ (np.maximum(gc, lo) - gc)
    return x + N @ c


def head_fields(head, prefix=""):
    return {prefix + "D": np.int64(head.dim), prefix + "P_out": np.int64(P_OUT),
            prefix + "W": head.W, prefix + "b": head.b}


def head_from_fields(fields, prefix=""):
    try:
        D, P = int(fields[prefix + "D"]), int(fields[prefix + "P_out"])
        W, b = fields[prefix + "W"], fields[prefix + "b"]
    except KeyError as exc:
        raise container.MalformedHeaderError(f"head record missing: {exc}") from exc
    if W.shape != (P, D):
        raise container.InvariantError("head W shape disagrees with declared D, P_out")
    try:
        return PriorHead(W, b)
    except ValueError as exc:
        raise container.InvariantError(str(exc)) from exc


def save_head(head, path):
    container.write(path, HEAD_MAGIC, head_fields(head))


def load_head(path):
    return head_from_fields(container.read(path, HEAD_MAGIC))
