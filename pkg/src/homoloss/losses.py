"""The five pose-regression losses plus the oracles validating the
homography-slab closed form.

Losses:
    - posenet_loss:        weighted L2 translation + quaternion difference
    - homoscedastic_loss:  L1 terms scaled by learnable log-variances
    - geometric_loss:      clipped mean L1 reprojection error of scene points
    - max_error_loss:      max(angle in degrees, translation in cm) + unit
                           quaternion regularizer
    - homography_loss_closed: slab integral of squared Frobenius homographic
                           error, in closed form

Oracles (never used in optimization):
    - homography_loss_numeric: midpoint quadrature of the slab integral
    - scalar_form_oracle:      independent algebraic reduction of the closed
                               form
    - sensor_grid_reproj:      dense sensor-grid reprojection quadrature
                               backing sensor_weighted_reproj
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dual
from .dual import value
from .geometry import (
    Homography,
    InvalidInputError,
    Intrinsics,
    PointAtInfinity,
    Pose,
    RelativePose,
    DEPTH_EPS,
    rotmat_elems,
    quat_to_rotmat,
)

DEFAULT_PLANE_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class SlabParams:
    """Plane normal and depth bounds of the homography slab."""

    x_min: float
    x_max: float
    n: np.ndarray = field(default_factory=lambda: DEFAULT_PLANE_NORMAL.copy())

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float))
        if not (0.0 < self.x_min < self.x_max):
            raise InvalidInputError(
                f"slab needs 0 < x_min < x_max, got ({self.x_min}, {self.x_max})"
            )


@dataclass
class LossHyperParams:
    beta: float = 500.0
    s_t: float = 0.0
    s_q: float = -3.0
    reproj_clip: float = 100.0
    quat_reg_weight: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidInputError("beta must be positive")
        if self.reproj_clip <= 0:
            raise InvalidInputError("reproj_clip must be positive")


# -- tiny generic 3x3 matrix algebra (floats or DiffScalars) ---------------

def _mat_sub(A, B):
    return [[A[i][j] - B[i][j] for j in range(3)] for i in range(3)]


def _mat_mul(A, B):
    return [
        [sum(A[i][k] * B[k][j] for k in range(3)) for j in range(3)]
        for i in range(3)
    ]


def _mat_T(A):
    return [[A[j][i] for j in range(3)] for i in range(3)]


def _mat_add(A, B):
    return [[A[i][j] + B[i][j] for j in range(3)] for i in range(3)]


def _outer(u, v):
    return [[u[i] * v[j] for j in range(3)] for i in range(3)]


def _trace(A):
    return A[0][0] + A[1][1] + A[2][2]


_I3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


# -- generic cores: est pose given as 7 (or 9) scalar parameters -----------

def _relative_terms(t_est, q_est, gt: Pose):
    """Relative rotation (nested 3x3) and translation (length-3 list) of the
    ground truth expressed in the normalized estimated frame."""
    R_est = rotmat_elems(q_est)  # normalizes internally
    R_gt = quat_to_rotmat(gt.q)
    R_est_T = _mat_T(R_est)
    R = _mat_mul(R_est_T, [[float(v) for v in row] for row in R_gt])
    d = [gt.t[0] - t_est[0], gt.t[1] - t_est[1], gt.t[2] - t_est[2]]
    t = [sum(R_est_T[i][k] * d[k] for k in range(3)) for i in range(3)]
    return R, t


def _closed_form(R, t, slab: SlabParams):
    """Tr(A + B ln(xmax/xmin)/(xmax-xmin) + C/(xmin xmax)), Frobenius slab
    integral of I - H(x) for H(x) = R - t n^T / x."""
    n = [float(v) for v in slab.n]
    M = _mat_sub(_I3, R)  # I - R
    A = _mat_mul(M, _mat_T(M))
    ntT = _outer(n, t)  # n t^T
    ntTM = _mat_mul(ntT, M)
    B = _mat_add(ntTM, _mat_T(ntTM))
    C = _mat_mul(ntT, _mat_T(ntT))
    c1 = math.log(slab.x_max / slab.x_min) / (slab.x_max - slab.x_min)
    c2 = 1.0 / (slab.x_min * slab.x_max)
    return _trace(A) + _trace(B) * c1 + _trace(C) * c2


def _posenet_core(t_est, q_est, gt: Pose, beta):
    # Estimated quaternion enters raw; only the ground truth is normalized.
    qg = gt.q / np.linalg.norm(gt.q)
    dt = [t_est[i] - gt.t[i] for i in range(3)]
    dq = [q_est[i] - qg[i] for i in range(4)]
    return dual.norm2(dt) + beta * dual.norm2(dq)


def _homoscedastic_core(t_est, q_est, s_t, s_q, gt: Pose):
    norm = dual.norm2(q_est)
    if value(norm) == 0.0:
        raise InvalidInputError("zero-norm estimated quaternion")
    qg = gt.q / np.linalg.norm(gt.q)
    dt = [t_est[i] - gt.t[i] for i in range(3)]
    dq = [qg[i] - q_est[i] / norm for i in range(4)]
    return (
        dual.norm1(dt) * dual.exp(-s_t)
        + s_t
        + dual.norm1(dq) * dual.exp(-s_q)
        + s_q
    )


def _camera_frame_points(t_est, q_est, world_points):
    """Camera-frame coordinates of world points under the estimated pose,
    generic over scalar types."""
    R = rotmat_elems(q_est)
    out = []
    for P in world_points:
        d = [P[0] - t_est[0], P[1] - t_est[1], P[2] - t_est[2]]
        # camera frame: R^T d
        Xc = [sum(R[k][i] * d[k] for k in range(3)) for i in range(3)]
        out.append(Xc)
    return out


def _geometric_core(t_est, q_est, gt: Pose, points, K: Intrinsics, clip):
    if len(points) == 0:
        raise InvalidInputError("geometric loss needs a non-empty point set")
    world = [list(map(float, P)) for P in points]
    # Same arithmetic path as the estimate so the loss is exactly 0 (with a
    # zero subgradient) when the poses coincide.
    gt_pix = []
    for Xc in _camera_frame_points(list(map(float, gt.t)),
                                   list(map(float, gt.q)), world):
        gt_pix.append((
            K.fx * Xc[0] / Xc[2] + K.cx,
            K.fy * Xc[1] / Xc[2] + K.cy,
        ))
    cams = _camera_frame_points(t_est, q_est, world)
    total = 0.0
    for (u0, v0), Xc in zip(gt_pix, cams):
        X, Y, Z = Xc
        if abs(value(Z)) < DEPTH_EPS:
            total = total + clip  # projected to infinity: contributes the clip
            continue
        u = K.fx * X / Z + K.cx
        v = K.fy * Y / Z + K.cy
        d = abs(u - u0) + abs(v - v0)
        total = total + (d if d < clip else clip)
    return total / len(points)


def _maxerror_core(t_est, q_est, gt: Pose, reg_weight):
    qg = gt.q / np.linalg.norm(gt.q)
    qn = dual.norm2(q_est)
    reg = reg_weight * (qn - 1.0) ** 2
    trans_cm = dual.norm2([(t_est[i] - gt.t[i]) * 100.0 for i in range(3)])
    if value(qn) == 0.0:
        # Degenerate attractor: the angle is undefined, only the regularizer
        # and translation terms act.
        return trans_cm + reg
    dot = sum(q_est[i] * qg[i] for i in range(4)) / qn
    absdot = abs(dot)
    if value(absdot) >= 1.0:
        angle = 0.0 * absdot  # acos clamped at 1; derivative taken as 0
    else:
        angle = dual.acos(absdot) * (360.0 / math.pi)
    # Exact ties take the translation branch.
    err = trans_cm if trans_cm >= angle else angle
    return err + reg


def _homography_core(t_est, q_est, gt: Pose, slab: SlabParams):
    R, t = _relative_terms(t_est, q_est, gt)
    return _closed_form(R, t, slab)


# -- public float-facing API ------------------------------------------------

def _split(est: Pose):
    return list(map(float, est.t)), list(map(float, est.q))


def posenet_loss(est: Pose, gt: Pose, beta: float) -> float:
    """L2 translation error + beta * L2 quaternion difference (gt normalized,
    estimate raw)."""
    t, q = _split(est)
    return float(value(_posenet_core(t, q, gt, beta)))


def homoscedastic_loss(est: Pose, gt: Pose, s_t: float, s_q: float) -> float:
    """L1 errors weighted by learnable log-variances s_t, s_q."""
    t, q = _split(est)
    return float(value(_homoscedastic_core(t, q, s_t, s_q, gt)))


def geometric_loss(est: Pose, gt: Pose, points, K: Intrinsics,
                   clip: float) -> float:
    """Mean clipped L1 reprojection error over the visible points.

    A point projecting to infinity under the estimate contributes exactly
    the clip; with clip=inf the loss is non-finite in that case.
    """
    t, q = _split(est)
    return float(value(_geometric_core(t, q, gt, points, K, clip)))


def max_error_loss(est: Pose, gt: Pose, reg_weight: float) -> float:
    """max(rotation angle in degrees, translation in cm) plus
    reg_weight * (||q_est|| - 1)^2."""
    t, q = _split(est)
    return float(value(_maxerror_core(t, q, gt, reg_weight)))


def single_plane_error(H: Homography) -> float:
    """Squared Frobenius norm of I - H."""
    D = np.eye(3) - H.H
    return float(np.sum(D * D))


def sensor_weighted_reproj(H: Homography, w: float, h: float) -> float:
    """Sensor-integrated small-motion reprojection error:
    Tr(diag(h w^3/12, w h^3/12, w h) (I-H)^T (I-H))."""
    if w <= 0 or h <= 0:
        raise InvalidInputError("sensor extents must be positive")
    D = np.eye(3) - H.H
    W = np.diag([h * w**3 / 12.0, w * h**3 / 12.0, w * h])
    return float(np.trace(W @ D.T @ D))


def sensor_grid_reproj(H: Homography, w: float, h: float,
                       n_grid: int = 256) -> float:
    """Dense-grid quadrature of the exact per-pixel reprojection error over
    the sensor, without the small-motion approximation.

    For each sensor point p = (px, py, 1), the homography maps it to
    H p = (x'', y'', s); the reprojection error is |p - Hp/s|^2 including
    the (zero) third component. Integrated with midpoint cells.
    """
    M = H.H
    xs = (np.arange(n_grid) + 0.5) / n_grid * w - w / 2.0
    ys = (np.arange(n_grid) + 0.5) / n_grid * h - h / 2.0
    px, py = np.meshgrid(xs, ys, indexing="ij")
    ones = np.ones_like(px)
    p = np.stack([px, py, ones], axis=-1)  # (n, n, 3)
    Hp = p @ M.T
    s = Hp[..., 2]
    diff = p - Hp / s[..., None]
    e = np.sum(diff * diff, axis=-1)
    cell = (w / n_grid) * (h / n_grid)
    return float(np.sum(e) * cell)


def homography_loss_closed(rel: RelativePose, slab: SlabParams) -> float:
    """Closed-form slab integral of the squared Frobenius homographic error."""
    R = [[float(v) for v in row] for row in rel.R]
    t = [float(v) for v in rel.t]
    return float(value(_closed_form(R, t, slab)))


def homography_loss_numeric(rel: RelativePose, slab: SlabParams,
                            n_samples: int) -> float:
    """Composite-midpoint quadrature of the slab integral (oracle only)."""
    if n_samples < 2:
        raise InvalidInputError("need at least 2 quadrature samples")
    x = slab.x_min + (np.arange(n_samples) + 0.5) * (
        (slab.x_max - slab.x_min) / n_samples
    )
    tn = np.outer(rel.t, slab.n)
    D = (np.eye(3) - rel.R)[None, :, :] + tn[None, :, :] / x[:, None, None]
    vals = np.sum(D * D, axis=(1, 2))
    return float(np.mean(vals))


def scalar_form_oracle(rel: RelativePose, slab: SlabParams) -> float:
    """Independent algebraic reduction of the closed form:
    4(1-cos theta) + 2 t^T (I-R) n * ln(xmax/xmin)/(xmax-xmin)
                   + |t|^2 |n|^2 / (xmin xmax)."""
    R = rel.R
    t = rel.t
    n = slab.n
    cos_theta = max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0))
    term_a = 4.0 * (1.0 - cos_theta)
    term_b = (
        2.0
        * float(t @ (np.eye(3) - R) @ n)
        * math.log(slab.x_max / slab.x_min)
        / (slab.x_max - slab.x_min)
    )
    term_c = float(t @ t) * float(n @ n) / (slab.x_min * slab.x_max)
    return term_a + term_b + term_c


def homography_loss(est: Pose, gt: Pose, slab: SlabParams) -> float:
    """Closed-form homography loss straight from a pose pair."""
    t, q = _split(est)
    return float(value(_homography_core(t, q, gt, slab)))
