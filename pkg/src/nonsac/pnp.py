"""Absolute camera pose from 3D-2D correspondences: P3P inside RANSAC.

The P3P solver follows Grunert's distance formulation. With unit bearings
f_i and unknown depths s_i, the law of cosines on each pair of points gives
three quadratics; writing s2 = u s1 and s3 = v s1 and eliminating s1 leaves
two quadratics in u whose resultant is a quartic in v.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation as _Rot

from .geometry import RigidTransform, homogeneous, kabsch
from .ransac import EstimatorOutput, RansacConfig, ransac, refit_consensus

MINIMAL_SIZE = 3


def _pmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product of polynomials stored as ascending coefficients (B, k)."""
    out = np.zeros((a.shape[0], a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[1]):
        out[:, i:i + b.shape[1]] += a[:, i:i + 1] * b
    return out


def _psub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    k = max(a.shape[1], b.shape[1])
    a = np.pad(a, ((0, 0), (0, k - a.shape[1])))
    b = np.pad(b, ((0, 0), (0, k - b.shape[1])))
    return a - b


def _quartic_roots(c: np.ndarray):
    """Roots of batched quartics (ascending coefficients, shape (B, 5)).

    Returns (B, 4) complex roots and a validity mask; instances whose leading
    coefficient vanishes relative to the others are marked invalid.
    """
    B = len(c)
    scale = np.max(np.abs(c), axis=1)
    ok = np.abs(c[:, 4]) > 1e-12 * np.where(scale > 0, scale, 1.0)
    lead = np.where(ok, c[:, 4], 1.0)
    comp = np.zeros((B, 4, 4))
    comp[:, 1:, :3] = np.eye(3)
    comp[:, :, 3] = -c[:, :4] / lead[:, None]
    roots = np.linalg.eigvals(comp)
    return roots, ok


def _polish(c: np.ndarray, v: np.ndarray, steps: int = 2) -> np.ndarray:
    d = c[:, 1:] * np.arange(1, 5)
    for _ in range(steps):
        f = np.polynomial.polynomial.polyval(v, c.T, tensor=False)
        df = np.polynomial.polynomial.polyval(v, d.T, tensor=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(df) > 1e-300, f / df, 0.0)
        v = v - np.where(np.isfinite(step), step, 0.0)
    return v


def p3p_solve_batch(X: np.ndarray, x: np.ndarray):
    """Camera poses for a batch of P3P problems.

    Args:
        X: (B, 3, 3) world points.
        x: (B, 3, 2) normalized image observations.

    Returns:
        ``(P, valid)``: P is (B, 4, 3, 4) with each ``[R | t]`` mapping world
        points into the camera frame, valid is a (B, 4) mask. Collinear or
        duplicated world points give no valid solution.
    """
    X = np.asarray(X, dtype=float)
    x = np.asarray(x, dtype=float)
    B = len(X)
    P = np.zeros((B, 4, 3, 4))
    valid = np.zeros((B, 4), dtype=bool)
    if B == 0:
        return P, valid
    f = homogeneous(x)
    f /= np.linalg.norm(f, axis=-1, keepdims=True)
    a = np.linalg.norm(X[:, 1] - X[:, 2], axis=1)  # opposite point 1
    b = np.linalg.norm(X[:, 0] - X[:, 2], axis=1)
    c = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    area = np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)
    longest = np.maximum(np.maximum(a, b), c)
    ok = area > 1e-10 * np.maximum(longest, 1e-300) ** 2
    ok &= np.min(np.stack([a, b, c]), axis=0) > 1e-12
    c12 = np.sum(f[:, 0] * f[:, 1], axis=1)
    c13 = np.sum(f[:, 0] * f[:, 2], axis=1)
    c23 = np.sum(f[:, 1] * f[:, 2], axis=1)
    a2, b2, cc2 = a * a, b * b, c * c
    zero = np.zeros(B)
    # q13(v) = 1 + v^2 - 2 v c13
    q13 = np.stack([np.ones(B), -2 * c13, np.ones(B)], axis=1)
    # Eq1: b2 (u^2 + v^2 - 2 u v c23) - a2 q13 = 0 ; Eq2: b2 (1 + u^2 - 2 u c12) - c2 q13 = 0
    A2 = np.stack([b2], axis=1)
    A1 = np.stack([zero, -2 * b2 * c23], axis=1)
    A0 = _psub(np.stack([zero, zero, b2], axis=1), a2[:, None] * q13)
    B2 = np.stack([b2], axis=1)
    B1 = np.stack([-2 * b2 * c12], axis=1)
    B0 = _psub(np.stack([b2], axis=1), cc2[:, None] * q13)
    t1 = _psub(_pmul(A2, B0), _pmul(A0, B2))
    t2 = _psub(_pmul(A2, B1), _pmul(A1, B2))
    t3 = _psub(_pmul(A1, B0), _pmul(A0, B1))
    quart = _psub(_pmul(t1, t1), _pmul(t2, t3))
    quart = np.pad(quart, ((0, 0), (0, max(0, 5 - quart.shape[1]))))[:, :5]
    roots, qok = _quartic_roots(quart)
    ok &= qok
    real = np.abs(roots.imag) <= 1e-6 * np.maximum(1.0, np.abs(roots.real))
    v = _polish(quart[:, None, :].repeat(4, 1).reshape(-1, 5), roots.real.reshape(-1)).reshape(B, 4)

    q = 1 + v * v - 2 * v * c13[:, None]
    num = (a2 - cc2)[:, None] * q - b2[:, None] * (v * v - 1)
    den = 2 * b2[:, None] * (c12[:, None] - v * c23[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = num / den
        s1 = b[:, None] / np.sqrt(q)
    s2 = u * s1
    s3 = v * s1
    good = real & ok[:, None] & np.isfinite(s1) & np.isfinite(u) & (np.abs(den) > 1e-14)
    good &= (s1 > 0) & (s2 > 0) & (s3 > 0)
    S = np.stack([s1, s2, s3], axis=-1)  # (B, 4, 3)
    S = np.where(good[..., None], S, 1.0)
    cam = S[..., None] * f[:, None]  # (B, 4, 3, 3)
    R, t = kabsch(np.broadcast_to(X[:, None], cam.shape), cam)
    P[..., :3] = R
    P[..., 3] = t
    valid[:] = good
    return P, valid


def p3p_solve(X: np.ndarray, x: np.ndarray) -> list[RigidTransform]:
    """All poses consistent with three 3D-2D correspondences (at most four)."""
    P, valid = p3p_solve_batch(np.asarray(X, float)[None], np.asarray(x, float)[None])
    return [RigidTransform(P[0, k, :, :3], P[0, k, :, 3]) for k in np.flatnonzero(valid[0])]


def reprojection_errors(P: np.ndarray, X: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Euclidean reprojection distance in the normalized image plane.

    ``P`` is (3, 4) or (H, 3, 4). Points at or behind the camera get +inf.
    """
    P = np.asarray(P, dtype=float)
    Y = np.einsum("...ij,nj->...ni", P[..., :3], X) + P[..., None, :, 3]
    z = Y[..., 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = Y[..., :2] / np.where(front, z, 1.0)[..., None]
    err = np.linalg.norm(proj - x, axis=-1)
    return np.where(front, err, np.inf)


def refine_pnp(pose: RigidTransform, X: np.ndarray, x: np.ndarray) -> RigidTransform:
    """Least-squares refit of a camera pose to 3D-2D correspondences (reprojection error)."""
    if len(X) < 3:
        return pose
    R0, t0 = pose.rotation, pose.translation

    def unpack(v):
        return _Rot.from_rotvec(v[:3]).as_matrix() @ R0, t0 + v[3:]

    def fun(v):
        R, t = unpack(v)
        Y = X @ R.T + t
        z = np.where(np.abs(Y[:, 2]) > 1e-12, Y[:, 2], 1e-12)
        return (Y[:, :2] / z[:, None] - x).ravel()

    sol = least_squares(fun, np.zeros(6), method="lm", max_nfev=100)
    R, t = unpack(sol.x)
    return RigidTransform(R, t)


def estimate_pnp(X: np.ndarray, x: np.ndarray, config: RansacConfig, rng=None,
                 budget_scale: int = 1) -> EstimatorOutput:
    """RANSAC over P3P; ``config.inlier_threshold`` is an unsquared distance (5 sigma)."""
    X = np.asarray(X, dtype=float)
    x = np.asarray(x, dtype=float)
    out = ransac(
        len(X),
        lambda idx: p3p_solve_batch(X[idx], x[idx]),
        lambda P: reprojection_errors(P, X, x),
        MINIMAL_SIZE,
        config,
        rng=rng,
        budget_scale=budget_scale,
    )
    out.model = RigidTransform(out.model[:, :3].copy(), out.model[:, 3].copy())
    if config.refine:
        refit_consensus(
            out,
            lambda pose, idx: refine_pnp(pose, X[idx], x[idx]),
            lambda pose: reprojection_errors(np.column_stack([pose.rotation, pose.translation]), X, x),
            config.inlier_threshold,
        )
    return out
