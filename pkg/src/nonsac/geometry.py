"""Rotations, rigid transforms and two-view epipolar helpers.

Conventions used throughout the package:

* rotation matrices map points of frame 1 into frame 2: ``X2 = R @ X1 + t``;
* quaternions are stored scalar-first ``(w, x, y, z)``;
* the essential matrix is ``E = [t]x R`` so that ``x2^T E x1 = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

log = logging.getLogger(__name__)

# Sampson denominators below this are treated as degenerate.
SAMPSON_DEGENERATE_EPS = 1e-15


class DegenerateDecomposition(ValueError):
    """No (R, t) candidate of an essential matrix passes the cheirality test."""


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector (or a stack of them)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) ``(w, x, y, z)`` with ``w >= 0`` for rotation matrices."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    xyzw = _ScipyRotation.from_matrix(flat).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    q[q[:, 0] < 0] *= -1
    return q.reshape(R.shape[:-2] + (4,))


def axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Rotation matrix for a rotation of ``angle_deg`` degrees about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = np.deg2rad(angle_deg) / 2
    return quat_to_matrix(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def rotation_distance_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Angle in degrees of the relative rotation ``a @ b.T``.

    Works on single matrices or broadcastable stacks. The angle is taken from
    the relative quaternion as ``2 * atan2(|v|, |w|)``, which keeps full
    precision near 0 deg where ``acos`` of the trace does not.
    """
    rel = np.asarray(a, dtype=float) @ np.swapaxes(np.asarray(b, dtype=float), -1, -2)
    q = matrix_to_quat(rel)
    ang = 2.0 * np.degrees(np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0])))
    return float(ang) if np.ndim(ang) == 0 else ang


def pairwise_rotation_distances(rotations: np.ndarray) -> np.ndarray:
    """Symmetric (m, m) matrix of rotation distances in degrees."""
    rotations = np.asarray(rotations, dtype=float)
    d = rotation_distance_deg(rotations[:, None], rotations[None, :])
    d = np.atleast_2d(d)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3) (normalized 4-D Gaussian quaternion)."""
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.standard_normal(4)
    return quat_to_matrix(q / np.linalg.norm(q))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return bool(
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation matrix (Frobenius) to ``M``."""
    U, _, Vt = np.linalg.svd(M)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


# ---------------------------------------------------------------------------
# epipolar geometry
# ---------------------------------------------------------------------------

def homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def essential_from_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    return skew(t) @ R


def normalize_essential(E: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm and make the first non-zero entry positive."""
    E = np.asarray(E, dtype=float)
    E = E / np.linalg.norm(E)
    flat = E.ravel()
    nz = np.flatnonzero(np.abs(flat) > 1e-12)
    if nz.size and flat[nz[0]] < 0:
        E = -E
    return E


def sampson_error(pt1, pt2, E, return_degenerate: bool = False):
    """First-order geometric error of correspondences under essential matrices.

    ``pt1`` and ``pt2`` are (..., 2) normalized image points; ``E`` is (3, 3) or
    a stack (H, 3, 3), in which case the result has shape (H, N). Where the
    Sampson denominator vanishes the squared algebraic error is returned
    instead and, with ``return_degenerate=True``, flagged in a boolean mask.
    """
    x1 = homogeneous(pt1)
    x2 = homogeneous(pt2)
    E = np.asarray(E, dtype=float)
    Ex1 = np.einsum("...ij,nj->...ni", E, np.atleast_2d(x1))
    Etx2 = np.einsum("...ji,nj->...ni", E, np.atleast_2d(x2))
    alg = np.einsum("...ni,ni->...n", Ex1, np.atleast_2d(x2))
    den = Ex1[..., 0] ** 2 + Ex1[..., 1] ** 2 + Etx2[..., 0] ** 2 + Etx2[..., 1] ** 2
    degenerate = den < SAMPSON_DEGENERATE_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(degenerate, alg**2, alg**2 / np.where(degenerate, 1.0, den))
    if np.ndim(pt1) == 1:
        err = err[..., 0]
        degenerate = degenerate[..., 0]
    if degenerate.any():
        log.debug("sampson_error: %d degenerate denominators", int(degenerate.sum()))
    if return_degenerate:
        return err, degenerate
    return err


def triangulate_depths(R, t, x1, x2):
    """Least-squares depths (d1, d2) with ``d2 * x2h = R @ (d1 * x1h) + t``.

    ``R`` and ``t`` may carry a leading candidate axis; points are (N, 2).
    """
    a = np.einsum("...ij,nj->...ni", R, homogeneous(x1))
    b = -np.broadcast_to(homogeneous(x2), a.shape)
    # Solve [a b] [d1 d2]^T = -t in the least-squares sense.
    rhs = -np.asarray(t)[..., None, :]
    aa = np.sum(a * a, -1)
    ab = np.sum(a * b, -1)
    bb = np.sum(b * b, -1)
    ar = np.sum(a * rhs, -1)
    br = np.sum(b * rhs, -1)
    det = aa * bb - ab * ab
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (bb * ar - ab * br) / det
        d2 = (aa * br - ab * ar) / det
    return d1, d2


def pose_candidates(E: np.ndarray):
    """The four (R, t) factorizations of an essential matrix, t unit-norm."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Ra = U @ W @ Vt
    Rb = U @ W.T @ Vt
    t = U[:, 2]
    Rs = np.stack([Ra, Ra, Rb, Rb])
    ts = np.stack([t, -t, t, -t])
    return Rs, ts


def decompose_essential(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> RigidTransform:
    """Pick the factorization of ``E`` that puts most points in front of both cameras.

    ``x1``/``x2`` are the (N, 2) inlier correspondences used for the cheirality
    vote. Raises :class:`DegenerateDecomposition` if ``E`` is not a usable
    essential matrix or if no candidate has any point in front of both views.
    """
    x1 = np.atleast_2d(x1)
    x2 = np.atleast_2d(x2)
    if len(x1) == 0:
        raise DegenerateDecomposition("degenerate decomposition: no correspondences")
    s = np.linalg.svd(E, compute_uv=False)
    if s[0] <= 0 or s[1] / s[0] < 1e-8:
        raise DegenerateDecomposition("degenerate decomposition: rank of E below 2")
    Rs, ts = pose_candidates(E)
    d1, d2 = triangulate_depths(Rs, ts, x1, x2)
    good = np.sum((d1 > 0) & (d2 > 0), axis=1)
    best = int(np.argmax(good))
    if good[best] == 0:
        raise DegenerateDecomposition("degenerate decomposition: cheirality fails for all candidates")
    return RigidTransform(Rs[best], ts[best] / np.linalg.norm(ts[best]))


def translation_direction_error_deg(t_est: np.ndarray, t_gt: np.ndarray) -> float:
    """Angle between translation directions; diagnostic only."""
    a = t_est / np.linalg.norm(t_est)
    b = t_gt / np.linalg.norm(t_gt)
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))))


def kabsch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rigid fit ``dst ≈ R @ src + t`` for stacks of point sets.

    ``src`` and ``dst`` are (..., n, 3). Returns ``(R, t)`` with shapes
    (..., 3, 3) and (..., 3); the reflection guard keeps ``det(R) = +1``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs = src.mean(axis=-2)
    cd = dst.mean(axis=-2)
    H = np.einsum("...ni,...nj->...ij", src - cs[..., None, :], dst - cd[..., None, :])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.swapaxes(Vt, -1, -2) @ np.swapaxes(U, -1, -2)))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(d.shape + (3, 3))
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = d
    R = np.swapaxes(Vt, -1, -2) @ D @ np.swapaxes(U, -1, -2)
    t = cd - np.einsum("...ij,...j->...i", R, cs)
    return R, t
