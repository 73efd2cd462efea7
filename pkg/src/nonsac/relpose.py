"""Relative pose from 2D-2D correspondences: 5-point solver inside RANSAC."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation as _Rot

from .geometry import (
    DegenerateDecomposition,
    RigidTransform,
    decompose_essential,
    essential_from_pose,
    homogeneous,
    normalize_essential,
    sampson_error,
)
from .ransac import EstimationFailed, EstimatorOutput, RansacConfig, ransac, refit_consensus

MINIMAL_SIZE = 5


def _monomials(max_degree: int) -> list[tuple[int, int, int]]:
    return [
        e for e in product(range(max_degree + 1), repeat=3) if sum(e) <= max_degree
    ]


# Monomials in (x, y, z) for E = x X + y Y + z Z + W.
_LIN = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_QUAD = sorted(_monomials(2), key=lambda e: (-sum(e), [-v for v in e]))
# Cubic monomials first (eliminated), then the ten of degree <= 2 which form
# the basis of the quotient ring for a generic instance.
_CUBIC_ONLY = sorted([e for e in _monomials(3) if sum(e) == 3], key=lambda e: [-v for v in e])
_BASIS = _QUAD
_CUBE = _CUBIC_ONLY + _BASIS


def _mul_table(left, right, out):
    index = {e: k for k, e in enumerate(out)}
    T = np.zeros((len(left), len(right), len(out)))
    for i, a in enumerate(left):
        for j, b in enumerate(right):
            T[i, j, index[tuple(p + q for p, q in zip(a, b))]] = 1.0
    return T


_T_LL = _mul_table(_LIN, _LIN, _QUAD)
_T_QL = _mul_table(_QUAD, _LIN, _CUBE)

# Action matrix for multiplication by x on the basis monomials.
_ACTION_ROWS: list[tuple[str, int]] = []
for _e in _BASIS:
    _m = (_e[0] + 1, _e[1], _e[2])
    if _m in _CUBIC_ONLY:
        _ACTION_ROWS.append(("reduce", _CUBIC_ONLY.index(_m)))
    else:
        _ACTION_ROWS.append(("basis", _BASIS.index(_m)))
_IX = _BASIS.index((1, 0, 0))
_IY = _BASIS.index((0, 1, 0))
_IZ = _BASIS.index((0, 0, 1))
_I1 = _BASIS.index((0, 0, 0))


def _constraint_matrix(N: np.ndarray) -> np.ndarray:
    """(B, 10, 20) coefficients of the cubic essential-matrix constraints.

    ``N`` holds the four null-space matrices as (B, 4, 3, 3), ordered to match
    the (x, y, z, 1) monomials.
    """
    E = np.moveaxis(N, 1, -1)  # (B, 3, 3, 4): linear polynomial per entry
    EEt = np.einsum("bikl,bjkm,lmn->bijn", E, E, _T_LL)
    trace = np.einsum("biin->bn", EEt)
    EEtE = np.einsum("bikn,bkjl,nlo->bijo", EEt, E, _T_QL)
    trE = np.einsum("bn,bijl,nlo->bijo", trace, E, _T_QL)
    trace_eqs = (2.0 * EEtE - trE).reshape(len(N), 9, len(_CUBE))
    # det(E) via the cofactors of the first row.
    cof = np.stack(
        [
            np.einsum("bl,bm,lmn->bn", E[:, 1, 1], E[:, 2, 2], _T_LL)
            - np.einsum("bl,bm,lmn->bn", E[:, 1, 2], E[:, 2, 1], _T_LL),
            np.einsum("bl,bm,lmn->bn", E[:, 1, 2], E[:, 2, 0], _T_LL)
            - np.einsum("bl,bm,lmn->bn", E[:, 1, 0], E[:, 2, 2], _T_LL),
            np.einsum("bl,bm,lmn->bn", E[:, 1, 0], E[:, 2, 1], _T_LL)
            - np.einsum("bl,bm,lmn->bn", E[:, 1, 1], E[:, 2, 0], _T_LL),
        ],
        axis=1,
    )
    det = np.einsum("bjn,bjl,nlo->bo", cof, E[:, 0], _T_QL)
    return np.concatenate([det[:, None, :], trace_eqs], axis=1)


def five_point_solve_batch(x1: np.ndarray, x2: np.ndarray):
    """Essential matrices for a batch of minimal problems.

    Args:
        x1, x2: (B, 5, 2) normalized image points in view 1 and view 2.

    Returns:
        ``(E, valid)`` with E of shape (B, 10, 3, 3), each matrix normalized to
        unit Frobenius norm with its first non-zero entry positive, and a
        (B, 10) boolean mask of real solutions. Degenerate problems (rank
        deficient constraint system) get no valid solutions.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    B = len(x1)
    out = np.zeros((B, 10, 3, 3))
    valid = np.zeros((B, 10), dtype=bool)
    if B == 0:
        return out, valid
    q1 = homogeneous(x1)
    q2 = homogeneous(x2)
    Q = np.einsum("bni,bnj->bnij", q2, q1).reshape(B, 5, 9)
    _, s, Vt = np.linalg.svd(Q, full_matrices=True)
    ok = s[:, 4] > 1e-10 * s[:, 0]
    N = Vt[:, 5:9].reshape(B, 4, 3, 3)

    A = _constraint_matrix(N)
    Ac = A[:, :, : len(_CUBIC_ONLY)]
    Ab = A[:, :, len(_CUBIC_ONLY):]
    cond = np.linalg.cond(Ac)
    ok &= np.isfinite(cond) & (cond < 1e12)
    Ac = np.where(ok[:, None, None], Ac, np.eye(10))
    G = np.linalg.solve(Ac, Ab)  # cubic monomial = -G @ basis

    M = np.zeros((B, 10, 10))
    for row, (kind, k) in enumerate(_ACTION_ROWS):
        if kind == "basis":
            M[:, row, k] = 1.0
        else:
            M[:, row, :] = -G[:, k, :]
    M = np.where(ok[:, None, None], M, np.eye(10))
    w, V = np.linalg.eig(M)

    scale = V[:, _I1, :]
    real = np.abs(w.imag) <= 1e-8 * np.maximum(1.0, np.abs(w.real))
    real &= np.abs(scale) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        sol = (V[:, [_IX, _IY, _IZ], :] / scale[:, None, :]).real  # (B, 3, 10)
    coeffs = np.concatenate([sol, np.ones((B, 1, 10))], axis=1)
    E = np.einsum("bks,bkij->bsij", coeffs, N)
    norms = np.linalg.norm(E, axis=(2, 3))
    real &= np.isfinite(norms) & (norms > 0)
    real &= ok[:, None]
    E = np.where(real[..., None, None], E, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        E = E / np.where(real, norms, 1.0)[..., None, None]
    # Canonical sign: first entry with magnitude above 1e-12 is positive.
    flat = E.reshape(B, 10, 9)
    first = np.argmax(np.abs(flat) > 1e-12, axis=2)
    sign = np.sign(np.take_along_axis(flat, first[..., None], axis=2)[..., 0])
    sign[sign == 0] = 1.0
    E = E * sign[..., None, None]
    out[:] = E
    valid[:] = real
    return out, valid


def five_point_solve(x1: np.ndarray, x2: np.ndarray) -> list[np.ndarray]:
    """All real essential matrices consistent with five correspondences."""
    x1 = np.asarray(x1, dtype=float).reshape(1, 5, 2)
    x2 = np.asarray(x2, dtype=float).reshape(1, 5, 2)
    if len(np.unique(np.round(x1[0], 12), axis=0)) < 5 or len(np.unique(np.round(x2[0], 12), axis=0)) < 5:
        return []
    E, valid = five_point_solve_batch(x1, x2)
    return [E[0, k] for k in np.flatnonzero(valid[0])]


def _solver(x1, x2):
    def solve(idx):
        E, valid = five_point_solve_batch(x1[idx], x2[idx])
        return E, valid

    return solve


@dataclass
class RelativePose:
    """Essential matrix plus its cheirality-selected factorization."""

    E: np.ndarray
    pose: RigidTransform

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.rotation


def _signed_sampson(E, q1, q2):
    Ex1 = q1 @ E.T
    Etx2 = q2 @ E
    alg = np.sum(q2 * Ex1, axis=1)
    den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    return alg / np.sqrt(np.maximum(den, 1e-30))


def refine_relpose(pose: RigidTransform, x1: np.ndarray, x2: np.ndarray) -> RigidTransform:
    """Least-squares refit of (R, unit t) to the given correspondences (Sampson distance)."""
    R0 = pose.rotation
    t0 = pose.translation / np.linalg.norm(pose.translation)
    # tangent basis of the unit sphere at t0
    basis = np.linalg.svd(t0[None, :])[2][1:]
    q1 = homogeneous(x1)
    q2 = homogeneous(x2)

    def unpack(v):
        R = _Rot.from_rotvec(v[:3]).as_matrix() @ R0
        t = t0 + v[3:] @ basis
        return R, t / np.linalg.norm(t)

    def fun(v):
        R, t = unpack(v)
        return _signed_sampson(essential_from_pose(R, t), q1, q2)

    if len(x1) < 5:
        return pose
    sol = least_squares(fun, np.zeros(5), method="lm", max_nfev=100)
    R, t = unpack(sol.x)
    return RigidTransform(R, t)


def relpose_residuals(model, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    E = model.E if isinstance(model, RelativePose) else model
    return sampson_error(x1, x2, E)


def estimate_relpose(x1: np.ndarray, x2: np.ndarray, config: RansacConfig, rng=None,
                     budget_scale: int = 1) -> EstimatorOutput:
    """Fixed-budget RANSAC with the 5-point solver and Sampson inlier test.

    ``config.inlier_threshold`` is compared against Sampson errors, so for
    image noise ``sigma`` it should be ``(5 * sigma) ** 2``.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    out = ransac(
        len(x1),
        _solver(x1, x2),
        lambda E: sampson_error(x1, x2, E),
        MINIMAL_SIZE,
        config,
        rng=rng,
        budget_scale=budget_scale,
    )
    inl = out.inlier_indices
    try:
        pose = decompose_essential(out.model, x1[inl], x2[inl])
    except DegenerateDecomposition as exc:
        raise EstimationFailed(str(exc)) from exc
    out.model = RelativePose(out.model, pose)
    if config.refine:
        def refit(model, idx):
            pose = refine_relpose(model.pose, x1[idx], x2[idx])
            E = normalize_essential(essential_from_pose(pose.rotation, pose.translation))
            return RelativePose(E, pose)

        refit_consensus(out, refit, lambda model: sampson_error(x1, x2, model.E),
                        config.inlier_threshold, power=1.0)
    return out
