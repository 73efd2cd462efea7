"""Rigid registration from 3D-3D correspondences with pairwise-distance prescreening.

Rigid motions preserve distances, so two true correspondences ``a`` and
``b`` satisfy ``| |p_a - p_b| - |q_a - q_b| | ~ 0``. That quantity is used
twice: to score each correspondence by how many others it agrees with, and
to reject 3-point samples before solving for a transform.

Two triplet orderings are available:

``rank``    correspondences are sorted by score and triplets ``(i, j, k)``
            of rank positions are enumerated with ``k`` outermost, so the
            best-scored correspondences are combined first.
``anchor``  anchors ``a`` are visited by decreasing score. Within the set
            ``S_a`` of correspondences consistent with the anchor, candidates
            are ranked by how many members of ``S_a`` they agree with; other
            true matches share every inlier's consistency set, so they rise to
            the top. Pairs ``(b, c)`` among the top ``partners_per_anchor``
            candidates give triplets ``(a, b, c)``. This finds inliers at much
            lower inlier ratios, at a higher cost per draw.

Every triplet examined counts as one draw; those whose three pairs pass the
distance check are the valid hypotheses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, kabsch
from .ransac import EstimationFailed, EstimatorOutput

log = logging.getLogger(__name__)

BUDGET = "budget"
INLIER_RATIO = "inlier-ratio"
_EVAL_BATCH = 256
# Rows of the consistency matrix computed at a time.
_ROW_CHUNK = 512


@dataclass
class Pcr99Config:
    prescreen_tolerance: float
    inlier_threshold: float
    max_valid_triplets: int = 1000
    max_total_triplets: int = 10_000
    termination_mode: str = BUDGET
    target_inlier_ratio: float = 0.0009
    min_valid_triplets: int = 1000  # inlier-ratio mode only
    hard_cap: int = 1_000_000  # inlier-ratio mode only
    # None scores against every other correspondence in the sample
    scoring_subset_size: int | None = None
    ordering: str = "rank"
    partners_per_anchor: int = 10
    refine: bool = True

    @classmethod
    def from_sigma(cls, sigma: float, **kw) -> "Pcr99Config":
        """Defaults tied to the noise level: prescreen at 6 sigma, inliers at 5 sigma."""
        return cls(prescreen_tolerance=6.0 * sigma, inlier_threshold=5.0 * sigma, **kw)

    def __post_init__(self):
        if not (self.prescreen_tolerance > 0 and self.inlier_threshold > 0):
            raise ValueError("prescreen tolerance and inlier threshold must be positive")
        if min(self.max_valid_triplets, self.max_total_triplets, self.hard_cap) < 1:
            raise ValueError("triplet caps must be >= 1")
        if self.termination_mode not in (BUDGET, INLIER_RATIO):
            raise ValueError(f"unknown termination mode {self.termination_mode!r}")
        if self.termination_mode == INLIER_RATIO and not 0 < self.target_inlier_ratio < 1:
            raise ValueError("target_inlier_ratio must lie in (0, 1)")
        if self.ordering not in ("rank", "anchor"):
            raise ValueError(f"unknown triplet ordering {self.ordering!r}")
        if self.scoring_subset_size is not None and self.scoring_subset_size < 1:
            raise ValueError("scoring_subset_size must be >= 1 or None")
        if self.partners_per_anchor < 2:
            raise ValueError("partners_per_anchor must be >= 2")


def pairwise_consistency(pa, pb, qa, qb) -> np.ndarray:
    """``| |p_a - p_b| - |q_a - q_b| |``, broadcasting over leading axes."""
    return np.abs(
        np.linalg.norm(np.asarray(pa) - np.asarray(pb), axis=-1)
        - np.linalg.norm(np.asarray(qa) - np.asarray(qb), axis=-1)
    )


def consistency_matrix(src: np.ndarray, dst: np.ndarray, tol: float) -> np.ndarray:
    """Boolean (N, N) matrix of pairs passing the distance check (diagonal False)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    out = np.empty((n, n), dtype=bool)
    sq_s = np.sum(src * src, axis=1)
    sq_d = np.sum(dst * dst, axis=1)
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(n, lo + _ROW_CHUNK)
        ds = np.sqrt(np.maximum(sq_s[lo:hi, None] + sq_s[None, :] - 2.0 * src[lo:hi] @ src.T, 0.0))
        dd = np.sqrt(np.maximum(sq_d[lo:hi, None] + sq_d[None, :] - 2.0 * dst[lo:hi] @ dst.T, 0.0))
        out[lo:hi] = np.abs(ds - dd) < tol
    np.fill_diagonal(out, False)
    return out


def score_correspondences(src, dst, config: Pcr99Config, rng: np.random.Generator) -> np.ndarray:
    """Per-correspondence count of consistent partners.

    With ``scoring_subset_size = K`` each correspondence is compared against
    a random subset of K others; ``None`` compares against all of them.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    K = config.scoring_subset_size
    if K is None:
        return consistency_matrix(src, dst, config.prescreen_tolerance).sum(axis=1)
    if n < K + 1:
        raise ValueError(f"need at least {K + 1} correspondences to score against {K}")
    # K distinct partners per row, none equal to the row itself.
    others = np.argsort(rng.random((n, n - 1)), axis=1)[:, :K] if n <= 4096 else \
        np.stack([rng.choice(n - 1, K, replace=False) for _ in range(n)])
    others = others + (others >= np.arange(n)[:, None])
    c = pairwise_consistency(src[:, None], src[others], dst[:, None], dst[others])
    return np.sum(c < config.prescreen_tolerance, axis=1)


def procrustes_3pt(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Rigid fit of three (or more) point pairs; raises on collinear sources."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if _collinear(src[None])[0]:
        raise ValueError("degenerate triplet: source points are collinear")
    R, t = kabsch(src, dst)
    return RigidTransform(R, t)


def _collinear(tri: np.ndarray) -> np.ndarray:
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    area = np.linalg.norm(np.cross(e1, e2), axis=-1)
    scale = np.maximum(np.sum(e1 * e1, -1), np.sum(e2 * e2, -1))
    return ~(area > 1e-9 * np.maximum(scale, 1e-300))


def registration_residuals(R: np.ndarray, t: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """``|R p + t - q|`` for one model (N,) or a stack of models (H, N)."""
    pred = np.einsum("...ij,nj->...ni", R, src) + np.asarray(t)[..., None, :]
    return np.linalg.norm(pred - dst, axis=-1)


def _rank_stream(C: np.ndarray, order: np.ndarray):
    """Triplets of rank positions (i < j < k), k outermost, then j, then i."""
    for k in range(2, len(order)):
        ck = order[k]
        for j in range(1, k):
            cj = order[j]
            ii = order[:j]
            tris = np.column_stack([ii, np.full(j, cj), np.full(j, ck)])
            if not C[ck, cj]:
                yield tris, np.zeros(j, dtype=bool)
            else:
                yield tris, C[ii, cj] & C[ii, ck]


def _anchor_stream(C: np.ndarray, order: np.ndarray, L: int):
    """Yield per-anchor arrays of candidate triplets and their validity."""
    iu, ju = np.triu_indices(L, 1)
    for a in order:
        S = np.flatnonzero(C[a])
        if len(S) < 2:
            continue
        local = C[np.ix_(S, S)].sum(axis=1)
        top = S[np.argsort(-local, kind="stable")[:L]]
        k = len(top)
        if k < L:
            i2, j2 = np.triu_indices(k, 1)
        else:
            i2, j2 = iu, ju
        b, c = top[i2], top[j2]
        yield np.column_stack([np.full(len(b), a), b, c]), C[b, c]


def estimate_pcr(
    src: np.ndarray,
    dst: np.ndarray,
    config: Pcr99Config,
    rng: np.random.Generator | None = None,
    budget_scale: int = 1,
) -> EstimatorOutput:
    """Best-inlier rigid transform from prescreened 3-point hypotheses.

    Budget mode stops when ``max_valid_triplets`` valid triplets have been
    evaluated or ``max_total_triplets * budget_scale`` have been drawn.
    Inlier-ratio mode stops once the best inlier ratio reaches
    ``target_inlier_ratio`` with at least ``min_valid_triplets`` valid
    triplets, or after ``hard_cap`` draws.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    if n < 3:
        raise ValueError("registration needs at least 3 correspondences")
    if rng is None:
        rng = np.random.default_rng()
    thr = config.inlier_threshold
    C = consistency_matrix(src, dst, config.prescreen_tolerance)
    if config.scoring_subset_size is None or config.scoring_subset_size >= n - 1:
        score = C.sum(axis=1)
    else:
        score = score_correspondences(src, dst, config, rng)
    # score priority, random order among equal scores
    perm = rng.permutation(n)
    order = perm[np.argsort(-score[perm], kind="stable")]

    if config.termination_mode == BUDGET:
        draw_cap = config.max_total_triplets * int(budget_scale)
    else:
        draw_cap = config.hard_cap
    draws = valid_count = 0
    best_count, best_key, best_model = -1, None, None
    pending: list[np.ndarray] = []
    history = []

    def evaluate(tris: np.ndarray):
        nonlocal best_count, best_key, best_model
        tri_src = src[tris]
        keep = ~_collinear(tri_src)
        tris = tris[keep]
        if len(tris) == 0:
            return
        R, t = kabsch(src[tris], dst[tris])
        res = registration_residuals(R, t, src, dst)
        inl = res < thr
        counts = inl.sum(axis=1)
        sums = np.where(inl, res, 0.0).sum(axis=1)
        k = int(np.lexsort((sums, -counts))[0])
        key = (-int(counts[k]), float(sums[k]))
        if best_key is None or key < best_key:
            best_key = key
            best_count = int(counts[k])
            best_model = (R[k], t[k])

    def done() -> bool:
        if draws >= draw_cap:
            return True
        if config.termination_mode == BUDGET:
            return valid_count >= config.max_valid_triplets
        return valid_count >= config.min_valid_triplets and best_count >= config.target_inlier_ratio * n

    n_pending = 0
    if config.ordering == "rank":
        stream = _rank_stream(C, order)
    else:
        stream = _anchor_stream(C, order, config.partners_per_anchor)
    for tris, ok in stream:
        room = draw_cap - draws
        tris, ok = tris[:room], ok[:room]
        if config.termination_mode == BUDGET:
            # stop exactly at the valid-triplet cap
            cum = np.cumsum(ok)
            over = np.flatnonzero(valid_count + cum >= config.max_valid_triplets)
            if len(over):
                tris, ok = tris[: over[0] + 1], ok[: over[0] + 1]
        draws += len(tris)
        good = tris[ok]
        valid_count += len(good)
        if len(good):
            pending.append(good)
            n_pending += len(good)
        if n_pending >= _EVAL_BATCH:
            evaluate(np.concatenate(pending))
            pending, n_pending = [], 0
            history.append(best_count)
        if n_pending == 0 and done():
            break
        if draws >= draw_cap or (config.termination_mode == BUDGET and valid_count >= config.max_valid_triplets):
            break
    if pending:
        evaluate(np.concatenate(pending))
        history.append(best_count)

    if best_model is None or best_count < 3:
        raise EstimationFailed(f"estimation failed: no valid triplet with >= 3 inliers "
                               f"({valid_count} valid of {draws} drawn)")
    R, t = best_model
    res = registration_residuals(R, t, src, dst)
    out = EstimatorOutput(
        model=RigidTransform(R, t),
        inlier_indices=np.flatnonzero(res < thr),
        residuals=res,
        iterations_used=draws,
        low_support=best_count <= 6,
        extra={"minimal_size": 3, "valid_triplets": valid_count, "best_count_history": history},
    )
    if config.refine and out.n_inliers >= 3:
        # one least-squares fit on the consensus set of the best hypothesis
        R, t = kabsch(src[out.inlier_indices], dst[out.inlier_indices])
        res = registration_residuals(R, t, src, dst)
        out.model = RigidTransform(R, t)
        out.residuals = res
        out.inlier_indices = np.flatnonzero(res < thr)
        out.extra["refined"] = True
    return out
