"""Fixed-budget RANSAC shared by the relative-pose and PnP estimators.

A minimal solver here is a callable taking an integer array of shape
(B, s) (B minimal index sets of size s) and returning ``(models, valid)``
where ``models`` has shape (B, K, ...) and ``valid`` is a (B, K) mask.
Residual functions take a stack of H models and return (H, N) residuals.
Batching over iterations keeps the Python overhead per draw small.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# Residual evaluations are done for this many candidate models at a time.
_EVAL_CHUNK = 64


class EstimationFailed(RuntimeError):
    """No model reached the minimal number of inliers."""


@dataclass
class RansacConfig:
    inlier_threshold: float
    minimal_iterations: int = 100
    seed: int | None = None
    # Optional least-squares refit of the winner to its consensus set, see
    # refit_consensus. Off by default: the estimator returns the best
    # minimal-solver model unchanged.
    refine: bool = False

    def __post_init__(self):
        if self.minimal_iterations < 1:
            raise ValueError("minimal_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass
class EstimatorOutput:
    model: Any
    inlier_indices: np.ndarray
    residuals: np.ndarray
    iterations_used: int
    iteration: int = 0  # draw index that produced the model
    low_support: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def n_inliers(self) -> int:
        return int(len(self.inlier_indices))

    @property
    def inlier_residuals(self) -> np.ndarray:
        return self.residuals[self.inlier_indices]


# Best counts within this many Poisson standard deviations of the chance
# level count as low support.
LOW_SUPPORT_Z = 4.0


def is_low_support(n_inliers: int, extra: dict) -> bool:
    """True when the inlier count is barely above what a random model gets.

    ``extra["chance_inliers"]`` is the median count over all RANSAC
    candidates; nearly all of those come from contaminated minimal sets, so
    it estimates the chance level. Counts up to twice the minimal size are
    always low support.
    """
    minimal = extra.get("minimal_size", 0)
    chance = extra.get("chance_inliers", 0.0)
    bound = max(2 * minimal, chance + LOW_SUPPORT_Z * np.sqrt(max(chance, 1.0)))
    return n_inliers <= bound


def truncated_cost(residuals: np.ndarray, threshold: float, power: float) -> float:
    """``sum min((r / threshold) ** power, 1)``: a truncated quadratic for power 2."""
    r = np.where(np.isnan(residuals), np.inf, residuals)
    return float(np.sum(np.minimum((r / threshold) ** power, 1.0)))


def refit_consensus(
    out: EstimatorOutput,
    refit: Callable[[Any, np.ndarray], Any],
    residual_fn: Callable[[Any], np.ndarray],
    threshold: float,
    power: float = 2.0,
    rounds: int = 3,
) -> EstimatorOutput:
    """Alternate least-squares refits and inlier re-classification.

    ``power`` makes the truncated cost quadratic in distance: 2 for distance
    residuals, 1 for residuals that are already squared (Sampson). The model
    with the lowest truncated cost over the whole sample is kept, which may
    be the unrefined one.
    """
    best_cost = truncated_cost(out.residuals, threshold, power)
    model, inliers = out.model, out.inlier_indices
    for _ in range(rounds):
        if len(inliers) == 0:
            break
        try:
            model = refit(model, inliers)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("refit failed: %s", exc)
            break
        res = np.asarray(residual_fn(model), dtype=float)
        res = np.where(np.isnan(res), np.inf, res)
        new_inliers = np.flatnonzero(res < threshold)
        cost = truncated_cost(res, threshold, power)
        if cost >= best_cost:
            break
        best_cost = cost
        out.model, out.residuals, out.inlier_indices = model, res, new_inliers
        out.extra["refined"] = True
        if np.array_equal(new_inliers, inliers):
            break
        inliers = new_inliers
    out.low_support = is_low_support(out.n_inliers, out.extra)
    return out


def tie_break(candidates: Sequence[EstimatorOutput]) -> EstimatorOutput:
    """Most inliers, then smallest inlier-residual sum, then earliest draw."""
    if not candidates:
        raise ValueError("tie_break needs at least one candidate")
    return min(
        candidates,
        key=lambda c: (-c.n_inliers, float(np.sum(c.inlier_residuals)), c.iteration),
    )


def draw_minimal_sets(rng: np.random.Generator, n: int, size: int, count: int) -> np.ndarray:
    """(count, size) index sets, each without repetition."""
    if size > n:
        raise ValueError(f"cannot draw {size} distinct indices from {n}")
    out = np.empty((count, size), dtype=np.intp)
    # Rejection on duplicates is cheap when size << n; fall back to a
    # permutation-based draw for rows that keep colliding.
    rows = np.arange(count)
    for _ in range(8):
        cand = rng.integers(0, n, size=(len(rows), size))
        srt = np.sort(cand, axis=1)
        ok = np.all(srt[:, 1:] != srt[:, :-1], axis=1)
        out[rows[ok]] = cand[ok]
        rows = rows[~ok]
        if len(rows) == 0:
            return out
    for r in rows:
        out[r] = rng.choice(n, size, replace=False)
    return out


def ransac(
    n: int,
    solve: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    residual_fn: Callable[[np.ndarray], np.ndarray],
    minimal_size: int,
    config: RansacConfig,
    rng: np.random.Generator | None = None,
    budget_scale: int = 1,
) -> EstimatorOutput:
    """Run exactly ``config.minimal_iterations * budget_scale`` minimal draws.

    Every solution of every draw is scored by its inlier count
    (``residual < threshold``). Returns the best one by :func:`tie_break`
    order; raises :class:`EstimationFailed` if it has fewer than
    ``minimal_size`` inliers.
    """
    if n < minimal_size:
        raise ValueError(f"sample of {n} points is smaller than the minimal size {minimal_size}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    iterations = config.minimal_iterations * int(budget_scale)
    thr = config.inlier_threshold
    idx = draw_minimal_sets(rng, n, minimal_size, iterations)
    models, valid = solve(idx)
    K = valid.shape[1]
    flat_models = models.reshape((iterations * K,) + models.shape[2:])
    cand = np.flatnonzero(valid.reshape(-1))

    best = None  # (count, resid_sum, iteration, candidate id)
    best_res = None
    all_counts = []
    for start in range(0, len(cand), _EVAL_CHUNK):
        ids = cand[start:start + _EVAL_CHUNK]
        res = np.asarray(residual_fn(flat_models[ids]), dtype=float)
        res = np.where(np.isnan(res), np.inf, res)
        inl = res < thr
        counts = inl.sum(axis=1)
        all_counts.append(counts)
        sums = np.where(inl, res, 0.0).sum(axis=1)
        # lexicographic: max count, min residual sum, min candidate id
        order = np.lexsort((ids, sums, -counts))
        k = order[0]
        key = (-int(counts[k]), float(sums[k]), int(ids[k]))
        if best is None or key < best:
            best = key
            best_res = res[k]
    if best is None or -best[0] < minimal_size:
        got = 0 if best is None else -best[0]
        raise EstimationFailed(f"estimation failed: best model has {got} inliers (< {minimal_size})")
    cid = best[2]
    inliers = np.flatnonzero(best_res < thr)
    extra = {"minimal_size": minimal_size,
             "chance_inliers": float(np.median(np.concatenate(all_counts)))}
    return EstimatorOutput(
        model=flat_models[cid],
        inlier_indices=inliers,
        residuals=best_res,
        iterations_used=iterations,
        iteration=cid // K,
        low_support=is_low_support(len(inliers), extra),
        extra=extra,
    )
