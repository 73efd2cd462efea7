"""Non-minimal sample drawing.

Per-sample seeds are spawned from the master seed with
:class:`numpy.random.SeedSequence`, so sample ``i`` gets the same stream
regardless of how many samples are drawn or in what order they are used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIFORM = "uniform"
DISJOINT = "disjoint"


@dataclass(frozen=True)
class SamplePlan:
    m: int
    N: int
    mode: str = UNIFORM
    fixed_sample: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.N < 1:
            raise ValueError("sample size N must be >= 1")
        if self.mode not in (UNIFORM, DISJOINT):
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    def validate(self, n: int, minimal_size: int = 1) -> None:
        if self.N < minimal_size:
            raise ValueError(f"sample size {self.N} is below the minimal size {minimal_size}")
        if n < self.N:
            raise ValueError(f"dataset smaller than sample size ({n} < {self.N})")
        if self.mode == DISJOINT and not self.fixed_sample and n < self.m * self.N:
            raise ValueError(f"cannot partition {n} points into {self.m} disjoint samples of {self.N}")


@dataclass(frozen=True)
class SampleSet:
    indices: tuple  # m int arrays of length N
    seeds: tuple  # one SeedSequence per sample, for its estimator

    def __len__(self):
        return len(self.indices)

    def union(self) -> np.ndarray:
        return np.unique(np.concatenate(self.indices))


def draw_samples(plan: SamplePlan, n: int, seed) -> SampleSet:
    """Draw ``plan.m`` index lists of length ``plan.N`` from ``range(n)``.

    ``seed`` may be an int or a SeedSequence. With ``fixed_sample`` the same
    list is repeated m times.
    """
    plan.validate(n)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    draw_ss, est_ss = ss.spawn(2)
    rng = np.random.default_rng(draw_ss)
    sample_seeds = tuple(est_ss.spawn(plan.m))
    if plan.fixed_sample:
        one = np.sort(rng.choice(n, plan.N, replace=False))
        return SampleSet(tuple(one for _ in range(plan.m)), sample_seeds)
    if plan.mode == DISJOINT:
        perm = rng.permutation(n)[: plan.m * plan.N]
        idx = tuple(np.sort(perm[i * plan.N:(i + 1) * plan.N]) for i in range(plan.m))
    else:
        idx = tuple(np.sort(rng.choice(n, plan.N, replace=False)) for _ in range(plan.m))
    return SampleSet(idx, sample_seeds)


def sample_inlier_proportion_stats(inlier_mask, plan: SamplePlan, rng, draws: int = 2000):
    """Mean and std of the inlier proportion of a size-N sample over repeated draws."""
    if draws < 100:
        raise ValueError("draws must be >= 100")
    mask = np.asarray(inlier_mask, dtype=bool)
    n = len(mask)
    plan.validate(n)
    props = np.array([mask[rng.choice(n, plan.N, replace=False)].mean() for _ in range(draws)])
    return float(props.mean()), float(props.std(ddof=1))


def clt_std(P: float, N: int) -> float:
    """Normal-approximation std of a sample proportion, sqrt(P(1-P)/N)."""
    return float(np.sqrt(P * (1 - P) / N))
