"""The NONSAC driver: draw non-minimal samples, estimate on each, score and select."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import pcr
from .geometry import rotation_distance_deg, sampson_error
from .pnp import estimate_pnp, reprojection_errors
from .ransac import EstimationFailed, EstimatorOutput, RansacConfig
from .relpose import estimate_relpose
from .sampling import SamplePlan, SampleSet, draw_samples
from .scoring import HypothesisRecord, ScoringError, ScoringRule, select

log = logging.getLogger(__name__)


class NoViableHypothesis(RuntimeError):
    pass


@dataclass
class Estimator:
    """Problem-specific estimation hooks used by :func:`run_nonsac`.

    ``estimate(a, b, rng, budget_scale)`` fits a model to one sample and
    ``residuals(model, a, b)`` evaluates it on arbitrary correspondences.
    ``threshold`` is the inlier threshold, also the default TLP truncation.
    """

    problem: str
    minimal_size: int
    threshold: float
    estimate: Callable[..., EstimatorOutput]
    residuals: Callable[[object, np.ndarray, np.ndarray], np.ndarray]


def _pose_of(model):
    pose = getattr(model, "pose", model)
    return pose.rotation, pose.translation


def relpose_estimator(sigma: float, iterations: int = 100, refine: bool = False) -> Estimator:
    cfg = RansacConfig((5.0 * sigma) ** 2, iterations, refine=refine)
    return Estimator(
        "relpose", 5, cfg.inlier_threshold,
        lambda a, b, rng, scale=1: estimate_relpose(a, b, cfg, rng, budget_scale=scale),
        lambda model, a, b: sampson_error(a, b, model.E),
    )


def pnp_estimator(sigma: float, iterations: int = 100, refine: bool = False) -> Estimator:
    cfg = RansacConfig(5.0 * sigma, iterations, refine=refine)
    return Estimator(
        "pnp", 3, cfg.inlier_threshold,
        lambda a, b, rng, scale=1: estimate_pnp(a, b, cfg, rng, budget_scale=scale),
        lambda model, a, b: reprojection_errors(np.column_stack([model.rotation, model.translation]), a, b),
    )


def pcr_estimator(config: pcr.Pcr99Config) -> Estimator:
    return Estimator(
        "pcr", 3, config.inlier_threshold,
        lambda a, b, rng, scale=1: pcr.estimate_pcr(a, b, config, rng, budget_scale=scale),
        lambda model, a, b: pcr.registration_residuals(model.rotation, model.translation, a, b),
    )


@dataclass
class NonsacRun:
    samples: SampleSet
    hypotheses: list
    selections: dict  # rule name -> Selection
    errors: dict = field(default_factory=dict)  # rule name -> message
    timings: dict = field(default_factory=dict)

    def selected(self, rule_name: str) -> HypothesisRecord:
        return self.hypotheses[self.selections[rule_name].index]

    def rotation_errors(self, gt_rotation: np.ndarray) -> dict:
        """Rotation error (deg) of every rule's pick; +inf where the rule errored."""
        out = {}
        for name in list(self.selections) + list(self.errors):
            if name in self.selections:
                out[name] = rotation_distance_deg(self.selected(name).rotation, gt_rotation)
            else:
                out[name] = float("inf")
        return out


def run_nonsac(
    data,
    plan: SamplePlan,
    estimator: Estimator,
    rules: Sequence[ScoringRule],
    seed,
    gt_rotation: np.ndarray | None = None,
    tlp_full_dataset: bool = False,
    workers: int = 1,
) -> NonsacRun:
    """One NONSAC run over ``data`` (anything with ``len`` and ``take(indices)``).

    In fixed-sample mode a single sample is estimated once with its budget
    multiplied by ``plan.m``, giving one hypothesis.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if not rules:
        raise ValueError("at least one scoring rule is required")
    plan.validate(len(data), estimator.minimal_size)
    timings = {}
    t0 = time.perf_counter()
    samples = draw_samples(plan, len(data), seed)
    timings["sampling"] = time.perf_counter() - t0

    if plan.fixed_sample:
        jobs = [(0, samples.indices[0], samples.seeds[0], plan.m)]
    else:
        jobs = [(i, idx, samples.seeds[i], 1) for i, idx in enumerate(samples.indices)]

    def work(job):
        i, idx, ss, scale = job
        a, b = data.take(idx)
        rng = np.random.default_rng(ss)
        try:
            out = estimator.estimate(a, b, rng, scale)
        except EstimationFailed as exc:
            log.debug("sample %d: %s", i, exc)
            return HypothesisRecord(i, failed=True)
        R, t = _pose_of(out.model)
        return HypothesisRecord(
            sample_index=i,
            rotation=R,
            translation=t,
            inlier_residuals=out.residuals[out.inlier_indices],
            sample_residuals=out.residuals,
            model=out.model,
        )

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            hyps = list(pool.map(work, jobs))
    else:
        hyps = [work(j) for j in jobs]
    timings["estimation"] = time.perf_counter() - t0
    if all(h.failed for h in hyps):
        raise NoViableHypothesis(f"no viable hypothesis: all {len(hyps)} estimations failed")

    t0 = time.perf_counter()
    rules = [r.with_tau(estimator.threshold) for r in rules]
    if any(r.tag == "tlp-cost" for r in rules):
        eval_idx = np.arange(len(data)) if tlp_full_dataset else samples.union()
        a, b = data.take(eval_idx)
        for h in hyps:
            if not h.failed:
                h.eval_residuals = estimator.residuals(h.model, a, b)
    timings["evaluation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    selections, errors = {}, {}
    for rule in rules:
        try:
            selections[rule.name] = select(hyps, rule, gt_rotation)
        except ScoringError as exc:
            errors[rule.name] = str(exc)
    timings["scoring"] = time.perf_counter() - t0
    return NonsacRun(samples, hyps, selections, errors, timings)
