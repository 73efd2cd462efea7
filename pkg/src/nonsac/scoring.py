"""Selecting one model out of the hypotheses produced by the non-minimal samples.

Rules (``ScoringRule.tag``):

``ideal``           model closest in rotation to the ground truth (oracle).
``fixed-sample``    sampling mode; its hypotheses are ranked by inlier count.
``most-inliers``    largest inlier count.
``closest-pair``    the two models with the smallest rotation distance, then
                    the one of them with more inliers.
``closest-triplet`` the three models with the smallest largest pairwise
                    distance, then the one with most inliers.
``min-mean`` / ``min-median`` / ``min-q3``
                    smallest mean / median / upper quartile of a model's own
                    inlier residuals.
``pair-cost``       maximize ``max(n_i, n_j) / d_ij**k`` over pairs, then the
                    pair member with more inliers.
``tlp-cost``        minimize the truncated L_p cost
                    ``sum_j min(|r_j|**p, tau**p)`` over a common evaluation set.

Ties are broken by larger inlier count, then smaller sample index.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import pairwise_rotation_distances, rotation_distance_deg

RULE_TAGS = (
    "ideal",
    "fixed-sample",
    "most-inliers",
    "closest-pair",
    "closest-triplet",
    "min-mean",
    "min-median",
    "min-q3",
    "pair-cost",
    "tlp-cost",
)
DISTANCE_CLAMP_DEG = 1e-9
DEFAULT_PAIR_K = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_TLP_P = (0.01, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0)


class ScoringError(ValueError):
    pass


@dataclass
class HypothesisRecord:
    sample_index: int
    rotation: np.ndarray | None = None
    translation: np.ndarray | None = None
    inlier_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sample_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    failed: bool = False
    model: object = None
    # residuals over the common evaluation set, filled in by the pipeline
    eval_residuals: np.ndarray | None = None

    @property
    def n_inliers(self) -> int:
        return 0 if self.failed else int(len(self.inlier_residuals))


@dataclass(frozen=True)
class ScoringRule:
    tag: str
    k: float | None = None
    p: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.tag not in RULE_TAGS:
            raise ValueError(f"unknown scoring rule {self.tag!r}")
        if self.tag == "pair-cost" and not (self.k is not None and self.k > 0):
            raise ValueError("pair-cost needs an exponent k > 0")
        if self.tag == "tlp-cost":
            if not (self.p is not None and self.p > 0):
                raise ValueError("tlp-cost needs an exponent p > 0")
            if self.tau is not None and not self.tau > 0:
                raise ValueError("tlp-cost needs a truncation tau > 0")

    @property
    def name(self) -> str:
        """Canonical text form, also accepted by :func:`parse_rule`."""
        if self.tag == "pair-cost":
            return f"pair:{self.k:g}"
        if self.tag == "tlp-cost":
            return f"tlp:{self.p:g}"
        return self.tag

    def with_tau(self, tau: float) -> "ScoringRule":
        if self.tag != "tlp-cost" or self.tau is not None:
            return self
        return ScoringRule(self.tag, self.k, self.p, tau)


def parse_rule(text: str) -> ScoringRule:
    """Parse ``most-inliers``, ``pair:0.1``, ``tlp:0.1`` and friends."""
    text = text.strip()
    if ":" in text:
        head, _, arg = text.partition(":")
        try:
            val = float(arg)
        except ValueError:
            raise ValueError(f"bad numeric parameter in rule {text!r}") from None
        if head in ("pair", "pair-cost"):
            return ScoringRule("pair-cost", k=val)
        if head in ("tlp", "tlp-cost"):
            return ScoringRule("tlp-cost", p=val)
        raise ValueError(f"unknown parameterized rule {text!r}")
    if text in ("pair", "tlp", "pair-cost", "tlp-cost"):
        raise ValueError(f"rule {text!r} needs a parameter, e.g. {text.split('-')[0]}:0.1")
    return ScoringRule(text)


def parse_rules(text: str) -> list[ScoringRule]:
    rules = [parse_rule(t) for t in text.split(",") if t.strip()]
    if not rules:
        raise ValueError("empty rule list")
    return rules


@dataclass
class Selection:
    index: int  # position in the hypothesis list
    sample_index: int
    scores: np.ndarray  # per-hypothesis scores, or an (m, m) table for pair rules


def quartile(values, q: float) -> float:
    """Linear-interpolation quantile (position ``q * (len - 1)`` in the sorted list)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("quartile of an empty list")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return float(np.quantile(values, q, method="linear"))


def tlp_cost(residuals, p: float, tau: float) -> float:
    """Truncated L_p cost ``sum min(|r|^p, tau^p)``."""
    r = np.abs(np.asarray(residuals, dtype=float))
    with np.errstate(over="ignore"):
        return float(np.sum(np.minimum(r**p, tau**p)))


def _pick(cands: np.ndarray, hyps: Sequence[HypothesisRecord]) -> int:
    """Among candidate positions, larger n_i then smaller sample_index."""
    return min(cands, key=lambda i: (-hyps[i].n_inliers, hyps[i].sample_index))


def _best_by(key: np.ndarray, alive: np.ndarray, hyps, minimize: bool = True) -> int:
    vals = np.where(alive, key if minimize else -key, np.inf)
    best = np.min(vals)
    if not np.isfinite(best):
        # every score is infinite: still choose among the alive ones
        cands = np.flatnonzero(alive)
    else:
        cands = np.flatnonzero(alive & (vals == best))
    return _pick(cands, hyps)


def _pair_select(table: np.ndarray, alive_idx: np.ndarray, hyps, maximize: bool) -> int:
    """Best pair by ``table`` (ties: more inliers in the pair, then lower indices)."""
    best_key = None
    best_pair = None
    for a, b in itertools.combinations(alive_idx, 2):
        v = table[a, b]
        nmax = max(hyps[a].n_inliers, hyps[b].n_inliers)
        key = (-v if maximize else v, -nmax, min(hyps[a].sample_index, hyps[b].sample_index),
               max(hyps[a].sample_index, hyps[b].sample_index))
        if best_key is None or key < best_key:
            best_key, best_pair = key, (a, b)
    return _pick(np.array(best_pair), hyps)


def select(
    hypotheses: Sequence[HypothesisRecord],
    rule: ScoringRule,
    gt_rotation: np.ndarray | None = None,
) -> Selection:
    """Apply one scoring rule. Raises :class:`ScoringError` on unmet preconditions."""
    hyps = list(hypotheses)
    m = len(hyps)
    alive = np.array([not h.failed for h in hyps], dtype=bool)
    name = rule.name
    if not alive.any():
        raise ScoringError(f"{name}: no viable hypothesis (all {m} failed)")
    alive_idx = np.flatnonzero(alive)
    n = np.array([h.n_inliers for h in hyps], dtype=float)
    tag = rule.tag

    def rotations():
        return np.stack([h.rotation if not h.failed else np.eye(3) for h in hyps])

    if tag == "ideal":
        if gt_rotation is None:
            raise ScoringError("ideal: ground-truth rotation required")
        err = np.array([rotation_distance_deg(h.rotation, gt_rotation) if not h.failed else np.inf
                        for h in hyps])
        i = _best_by(err, alive, hyps)
        return Selection(i, hyps[i].sample_index, err)

    if tag in ("most-inliers", "fixed-sample"):
        i = _best_by(n, alive, hyps, minimize=False)
        return Selection(i, hyps[i].sample_index, n)

    if tag in ("min-mean", "min-median", "min-q3"):
        usable = alive & (n > 0)
        if not usable.any():
            raise ScoringError(f"{name}: no hypothesis with inliers")
        stat = {"min-mean": np.mean, "min-median": lambda r: quartile(r, 0.5),
                "min-q3": lambda r: quartile(r, 0.75)}[tag]
        vals = np.array([stat(np.asarray(h.inlier_residuals, float)) if u else np.inf
                         for h, u in zip(hyps, usable)])
        i = _best_by(vals, usable, hyps)
        return Selection(i, hyps[i].sample_index, vals)

    if tag == "tlp-cost":
        if rule.tau is None:
            raise ScoringError(f"{name}: truncation threshold tau not set")
        if any(h.eval_residuals is None for h in hyps if not h.failed):
            raise ScoringError(f"{name}: evaluation-set residuals missing")
        costs = np.array([tlp_cost(h.eval_residuals, rule.p, rule.tau) if not h.failed else np.inf
                          for h in hyps])
        i = _best_by(costs, alive, hyps)
        return Selection(i, hyps[i].sample_index, costs)

    if tag in ("closest-pair", "pair-cost"):
        if len(alive_idx) < 2:
            raise ScoringError(f"{name}: needs at least 2 viable hypotheses, got {len(alive_idx)}")
        d = pairwise_rotation_distances(rotations())
        if tag == "closest-pair":
            i = _pair_select(d, alive_idx, hyps, maximize=False)
            return Selection(i, hyps[i].sample_index, d)
        dc = np.maximum(d, DISTANCE_CLAMP_DEG)
        cost = np.maximum(n[:, None], n[None, :]) / dc**rule.k
        np.fill_diagonal(cost, -np.inf)
        i = _pair_select(cost, alive_idx, hyps, maximize=True)
        return Selection(i, hyps[i].sample_index, cost)

    if tag == "closest-triplet":
        if len(alive_idx) < 3:
            raise ScoringError(f"{name}: needs at least 3 viable hypotheses, got {len(alive_idx)}")
        d = pairwise_rotation_distances(rotations())
        trip = np.array(list(itertools.combinations(alive_idx, 3)))
        diam = np.max(np.stack([d[trip[:, 0], trip[:, 1]], d[trip[:, 0], trip[:, 2]],
                                d[trip[:, 1], trip[:, 2]]]), axis=0)
        nmax = n[trip].max(axis=1)
        sidx = np.array([[hyps[j].sample_index for j in t] for t in trip])
        order = np.lexsort((sidx[:, 2], sidx[:, 1], sidx[:, 0], -nmax, diam))
        best = trip[order[0]]
        i = _pick(best, hyps)
        per_hyp = np.full(m, np.inf)
        for t, dm in zip(trip, diam):
            per_hyp[t] = np.minimum(per_hyp[t], dm)
        return Selection(i, hyps[i].sample_index, per_hyp)

    raise ScoringError(f"unhandled rule {name}")
