"""Monte-Carlo experiment grids: run trials, compute mAA per rule, write tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import datagen
from .metrics import maa
from .pcr import Pcr99Config
from .pipeline import NoViableHypothesis, pcr_estimator, pnp_estimator, relpose_estimator, run_nonsac
from .sampling import DISJOINT, UNIFORM, SamplePlan
from .scoring import ScoringRule

log = logging.getLogger(__name__)

CSV_FIELDS = ("problem", "sigma", "outlier_ratio", "m", "rule", "maa", "trials", "seconds")


@dataclass(frozen=True)
class MetricConfig:
    trials: int = 100
    theta_max: int = 10

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.theta_max < 1:
            raise ValueError("theta_max must be >= 1")


@dataclass
class ResultRow:
    problem: str
    sigma: float
    outlier_ratio: float
    m: int
    rule: str
    maa: float
    trials: int
    seconds: float | None = None
    error: str | None = None

    def csv_values(self) -> list[str]:
        return [
            self.problem,
            _fmt(self.sigma),
            _fmt(self.outlier_ratio),
            str(self.m),
            self.rule,
            "nan" if math.isnan(self.maa) else f"{self.maa:.6f}",
            str(self.trials),
            "" if self.seconds is None else f"{self.seconds:.3f}",
        ]


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class ExperimentCell:
    """One (problem, sigma, outlier ratio, m) configuration and its estimator settings."""

    problem: str
    sigma: float
    outlier_ratio: float
    m: int
    sample_size: int
    rules: tuple
    n: int | None = None  # dataset size; defaults to m * sample_size
    disjoint: bool = True
    iterations: int = 100
    refine: bool = False
    pcr: Pcr99Config | None = None
    # correspondence-free only
    cloud: np.ndarray | None = field(default=None, compare=False, repr=False)
    points_per_cloud: int = 500
    overlap: float = 0.5

    @property
    def dataset_size(self) -> int:
        if self.problem == "corfree":
            return self.points_per_cloud ** 2
        return self.n if self.n is not None else self.m * self.sample_size

    def validate(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.problem != "corfree":
            datagen.SceneConfig(self.problem, self.dataset_size, self.sigma, self.outlier_ratio)
        elif self.cloud is None:
            raise ValueError("corfree cells need a point cloud")
        self.plan().validate(self.dataset_size, 5 if self.problem == "relpose" else 3)

    def plan(self, fixed: bool = False) -> SamplePlan:
        mode = DISJOINT if self.disjoint and self.problem != "corfree" else UNIFORM
        return SamplePlan(self.m, self.sample_size, mode, fixed_sample=fixed)

    def estimator(self):
        if self.problem == "relpose":
            return relpose_estimator(self.sigma, self.iterations, self.refine)
        if self.problem == "pnp":
            return pnp_estimator(self.sigma, self.iterations, self.refine)
        cfg = self.pcr if self.pcr is not None else Pcr99Config.from_sigma(self.sigma)
        return pcr_estimator(cfg)

    def scene(self, rng: np.random.Generator):
        if self.problem == "corfree":
            cfg = datagen.SceneConfig("corfree", self.dataset_size, self.sigma, 0.0,
                                      self.points_per_cloud, self.overlap)
            return datagen.gen_corfree(self.cloud, cfg, rng)
        cfg = datagen.SceneConfig(self.problem, self.dataset_size, self.sigma, self.outlier_ratio)
        return datagen.generate(cfg, rng)


@dataclass
class CellResult:
    cell: ExperimentCell
    errors: dict  # rule name -> list of per-trial rotation errors (deg)
    seconds: float
    error: str | None = None


def run_cell(cell: ExperimentCell, trials: int, seed) -> CellResult:
    """Run ``trials`` independent trials; every rule is scored on the same hypotheses.

    A ``fixed-sample`` rule triggers a second NONSAC run per trial in
    fixed-sample mode, on the same scene.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rules = list(cell.rules)
    names = [r.name for r in rules]
    shared = [r for r in rules if r.tag != "fixed-sample"]
    want_fixed = any(r.tag == "fixed-sample" for r in rules)
    errors = {name: [] for name in names}
    t0 = time.perf_counter()
    try:
        cell.validate()
        estimator = cell.estimator()
    except ValueError as exc:
        log.error("invalid cell %s: %s", _cell_label(cell), exc)
        return CellResult(cell, errors, 0.0, str(exc))
    for trial_ss in ss.spawn(trials):
        scene_ss, run_ss, fixed_ss = trial_ss.spawn(3)
        data, gt = cell.scene(np.random.default_rng(scene_ss))
        trial = {name: math.inf for name in names}
        if shared:
            try:
                run = run_nonsac(data, cell.plan(), estimator, shared, run_ss, gt_rotation=gt.rotation)
                trial.update(run.rotation_errors(gt.rotation))
                for name, msg in run.errors.items():
                    log.debug("rule %s: %s", name, msg)
            except NoViableHypothesis as exc:
                log.debug("trial failed: %s", exc)
        if want_fixed:
            try:
                run = run_nonsac(data, cell.plan(fixed=True), estimator,
                                 [ScoringRule("fixed-sample")], fixed_ss, gt_rotation=gt.rotation)
                trial["fixed-sample"] = run.rotation_errors(gt.rotation)["fixed-sample"]
            except NoViableHypothesis as exc:
                log.debug("fixed-sample trial failed: %s", exc)
        for name in names:
            errors[name].append(trial[name])
    return CellResult(cell, errors, time.perf_counter() - t0)


def _cell_label(cell: ExperimentCell) -> str:
    return f"{cell.problem} sigma={cell.sigma} outliers={cell.outlier_ratio} m={cell.m}"


def rows_for(result: CellResult, metric: MetricConfig, record_time: bool = False) -> list[ResultRow]:
    cell = result.cell
    rows = []
    for rule in cell.rules:
        errs = result.errors.get(rule.name, [])
        value = maa(errs, metric.theta_max) if errs and result.error is None else float("nan")
        rows.append(ResultRow(
            cell.problem, cell.sigma, cell.outlier_ratio, cell.m, rule.name, value,
            len(errs), result.seconds if record_time else None, result.error,
        ))
    return rows


def run_grid(cells: Sequence[ExperimentCell], metric: MetricConfig, seed,
             record_time: bool = False, progress=None) -> tuple[list[ResultRow], list[CellResult]]:
    """Run every cell with its own seed stream (spawned from ``seed`` in grid order)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rows, results = [], []
    for cell, cell_ss in zip(cells, ss.spawn(len(cells))):
        result = run_cell(cell, metric.trials, cell_ss)
        results.append(result)
        rows.extend(rows_for(result, metric, record_time))
        if progress is not None:
            progress(result)
    return rows, results


def expand_grid(problem: str, sigmas: Iterable[float], outlier_ratios: Iterable[float],
                ms: Iterable[int], **kw) -> list[ExperimentCell]:
    return [
        ExperimentCell(problem, float(s), float(p), int(m), **kw)
        for s in sigmas for p in outlier_ratios for m in ms
    ]


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow(row.csv_values())
    return buf.getvalue()


def emit_csv(rows: Sequence[ResultRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows), encoding="utf-8")


def _json_value(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def rows_to_json(rows: Sequence[ResultRow]) -> str:
    payload = [{k: _json_value(v) for k, v in asdict(r).items() if k != "error" or v is not None}
               for r in rows]
    return json.dumps(payload, indent=2) + "\n"


def emit_json(rows: Sequence[ResultRow], path) -> None:
    Path(path).write_text(rows_to_json(rows), encoding="utf-8")


def emit(rows: Sequence[ResultRow], path) -> None:
    if str(path).lower().endswith(".json"):
        emit_json(rows, path)
    else:
        emit_csv(rows, path)


def load_rows(path) -> list[ResultRow]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).lower().endswith(".json"):
        raw = json.loads(text)
    else:
        raw = list(csv.DictReader(io.StringIO(text)))
    rows = []
    for r in raw:
        maa_val = r["maa"]
        seconds = r.get("seconds")
        rows.append(ResultRow(
            problem=r["problem"],
            sigma=float(r["sigma"]),
            outlier_ratio=float(r["outlier_ratio"]),
            m=int(r["m"]),
            rule=r["rule"],
            maa=float("nan") if maa_val in (None, "", "nan") else float(maa_val),
            trials=int(r["trials"]),
            seconds=None if seconds in (None, "") else float(seconds),
        ))
    return rows


def aggregate(rows: Sequence[ResultRow], group_by: Sequence[str]) -> list[dict]:
    """Mean mAA over all rows sharing the ``group_by`` values, in first-seen order.

    Rows with a NaN mAA (failed cells) are left out of the mean.
    """
    for col in group_by:
        if col not in CSV_FIELDS or col in ("maa", "seconds"):
            raise ValueError(f"cannot group by {col!r}")
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(getattr(row, c) for c in group_by)
        groups.setdefault(key, [])
        if not math.isnan(row.maa):
            groups[key].append(row.maa)
    out = []
    for key, vals in groups.items():
        rec = dict(zip(group_by, key))
        rec["maa"] = float(np.mean(vals)) if vals else float("nan")
        rec["cells"] = len(vals)
        out.append(rec)
    return out


def aggregate_to_csv(records: Sequence[dict], group_by: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(group_by) + ["maa", "cells"])
    for rec in records:
        vals = [rec[c] if not isinstance(rec[c], float) else _fmt(rec[c]) for c in group_by]
        m = rec["maa"]
        writer.writerow(vals + ["nan" if math.isnan(m) else f"{m:.6f}", rec["cells"]])
    return buf.getvalue()


def with_rules(cell: ExperimentCell, rules: Sequence[ScoringRule]) -> ExperimentCell:
    return replace(cell, rules=tuple(rules))
