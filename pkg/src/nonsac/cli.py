"""Command line entry point: ``nonsac simulate | corfree | report``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace

import numpy as np

from . import bench
from .datagen import load_ply
from .pcr import Pcr99Config
from .scoring import DEFAULT_PAIR_K, DEFAULT_TLP_P, parse_rules

log = logging.getLogger("nonsac")

EXIT_USAGE = 1
EXIT_RUNTIME = 2

DEFAULT_RULES = ",".join(
    ["ideal", "most-inliers", "closest-pair", "closest-triplet", "min-mean", "min-median", "min-q3"]
    + [f"pair:{k:g}" for k in DEFAULT_PAIR_K]
    + [f"tlp:{p:g}" for p in DEFAULT_TLP_P]
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for runtime failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _rules(text: str):
    try:
        return parse_rules(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser, sample_size: int, m_default: str) -> None:
    p.add_argument("--sigma", type=_floats, required=True, help="noise level(s), comma separated")
    p.add_argument("--m", type=_ints, default=_ints(m_default), help="number(s) of non-minimal samples")
    p.add_argument("--sample-size", type=int, default=sample_size, help="points per sample (N)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--rules", type=_rules, default=_rules(DEFAULT_RULES))
    p.add_argument("--fixed-sample", action="store_true",
                   help="also evaluate the fixed-sample baseline (one sample, m times the budget)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output file; .json selects JSON, anything else CSV")
    p.add_argument("--record-time", action="store_true",
                   help="fill the seconds column (makes the output run-dependent)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nonsac", description="NONSAC Monte-Carlo experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sim = sub.add_parser("simulate", help="synthetic relpose / pnp / pcr grids")
    sim.add_argument("problem", choices=("relpose", "pnp", "pcr"))
    _add_common(sim, sample_size=1000, m_default="10")
    sim.add_argument("--outlier-ratio", type=_floats, required=True)
    sim.add_argument("--n", type=int, default=None,
                     help="dataset size (default m * sample size)")
    sim.add_argument("--disjoint", action="store_true", help="non-overlapping samples")
    sim.add_argument("--iterations", type=int, default=None,
                     help="RANSAC iterations per sample (relpose/pnp) or total triplet cap (pcr)")
    sim.add_argument("--theta-max", type=int, default=10)

    cf = sub.add_parser("corfree", help="correspondence-free registration on a point cloud")
    cf.add_argument("--ply", required=True)
    cf.add_argument("--points", type=int, default=500, help="points per subset")
    cf.add_argument("--overlap", type=float, default=0.5)
    _add_common(cf, sample_size=10_000, m_default="10")
    cf.add_argument("--prescreen", type=float, default=3.0,
                    help="distance-check tolerance in units of sigma")
    cf.add_argument("--ordering", choices=("rank", "anchor"), default="anchor")
    cf.add_argument("--theta-max", type=_ints, default=[5, 10, 15, 20],
                    help="mAA thresholds; with several, rule names get an @T suffix")

    rep = sub.add_parser("report", help="average mAA over grid cells")
    rep.add_argument("--in", dest="inp", required=True)
    rep.add_argument("--group-by", default="rule,m")
    rep.add_argument("--out", default=None, help="write here instead of stdout")
    return parser


def _with_fixed(rules, fixed: bool):
    rules = list(rules)
    if fixed and not any(r.tag == "fixed-sample" for r in rules):
        from .scoring import ScoringRule
        rules.append(ScoringRule("fixed-sample"))
    return tuple(rules)


def _progress(result: bench.CellResult) -> None:
    c = result.cell
    log.info("%s sigma=%g outliers=%g m=%d: %.1f s%s", c.problem, c.sigma, c.outlier_ratio, c.m,
             result.seconds, f" ERROR {result.error}" if result.error else "")


def _check_counts(args) -> None:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.sample_size < 1:
        raise UsageError("--sample-size must be >= 1")
    if not args.sigma or not args.m:
        raise UsageError("empty --sigma or --m list")


def cmd_simulate(args) -> int:
    _check_counts(args)
    if not args.outlier_ratio:
        raise UsageError("empty --outlier-ratio list")
    kw = dict(sample_size=args.sample_size, rules=_with_fixed(args.rules, args.fixed_sample),
              n=args.n, disjoint=args.disjoint)
    cells = []
    for s in args.sigma:
        for p in args.outlier_ratio:
            for m in args.m:
                cell = bench.ExperimentCell(args.problem, s, p, m, **kw)
                if args.iterations is not None:
                    if args.problem == "pcr":
                        cfg = Pcr99Config.from_sigma(s, max_total_triplets=args.iterations)
                        cell = replace(cell, pcr=cfg)
                    else:
                        cell = replace(cell, iterations=args.iterations)
                elif args.problem == "pcr" and s > 0:
                    cell = replace(cell, pcr=Pcr99Config.from_sigma(s))
                cells.append(cell)
    metric = bench.MetricConfig(args.trials, args.theta_max)
    rows, _ = bench.run_grid(cells, metric, args.seed, args.record_time, _progress)
    bench.emit(rows, args.out)
    return _finish(rows)


def cmd_corfree(args) -> int:
    _check_counts(args)
    cloud = load_ply(args.ply)
    shared = int(round(args.overlap * args.points))
    outlier_ratio = 1.0 - shared / float(args.points ** 2)
    cells = []
    for s in args.sigma:
        cfg = Pcr99Config(prescreen_tolerance=args.prescreen * s, inlier_threshold=5.0 * s,
                          ordering=args.ordering)
        for m in args.m:
            cells.append(bench.ExperimentCell(
                "corfree", s, outlier_ratio, m, args.sample_size,
                _with_fixed(args.rules, args.fixed_sample), pcr=cfg, cloud=cloud,
                points_per_cloud=args.points, overlap=args.overlap, disjoint=False,
            ))
    ss = np.random.SeedSequence(args.seed)
    rows = []
    thetas = args.theta_max
    for cell, cell_ss in zip(cells, ss.spawn(len(cells))):
        result = bench.run_cell(cell, args.trials, cell_ss)
        _progress(result)
        for theta in thetas:
            for row in bench.rows_for(result, bench.MetricConfig(args.trials, theta), args.record_time):
                if len(thetas) > 1:
                    row.rule = f"{row.rule}@{theta}"
                rows.append(row)
        for name, errs in result.errors.items():
            if errs:
                log.info("  %-16s median rotation error %.2f deg", name, float(np.median(errs)))
    bench.emit(rows, args.out)
    return _finish(rows)


def cmd_report(args) -> int:
    group_by = [c.strip() for c in args.group_by.split(",") if c.strip()]
    if not group_by:
        raise UsageError("empty --group-by")
    rows = bench.load_rows(args.inp)
    try:
        records = bench.aggregate(rows, group_by)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = bench.aggregate_to_csv(records, group_by)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _finish(rows) -> int:
    bad = [r for r in rows if r.error is not None or math.isnan(r.maa)]
    if bad:
        for r in bad:
            print(f"error: {r.problem} sigma={r.sigma} outliers={r.outlier_ratio} m={r.m} "
                  f"rule={r.rule}: {r.error or 'no result'}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


COMMANDS = {"simulate": cmd_simulate, "corfree": cmd_corfree, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(message)s", stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nonsac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"nonsac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
