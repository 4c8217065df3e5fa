"""Command line benchmark reproducing the standard vs collapsed comparison as CSV."""

from __future__ import annotations

import argparse
import csv
import sys
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .collapse import vectors_per_node
from .graph import EvalStats, serialize
from .harness import (MlpSpec, build_mlp, nested_biharmonic, nested_biharmonic_stochastic,
                      nested_laplacian, paper_widths, small_widths)
from .operators import (DirectionSet, WeightedLaplacianSpec, biharmonic_program, biharmonic_stochastic_program,
                        count_vectors, laplacian_program, make_rng, sample_directions,
                        weighted_laplacian_program)

FIELDS = ["op", "mode", "exact", "dim", "n", "samples", "seed", "wall_ns_min", "flops", "vectors_per_node",
          "slope_flag"]


@dataclass
class BenchRecord:
    op: str
    mode: str
    exact: bool
    dim: int
    n: int | str
    samples: int | str
    seed: int
    wall_ns_min: float | str
    flops: float | str
    vectors_per_node: int | str
    slope_flag: str = ""


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"values must be positive integers, got {text!r}")
    return values


def fit_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares ``(slope, intercept, r_squared)``."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) < 2:
        return float("nan"), float("nan"), float("nan")
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    total = ((ys - ys.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / total if total > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def sigma_for(dim: int, seed: int) -> np.ndarray:
    """Full-rank diagonal weighting factor used by the weighted-Laplacian benchmark."""
    return np.diag(make_rng(seed + 1).uniform(0.5, 1.5, size=dim))


def make_program(op: str, exact: bool, dim: int, samples: int | None, distribution: str, seed: int):
    if op == "laplacian":
        dirs = None if exact else DirectionSet.sampled(dim, samples, distribution, seed)
        return laplacian_program(dim, dirs)
    if op == "weighted-laplacian":
        spec = WeightedLaplacianSpec(sigma_for(dim, seed))
        dirs = None if exact else DirectionSet.sampled(spec.rank, samples, distribution, seed)
        return weighted_laplacian_program(spec, dirs)
    if op == "biharmonic":
        return biharmonic_program(dim) if exact else biharmonic_stochastic_program(dim, samples, seed)
    raise ValueError(f"unknown operator {op!r}")


def exceeds_exact(op: str, dim: int, samples: int) -> bool:
    """Whether a stochastic run costs at least as much as the exact collapsed one."""
    rank = dim
    return count_vectors(op, "collapsed", dim, samples, exact=False) >= count_vectors(op, "collapsed", dim, rank)


def _oracle(op: str, exact: bool, fn, x0, dim: int, samples: int | None, distribution: str, seed: int):
    if op == "laplacian":
        if exact:
            return nested_laplacian(fn, x0)
        return nested_laplacian(fn, x0, sample_directions(samples, dim, distribution, seed), 1.0 / samples)
    if op == "weighted-laplacian":
        sigma = sigma_for(dim, seed)
        if exact:
            return nested_laplacian(fn, x0, sigma.T)
        dirs = sample_directions(samples, sigma.shape[1], distribution, seed) @ sigma.T
        return nested_laplacian(fn, x0, dirs, 1.0 / samples)
    if exact:
        return nested_biharmonic(fn, x0)
    return nested_biharmonic_stochastic(fn, x0, sample_directions(samples, dim, "gaussian", seed))


def run_bench(args) -> list[BenchRecord]:
    fn = build_mlp(MlpSpec(small_widths(args.dim) if args.small else paper_widths(args.dim), seed=args.seed))
    modes = ["standard", "collapsed"] if args.mode == "both" else [args.mode]
    batches = args.batch or [8]
    sweep = batches if args.exact else (args.samples or [1, 2, 4])
    n_fixed = batches[0]
    records: list[BenchRecord] = []
    flagged = set()
    if not args.exact:
        flagged = {s for s in sweep if exceeds_exact(args.op, args.dim, s)}
        for s in sorted(flagged):
            warnings.warn(f"S={s} costs at least as much as the exact collapsed operator", stacklevel=2)
    dumped = False
    for mode in modes:
        xs, walls, flops = [], [], []
        for value in sweep:
            n = value if args.exact else n_fixed
            samples = None if args.exact else value
            x0 = make_rng(args.seed).uniform(-1.0, 1.0, size=(n, args.dim))
            if mode == "oracle":
                run = lambda: _oracle(args.op, args.exact, fn, x0, args.dim, samples, args.distribution, args.seed)
                flop_count, vpn = "", ""
            else:
                program = make_program(args.op, args.exact, args.dim, samples, args.distribution, args.seed)
                graph = program.graph(fn, mode)
                if args.dump_graph and not dumped:
                    shown = program.graph(fn, "captured") if args.dump_graph == "before" else graph
                    sys.stdout.write(serialize(shown))
                    dumped = True
                stats = EvalStats()
                program.run(fn, x0, mode, stats=stats, graph=graph)
                flop_count, vpn = stats.flops, vectors_per_node(graph)
                run = lambda: program.run(fn, x0, mode, graph=graph)
            best = min(_timed(run) for _ in range(args.reps))
            flag = "exceeds_exact" if samples in flagged else ""
            records.append(BenchRecord(args.op, mode, args.exact, args.dim, n, samples or "", args.seed, best,
                                       flop_count, vpn, flag))
            xs.append(value)
            walls.append(best)
            flops.append(flop_count)
        wall_slope = fit_line(xs, walls)[0]
        flop_slope = fit_line(xs, flops)[0] if mode != "oracle" else ""
        flag = "slope" + (";exceeds_exact" if flagged else "")
        records.append(BenchRecord(args.op, mode, args.exact, args.dim, "slope" if args.exact else n_fixed,
                                   "" if args.exact else "slope", args.seed, wall_slope, flop_slope,
                                   records[-1].vectors_per_node, flag))
    return records


def _timed(fn) -> int:
    start = time.perf_counter_ns()
    fn()
    return time.perf_counter_ns() - start


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylorcollapse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    bench = sub.add_parser("bench", help="time standard vs collapsed Taylor mode on the benchmark MLP")
    bench.add_argument("--op", choices=["laplacian", "weighted-laplacian", "biharmonic"], required=True)
    bench.add_argument("--mode", choices=["standard", "collapsed", "both", "oracle"], default=None)
    kind = bench.add_mutually_exclusive_group()
    kind.add_argument("--exact", dest="exact", action="store_true", default=True)
    kind.add_argument("--stochastic", dest="exact", action="store_false")
    bench.add_argument("--dim", type=int, required=True)
    bench.add_argument("--batch", type=_int_list, default=None, help="batch sizes (exact sweep) or the fixed batch")
    bench.add_argument("--samples", type=_int_list, default=None, help="sample counts swept in stochastic mode")
    bench.add_argument("--distribution", choices=["rademacher", "gaussian"], default="gaussian")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--reps", type=int, default=5)
    bench.add_argument("--out", default="-")
    bench.add_argument("--small", action="store_true", help=f"use widths [D, 64, 64, 1]")
    bench.add_argument("--dump-graph", choices=["before", "after"], default=None)
    bench.add_argument("--collapse", action="store_true", help="shorthand for --mode collapsed")
    return parser


def validate(args, parser: argparse.ArgumentParser) -> None:
    if args.collapse:
        if args.mode not in (None, "collapsed"):
            parser.error("--collapse conflicts with --mode " + args.mode)
        args.mode = "collapsed"
    args.mode = args.mode or "both"
    if args.dim < 1:
        parser.error("--dim must be positive")
    if args.reps < 1:
        parser.error("--reps must be positive")
    if args.exact and args.samples:
        parser.error("--samples only applies to --stochastic runs")
    if args.op == "biharmonic" and not args.exact and args.distribution != "gaussian":
        parser.error("the stochastic biharmonic operator needs gaussian directions")
    if args.dump_graph and args.mode == "oracle":
        parser.error("--dump-graph needs a Taylor-mode run")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    validate(args, parser)
    records = run_bench(args)
    handle = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.DictWriter(handle, fieldnames=FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow(asdict(rec))
    finally:
        if handle is not sys.stdout:
            handle.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
