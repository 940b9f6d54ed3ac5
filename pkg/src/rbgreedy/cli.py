"""``rbgreedy`` command line: full experiment grids and single demo runs."""

from __future__ import annotations

import argparse
import sys

from .bench import (ExperimentConfig, ExperimentReport, emit_reports, make_test_set, run_experiment,
                    run_single, training_rng)
from .fem import thermal_block
from .greedy import STRATEGIES, GreedyConfig, sample_training_set


def _print_row(row):
    print(f"{row.strategy:>6} tol={row.tol:g} seed={row.seed} N={row.n_final} "
          f"evals={row.est_evals} wall={row.wall_ms / 1e3:.1f}s max_h1={row.max_h1_err:.2e}", flush=True)


def _run(args) -> int:
    config = ExperimentConfig.load(args.config)
    out = args.out or config.out_dir
    if out is None:
        print("error: no output directory (set out_dir in the config or pass --out)", file=sys.stderr)
        return 2
    if args.threads is not None:
        config.threads = args.threads
    report = run_experiment(config, progress=None if args.quiet else _print_row)
    paths = emit_reports(report, out)
    print(f"wrote {paths['summary']}")
    return 0


def _demo(args) -> int:
    model = thermal_block(args.n_per_side)
    xi = sample_training_set(model.parameter_box, args.n_train, training_rng(args.seed))
    gc = GreedyConfig(args.strategy, args.tol, args.n_train, args.seed,
                      n_tr_small=args.n_tr_small, m_sample=args.m_sample,
                      c_m=args.c_m, k_damp=args.k_damp, threads=args.threads)
    test_set = make_test_set(model, args.n_test, args.seed + 1)
    row, conv, _ = run_single(model, xi, gc, test_set)
    config = ExperimentConfig(n_per_side=args.n_per_side, n_train=args.n_train, train_seed=args.seed,
                              n_test=args.n_test, test_seed=args.seed + 1, tol_list=[args.tol],
                              seeds=[args.seed], strategies=[args.strategy], out_dir=args.out,
                              threads=args.threads)
    report = ExperimentReport([row], conv, config.to_dict())
    _print_row(row)
    paths = emit_reports(report, args.out)
    print(f"wrote {paths['summary']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbgreedy", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="override out_dir from the config")
    run.add_argument("--threads", type=int)
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=_run)

    demo = sub.add_parser("demo", help="single strategy run")
    demo.add_argument("--strategy", choices=STRATEGIES, required=True)
    demo.add_argument("--tol", type=float, required=True)
    demo.add_argument("--n-train", type=int, required=True)
    demo.add_argument("--seed", type=int, required=True)
    demo.add_argument("--k-damp", type=int, default=20)
    demo.add_argument("--c-m", type=int, default=20)
    demo.add_argument("--m-sample", type=int)
    demo.add_argument("--n-tr-small", type=int)
    demo.add_argument("--threads", type=int, default=1)
    demo.add_argument("--n-test", type=int, default=1000)
    demo.add_argument("--n-per-side", type=int, default=21)
    demo.add_argument("--out", required=True)
    demo.set_defaults(func=_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
