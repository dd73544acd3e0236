"""Command line front end: run, summarize, plot, probe."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ntk import PROBE_NAMES, run_probe
from .runner import ExperimentConfig, emit_plots, expand_sweep, run_experiment, summarize_run


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="churnlab",
        description="Training and measurement harness for churn-regularized value and policy learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train agents from a JSON config file")
    run_p.add_argument("--config", required=True, help="path to a JSON experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="run only this seed instead of the config's list")
    run_p.add_argument("--out", default=None, help="output root (default: $CHURNLAB_OUT or ./runs)")

    sum_p = sub.add_parser("summarize", help="write cross-seed summary.csv for finished runs")
    sum_p.add_argument("dirs", nargs="+", help="run directories containing seed* subdirectories")

    plot_p = sub.add_parser("plot", help="write return and churn charts as SVG")
    plot_p.add_argument("dirs", nargs="+", help="run directories containing seed* subdirectories")

    probe_p = sub.add_parser("probe", help="first-order churn prediction probes on a small network")
    probe_p.add_argument("--probe", required=True, choices=PROBE_NAMES)
    probe_p.add_argument("--alpha", type=float, default=1e-5, help="gradient step size")
    probe_p.add_argument("--seed", type=int, default=0)
    probe_p.add_argument("--out", default=None, help="JSONL output path (default: stdout)")

    args = parser.parse_args(argv)

    if args.command == "run":
        with open(args.config) as fh:
            raw = json.load(fh)
        # Validate the whole batch (a plain config is a batch of one) before
        # anything trains or touches the output root.
        configs = [ExperimentConfig.from_dict(point) for point in expand_sweep(raw)]
        seeds = None if args.seed is None else [args.seed]
        for cfg in configs:
            results = run_experiment(cfg, out=args.out, seeds=seeds)
            for result in results:
                print(f"run dir: {result.run_dir}")
                print(f"  final mean return: {result.final_return:.4f}")
                print(f"  final mean discounted return: {result.final_discounted_return:.4f}")
                if result.saw_nonfinite:
                    print("  warning: non-finite diagnostics were recorded", file=sys.stderr)
        return 0

    if args.command == "summarize":
        for d in args.dirs:
            run_dir = Path(d)
            rows = summarize_run(run_dir)
            print(f"{run_dir} ({rows[0]['n_seeds'] if rows else 0} seeds)")
            for row in rows:
                err = "" if row["stderr"] is None else f" +/- {row['stderr']:.6g}"
                print(f"  {row['quantity']}: {row['mean']:.6g}{err}")
            print(f"  wrote {run_dir / 'summary.csv'}")
        return 0

    if args.command == "plot":
        for path in emit_plots([Path(d) for d in args.dirs]):
            print(f"wrote {path}")
        return 0

    records = run_probe(args.probe, alpha=args.alpha, seed=args.seed)
    lines = [json.dumps(r, sort_keys=True) for r in records]
    if args.out is None:
        print("\n".join(lines))
    else:
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {len(lines)} records to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
