#!/usr/bin/env python3
"""Run the tiny-encoder benchmark: supervised vs SSL-frozen at two batch sizes.

Builds (or reloads) the 96-clip synthetic dataset, runs the requested
preset arms across seeds, and prints one aggregate row per arm plus the
mean-predictor baseline. With --dataset-dir the generated clips are
cached so later invocations skip the ~35 s build.

    python scripts/run_benchmark.py --out runs/bench --dataset-dir data/synth96
    python scripts/run_benchmark.py --arms ssl-64-tiny --seeds 40 --out runs/one
"""

import argparse
import time
from pathlib import Path

from echossl.evaluate import format_table, report_row
from echossl.experiment import (
    ExperimentConfig,
    build_dataset,
    load_dataset,
    preset,
    run_experiment,
)

DEFAULT_ARMS = ("supervised-end-to-end-tiny", "ssl-64-tiny", "ssl-32-tiny")


def get_dataset(config, dataset_dir):
    if dataset_dir is None:
        return build_dataset(config)
    path = Path(dataset_dir)
    if (path / "manifest.json").exists():
        return load_dataset(path)
    return build_dataset(config, save_dir=path)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="root directory for run outputs")
    parser.add_argument("--arms", nargs="+", default=list(DEFAULT_ARMS))
    parser.add_argument("--seeds", type=int, nargs="+", default=None,
                        help="override preset seeds (default 40 41 42)")
    parser.add_argument("--dataset-dir", default=None,
                        help="cache directory for the synthetic dataset")
    args = parser.parse_args()

    dataset = None
    rows = []
    t_total = time.monotonic()
    for arm in args.arms:
        config = preset(arm)
        if args.seeds:
            config = ExperimentConfig.from_dict(
                {**config.to_dict(), "seeds": args.seeds})
        if dataset is None:
            dataset = get_dataset(config.synth, args.dataset_dir)
        t0 = time.monotonic()
        result = run_experiment(config, Path(args.out) / arm, dataset=dataset)
        elapsed = time.monotonic() - t0
        print(f"{arm}: {elapsed:.0f}s")
        for seed in config.seeds:
            rep = result.seed_reports[seed]
            print(f"  seed {seed}: MAE={rep.mae:.3f} "
                  f"Pearson={rep.pearson:+.3f} R2={rep.r2:+.3f}")
        rows.append(report_row(arm, result.aggregate))
        baseline = result.baseline

    rows.append(report_row("baseline (mean)", baseline))
    print()
    print(format_table(rows))
    print(f"\ntotal wall time: {time.monotonic() - t_total:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
