#!/usr/bin/env python3
"""One-seed grid search over the pretraining recipe on the synthetic set.

This is the tool that produced the tiny-preset hyperparameters. Each
variant pretrains with batch size 8, trains the frozen head, and reports
test metrics against the mean baseline. Watch the loss column: a run
stuck near log(2N-1) = 2.708 for N=8 never separated the projections
and its downstream metrics are noise.

    python scripts/grid_pretrain.py --dataset-dir data/synth96
    python scripts/grid_pretrain.py --lrs 1e-4 3e-4 --temps 0.1 --epochs 45
"""

import argparse
import itertools
import time
from dataclasses import replace

from echossl.augment import DEFAULT_AUGMENT, MILD_AUGMENT
from echossl.core import split_manifest
from echossl.evaluate import mean_baseline
from echossl.experiment import DEFAULT_SPLIT, preset
from echossl.train import run_seeds

from run_benchmark import get_dataset

AUGMENTS = {"mild": MILD_AUGMENT, "default": DEFAULT_AUGMENT}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset-dir", default=None)
    parser.add_argument("--lrs", type=float, nargs="+", default=[3e-4, 1e-3])
    parser.add_argument("--temps", type=float, nargs="+", default=[0.1, 0.5])
    parser.add_argument("--augments", nargs="+", default=["mild", "default"],
                        choices=sorted(AUGMENTS))
    parser.add_argument("--epochs", type=int, default=None,
                        help="override preset pretraining epochs")
    parser.add_argument("--seed", type=int, default=40)
    args = parser.parse_args()

    base = preset("ssl-64-tiny")
    dataset = get_dataset(base.synth, args.dataset_dir)
    train_m, test_m = split_manifest(dataset.manifest, DEFAULT_SPLIT)
    baseline = mean_baseline(
        [float(v) for v in train_m.labels], [float(v) for v in test_m.labels])
    print(f"baseline test MAE={baseline.mae:.3f}   ({len(train_m)} train / "
          f"{len(test_m)} test, seed {args.seed})\n")

    for lr, temp, aug_name in itertools.product(args.lrs, args.temps, args.augments):
        pre = replace(base.pretrain, learning_rate=lr, temperature=temp,
                      augment=AUGMENTS[aug_name])
        if args.epochs:
            pre = replace(pre, epochs=args.epochs)
        t0 = time.monotonic()
        result = run_seeds(base.train, train_m, test_m, dataset.store,
                           seeds=(args.seed,), pretrain_config=pre)[0]
        first = result.pretrain_records[0]["loss"]
        last = [r for r in result.pretrain_records if r["step"] == -1][-1]["loss"]
        rep = result.report
        print(f"lr={lr:g} temp={temp:g} aug={aug_name:7s}  "
              f"loss {first:.3f}->{last:.3f}  "
              f"MAE={rep.mae:.3f} Pearson={rep.pearson:+.3f} R2={rep.r2:+.3f}  "
              f"({time.monotonic() - t0:.0f}s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
