#!/usr/bin/env python3
"""Certify the synthetic dataset is learnable before training anything.

Fits the closed-form area-variance oracle (per-frame bright-area
variance over squared mean, linear in the generator's target) and
reports its Pearson correlation. A value near 1 means any failure of a
trained model is the model's fault, not the data's. Optionally writes a
feature-vs-label scatter.

    python scripts/check_data_oracle.py
    python scripts/check_data_oracle.py --n-clips 32 --plot oracle.png
"""

import argparse
from dataclasses import replace

import numpy as np

from echossl.plots import plot_scatter
from echossl.synthdata import (
    ACCEPTANCE_PRESET,
    area_variance_feature,
    iter_dataset,
    learnability_check,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-clips", type=int, default=ACCEPTANCE_PRESET.n_clips)
    parser.add_argument("--seed", type=int, default=ACCEPTANCE_PRESET.seed)
    parser.add_argument("--plot", default=None, help="write scatter figure here")
    args = parser.parse_args()

    config = replace(ACCEPTANCE_PRESET, n_clips=args.n_clips, seed=args.seed)
    result = learnability_check(config)
    print(f"clips:     {result['n']}")
    print(f"fit:       label ~ {result['slope']:.2f} * feature + {result['intercept']:.2f}")
    print(f"Pearson:   {result['pearson']:.4f}")

    if args.plot:
        feats, labels = [], []
        for _, raw, label in iter_dataset(config):
            feats.append(area_variance_feature(raw))
            labels.append(label)
        pred = result["slope"] * np.asarray(feats) + result["intercept"]
        meta = plot_scatter(np.asarray(labels), pred, args.plot,
                            title=f"area-variance oracle (r={result['pearson']:.3f})")
        print(f"wrote {meta['png']}")

    return 0 if result["pearson"] > 0.95 else 1


if __name__ == "__main__":
    raise SystemExit(main())
