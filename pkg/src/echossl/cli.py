"""Command-line interface: one subcommand per pipeline stage.

    echossl synthdata   --out data/raw --n-clips 96 --seed 7
    echossl preprocess  --manifest data/raw/manifest.json --out data/proc
    echossl pretrain    --config cfg.yaml --manifest data/proc/manifest.json --out run/
    echossl finetune    --config cfg.yaml --checkpoint run/pretrain.pt ...
    echossl evaluate    --predictions run/seed-40/predictions.csv [--check report.json]
    echossl report      --run-dir run/
    echossl run         --preset ssl-64-tiny --out run/

Training configs are YAML or JSON files with the TrainConfig schema
(stage, epochs, batch_size, learning_rate, weight_decay, lr_milestones,
lr_decay_factor, seed, temperature, augment, encoder, val_fraction,
checkpoint_every). The default output root is $ECHOSSL_OUT_ROOT (falling
back to ./runs). Exit status is 0 only when every requested stage and
seed completed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import yaml

from .core import Manifest
from .evaluate import (
    MetricsReport,
    evaluate_predictions,
    format_table,
    load_report,
    report_row,
    save_report,
)
from .experiment import (
    ExperimentConfig,
    PRESETS,
    build_dataset,
    load_dataset,
    load_predictions,
    preset,
    run_experiment,
)
from .models import save_checkpoint
from .plots import plot_data_efficiency, plot_scatter
from .preprocess import ClipStore, preprocess_manifest
from .synthdata import SynthConfig, gen_dataset, learnability_check
from .train import TrainConfig, finetune, pretrain, write_loss_log


def _out_root() -> Path:
    return Path(os.environ.get("ECHOSSL_OUT_ROOT", "runs"))


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        return yaml.safe_load(text)
    return json.loads(text)


def _store_for(manifest: Manifest, root: str | None, manifest_path: str) -> ClipStore:
    base = root if root is not None else str(Path(manifest_path).parent)
    return ClipStore(manifest=manifest, root=base)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synthdata(args) -> int:
    config = SynthConfig(
        n_clips=args.n_clips, seed=args.seed, co_range=tuple(args.co_range),
        height=args.height, width=args.width, noise=args.noise,
        fps_range=tuple(args.fps_range),
        frame_count_range=tuple(args.frame_count_range))
    out = Path(args.out)
    if args.preprocessed:
        built = build_dataset(config, save_dir=out)
        print(f"wrote {len(built.manifest)} preprocessed clips to {out}")
    else:
        manifest = gen_dataset(config, str(out))
        print(f"wrote {len(manifest)} raw clips to {out}")
    if args.check_learnability:
        result = learnability_check(config)
        print(f"area-variance oracle: Pearson {result['pearson']:.4f} "
              f"on {result['n']} clips")
    return 0


def cmd_preprocess(args) -> int:
    manifest = Manifest.load(args.manifest)
    out_manifest, out_dir = preprocess_manifest(
        manifest, args.root or str(Path(args.manifest).parent), args.out)
    print(f"preprocessed {len(out_manifest)} clips into {out_dir}")
    return 0


def cmd_pretrain(args) -> int:
    config = TrainConfig.from_dict(_load_config_file(args.config))
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    manifest = Manifest.load(args.manifest)
    store = _store_for(manifest, args.data_root, args.manifest)
    result = pretrain(config, manifest, store, args.out, resume=args.resume)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final epoch mean loss: {result.records[-1]['loss']:.4f}")
    return 0


def cmd_finetune(args) -> int:
    config = TrainConfig.from_dict(_load_config_file(args.config))
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    manifest = Manifest.load(args.manifest)
    store = _store_for(manifest, args.data_root, args.manifest)
    result = finetune(config, args.checkpoint, manifest, store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(str(out / "model.pt"), kind="model",
                    encoder_config=config.encoder,
                    payload={"model_state": result.model.state_dict(),
                             "train_config": config.to_dict(),
                             "best_epoch": result.best_epoch,
                             "val_mae": result.val_mae})
    write_loss_log(out / "train-log.jsonl", result.records)
    best = "n/a" if result.best_epoch is None else str(result.best_epoch)
    print(f"model: {out / 'model.pt'} (best epoch {best})")
    return 0


def cmd_evaluate(args) -> int:
    ids, labels, preds = load_predictions(args.predictions)
    report = evaluate_predictions(preds, labels)
    print(format_table([report_row(args.name, report)]))
    if args.out:
        save_report(report, args.out)
    if args.check:
        stored = load_report(args.check)
        if not isinstance(stored, MetricsReport) or stored != report:
            print(f"MISMATCH: stored report {args.check} != recomputed metrics",
                  file=sys.stderr)
            return 1
        print(f"stored report {args.check} reproduced exactly")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary = run_dir / "summary.txt"
    if summary.exists():
        print(summary.read_text(encoding="utf-8").rstrip())
    plotted = 0
    for pred_file in sorted(run_dir.glob("seed-*/predictions.csv")):
        _, labels, preds = load_predictions(pred_file)
        seed_name = pred_file.parent.name
        plot_scatter(labels, preds, pred_file.parent / "scatter",
                     title=f"{run_dir.name} ({seed_name})")
        plotted += 1
    if plotted:
        print(f"wrote {plotted} scatter plot(s)")
    if args.data_efficiency:
        points = [(p["size"], p["pearson"], p.get("label", ""))
                  for p in json.loads(Path(args.data_efficiency).read_text())]
        meta = plot_data_efficiency(points, run_dir / "data-efficiency")
        print(f"wrote {meta['png']}")
    return 0


def cmd_run(args) -> int:
    if args.preset:
        config = preset(args.preset)
    else:
        config = ExperimentConfig.from_dict(_load_config_file(args.config))
    if args.seeds:
        config = ExperimentConfig.from_dict(
            {**config.to_dict(), "seeds": list(args.seeds)})
    out = Path(args.out) if args.out else (
        _out_root() / f"{config.name}-{time.strftime('%Y%m%d-%H%M%S')}")

    dataset = None
    if args.dataset_dir:
        ds_dir = Path(args.dataset_dir)
        if (ds_dir / "manifest.json").exists():
            dataset = load_dataset(ds_dir)
        else:
            dataset = build_dataset(config.synth, save_dir=ds_dir)
    result = run_experiment(config, out, dataset=dataset)
    print((out / "summary.txt").read_text(encoding="utf-8").rstrip())
    print(f"\nrun directory: {result.directory}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echossl",
        description="contrastive video pretraining + cardiac-output regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthdata", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int, default=96)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--co-range", type=float, nargs=2, default=(2.0, 10.0),
                   metavar=("LO", "HI"))
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--fps-range", type=float, nargs=2, default=(20.0, 30.0),
                   metavar=("LO", "HI"))
    p.add_argument("--frame-count-range", type=int, nargs=2, default=(48, 60),
                   metavar=("LO", "HI"))
    p.add_argument("--preprocessed", action="store_true",
                   help="write model-ready tensors instead of raw clips")
    p.add_argument("--check-learnability", action="store_true",
                   help="also run the area-variance oracle fit")
    p.set_defaults(func=cmd_synthdata)

    p = sub.add_parser("preprocess", help="raw clips -> (32, 224, 224, 1) tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None, help="base dir for relative clip paths")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="contrastive pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-root", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the regression head")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="pretraining checkpoint (omit for a random frozen encoder)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-root", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="metrics from stored predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--name", default="run")
    p.add_argument("--out", default=None, help="write report JSON here")
    p.add_argument("--check", default=None,
                   help="verify an existing report.json matches exactly")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="figures + summary for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--data-efficiency", default=None,
                   help="JSON list of {size, pearson, label} points to plot")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full experiment (dataset -> seeds -> report)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(PRESETS))
    group.add_argument("--config")
    p.add_argument("--out", default=None,
                   help="run directory (default: $ECHOSSL_OUT_ROOT/<name>-<stamp>)")
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--dataset-dir", default=None,
                   help="cache directory for the generated dataset")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
