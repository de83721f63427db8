"""Training loops: contrastive pretraining and regression heads.

Three stages share one config type:

* ``pretrain``   — NT-Xent over two augmented views per clip, labels unused.
* ``finetune``   — encoder frozen, regression head trained on cached
                   features with squared error; best epoch picked on a
                   held-out slice of the training split.
* ``supervised`` — the same regression objective trained end to end from
                   scratch (no pretraining, nothing frozen); final-epoch
                   weights are returned so the small-data overfitting
                   regime stays observable.

Every random choice (weight init, batch order, augmentations, dropout)
is drawn from streams derived from ``config.seed``, and the torch RNG is
re-seeded at each epoch boundary, so a run is a pure function of
(config, manifest) and an interrupted run resumed from its checkpoint
replays the exact same trajectory.

Loss logs are JSONL records ``{epoch, step, loss, lr, wall_time}``; rows
with ``step == -1`` carry the per-epoch mean loss. ``wall_time`` is the
only field allowed to differ between identical runs.
"""

from __future__ import annotations

import contextlib
import copy
import dataclasses
import json
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentConfig, make_positive_pair
from .contrastive import block_pairing, ntxent_loss_torch
from .core import (
    CheckpointError,
    Clip,
    ConfigError,
    InvalidInputError,
    Manifest,
    RngStream,
    round_half_up,
)
from .evaluate import MetricsReport, evaluate_predictions
from .models import (
    ContrastiveModel,
    CoPredictor,
    EncoderConfig,
    VideoEncoder,
    clips_to_tensor,
    freeze_encoder,
    load_checkpoint,
    save_checkpoint,
)
from .preprocess import ClipStore

STAGES = ("pretrain", "finetune", "supervised")


def configure_torch() -> None:
    """Pin torch to a single CPU thread so reruns are bit-exact."""
    torch.set_num_threads(1)


@dataclass(frozen=True)
class TrainConfig:
    """One training stage: objective, schedule, and reproducibility knobs.

    ``epochs`` must be >= 1 except for the finetune stage, where 0 is an
    explicit no-op (the returned head keeps its initialization).
    Pretraining needs ``batch_size`` >= 2 — NT-Xent is undefined without
    at least one negative. ``augment`` and ``temperature`` only matter
    for pretraining; ``val_fraction`` only for fine-tuning.
    """

    stage: str
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float = 0.0
    lr_milestones: tuple[float, ...] = ()
    lr_decay_factor: float = 1.0
    seed: int = 40
    temperature: float = 0.5
    augment: AugmentConfig = AugmentConfig()
    encoder: EncoderConfig = EncoderConfig.tiny()
    val_fraction: float = 0.1
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        min_epochs = 0 if self.stage == "finetune" else 1
        if self.epochs < min_epochs:
            raise ConfigError(f"epochs must be >= {min_epochs} for stage {self.stage!r}")
        if self.stage == "pretrain" and self.batch_size < 2:
            raise ConfigError("pretraining needs batch_size >= 2 (NT-Xent needs a negative)")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        ms = tuple(float(m) for m in self.lr_milestones)
        if any(not (0.0 < m < 1.0) for m in ms) or list(ms) != sorted(ms):
            raise ConfigError(f"lr_milestones must be increasing fractions in (0,1), got {ms}")
        if not (self.lr_decay_factor > 0):
            raise ConfigError(f"lr_decay_factor must be > 0, got {self.lr_decay_factor}")
        if not (self.temperature > 0):
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not (0.0 <= self.val_fraction <= 0.5):
            raise ConfigError(f"val_fraction must be in [0, 0.5], got {self.val_fraction}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0 (0 = final only)")
        object.__setattr__(self, "lr_milestones", ms)

    @classmethod
    def paper_pretrain(cls, batch_size: int = 64, seed: int = 40) -> "TrainConfig":
        """Full-scale contrastive recipe: Adam 1e-5 / wd 1e-3, 500 epochs,
        step decay 0.1 at 33% and 66%."""
        return cls(stage="pretrain", epochs=500, batch_size=batch_size,
                   learning_rate=1e-5, weight_decay=1e-3,
                   lr_milestones=(0.33, 0.66), lr_decay_factor=0.1,
                   seed=seed, temperature=0.5, encoder=EncoderConfig.full())

    @classmethod
    def paper_finetune(cls, seed: int = 40) -> "TrainConfig":
        """Frozen-encoder head training: Adam 1e-4, 100 epochs, best epoch
        selected by MAE on a held-out 10% of the train split."""
        return cls(stage="finetune", epochs=100, batch_size=16,
                   learning_rate=1e-4, seed=seed, encoder=EncoderConfig.full())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr_milestones" in d:
            d["lr_milestones"] = tuple(d["lr_milestones"])
        if isinstance(d.get("augment"), dict):
            a = dict(d["augment"])
            for key in ("crop_side_range", "jitter_factor_range", "blur_sigma_range"):
                if key in a:
                    a[key] = tuple(a[key])
            d["augment"] = AugmentConfig(**a)
        if isinstance(d.get("encoder"), dict):
            d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        return cls(**d)


def lr_multiplier(epoch: int, total_epochs: int, milestones: Sequence[float],
                  factor: float) -> float:
    """Step-decay multiplier: factor^(#{m : epoch >= floor(m * total_epochs)})."""
    if not (0 <= epoch < total_epochs):
        raise InvalidInputError(f"epoch {epoch} outside [0, {total_epochs})")
    crossed = sum(1 for m in milestones if epoch >= math.floor(m * total_epochs))
    return float(factor ** crossed)


def _epoch_lr(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * lr_multiplier(
        epoch, config.epochs, config.lr_milestones, config.lr_decay_factor)


# --------------------------------------------------------------------------
# loss logs
# --------------------------------------------------------------------------

def write_loss_log(path: str | Path, records: list[dict]) -> None:
    Path(path).write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def read_loss_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def loss_log_rows(records: list[dict]) -> list[tuple]:
    """The deterministic view of a loss log: wall_time stripped."""
    return [(r["epoch"], r["step"], r["loss"], r["lr"]) for r in records]


def _record(records: list[dict], epoch: int, step: int, loss: float, lr: float) -> None:
    records.append({"epoch": epoch, "step": step, "loss": loss, "lr": lr,
                    "wall_time": time.time()})


# --------------------------------------------------------------------------
# contrastive pretraining
# --------------------------------------------------------------------------

@dataclass
class PretrainResult:
    checkpoint_path: str
    records: list[dict]
    model: ContrastiveModel


def _save_pretrain_state(path: Path, config: TrainConfig, model: ContrastiveModel,
                         optimizer: torch.optim.Optimizer, next_epoch: int,
                         records: list[dict]) -> None:
    save_checkpoint(str(path), kind="pretrain", encoder_config=config.encoder,
                    payload={
                        "train_config": config.to_dict(),
                        "model_state": model.state_dict(),
                        "encoder_state": model.encoder.state_dict(),
                        "optimizer_state": optimizer.state_dict(),
                        "next_epoch": next_epoch,
                        "records": records,
                    })


def pretrain(config: TrainConfig, manifest: Manifest, store: ClipStore,
             out_dir: str | Path, resume: bool = False,
             overwrite: bool = False) -> PretrainResult:
    """Contrastive pretraining of encoder + projection head.

    Labels in the manifest are never read. Each step samples
    ``batch_size`` clips (last incomplete batch dropped), builds two
    views per clip, and minimizes NT-Xent over the 2N projections with
    Adam under the step-decay schedule. A checkpoint lands in
    ``out_dir/pretrain.pt`` at the end (and every ``checkpoint_every``
    epochs); the loss log in ``out_dir/pretrain-log.jsonl``.
    """
    if config.stage != "pretrain":
        raise ConfigError(f"pretrain() needs a pretrain config, got stage {config.stage!r}")
    if len(manifest) == 0:
        raise InvalidInputError("cannot pretrain on an empty manifest")
    if len(manifest) < config.batch_size:
        raise InvalidInputError(
            f"batch_size {config.batch_size} exceeds dataset size {len(manifest)}")
    configure_torch()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "pretrain.pt"
    log_path = out / "pretrain-log.jsonl"

    root = RngStream(config.seed, "pretrain")
    torch.manual_seed(root.child("init").torch_seed())
    model = ContrastiveModel(config.encoder)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 weight_decay=config.weight_decay)
    start_epoch, records = 0, []
    if ckpt_path.exists() and not overwrite:
        if not resume:
            raise CheckpointError(
                f"{ckpt_path} already exists; pass resume=True to continue it "
                "or overwrite=True to discard it")
        saved = load_checkpoint(str(ckpt_path), expected_kind="pretrain",
                                expected_config=config.encoder)
        if saved["payload"]["train_config"] != config.to_dict():
            raise CheckpointError(
                f"existing run in {out} used a different training config; refusing to resume")
        model.load_state_dict(saved["payload"]["model_state"])
        optimizer.load_state_dict(saved["payload"]["optimizer_state"])
        start_epoch = saved["payload"]["next_epoch"]
        records = list(saved["payload"]["records"])

    ids = manifest.source_ids
    clips = {cid: Clip(store.get(cid), cid) for cid in ids}
    n_steps = len(ids) // config.batch_size
    pairing = torch.from_numpy(block_pairing(config.batch_size))

    model.train()
    for epoch in range(start_epoch, config.epochs):
        lr = _epoch_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        torch.manual_seed(root.child("epoch", epoch).torch_seed())
        order = root.child("order", epoch).generator().permutation(len(ids))
        epoch_losses = []
        for step in range(n_steps):
            chosen = [ids[int(j)]
                      for j in order[step * config.batch_size:(step + 1) * config.batch_size]]
            views0, views1 = [], []
            for i, cid in enumerate(chosen):
                v0, v1 = make_positive_pair(
                    clips[cid], root.child("aug", epoch, step, i), config.augment)
                views0.append(v0.tensor)
                views1.append(v1.tensor)
            x = clips_to_tensor(np.stack(views0 + views1))
            z = model(x)
            loss = ntxent_loss_torch(z, pairing, config.temperature)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            loss_val = float(loss.detach())
            epoch_losses.append(loss_val)
            _record(records, epoch, step, loss_val, lr)
        _record(records, epoch, -1, float(np.mean(epoch_losses)), lr)
        if epoch == config.epochs - 1 or (
                config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0):
            _save_pretrain_state(ckpt_path, config, model, optimizer, epoch + 1, records)
            write_loss_log(log_path, records)
    return PretrainResult(str(ckpt_path), records, model)


# --------------------------------------------------------------------------
# regression training (frozen head / end-to-end)
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: CoPredictor
    records: list[dict]
    best_epoch: int | None = None
    val_mae: float | None = None


def encode_features(encoder: VideoEncoder, store: ClipStore, ids: Sequence[str],
                    batch_size: int = 8) -> torch.Tensor:
    """Encoder features for a list of clips, computed without gradients."""
    configure_torch()
    encoder.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            x = clips_to_tensor(store.batch(list(ids[start:start + batch_size])))
            outs.append(encoder(x))
    return torch.cat(outs)


def finetune(config: TrainConfig, checkpoint: str | None, manifest: Manifest,
             store: ClipStore) -> TrainResult:
    """Train a regression head on top of a frozen encoder.

    ``checkpoint`` is a pretraining checkpoint path, or None for a
    randomly initialized (still frozen) encoder — the random-feature
    baseline. Features are computed once up front; only the head sees
    gradients. The head state from the epoch with the lowest MAE on a
    held-out ``val_fraction`` of the split is returned.
    """
    if config.stage != "finetune":
        raise ConfigError(f"finetune() needs a finetune config, got stage {config.stage!r}")
    if len(manifest) == 0:
        raise InvalidInputError("cannot finetune on an empty manifest")
    manifest.require_labels()
    configure_torch()

    root = RngStream(config.seed, "finetune")
    torch.manual_seed(root.child("init").torch_seed())
    model = CoPredictor(config.encoder)
    if checkpoint is not None:
        saved = load_checkpoint(checkpoint, expected_kind="pretrain",
                                expected_config=config.encoder)
        model.encoder.load_state_dict(saved["payload"]["encoder_state"])
    freeze_encoder(model)

    ids = manifest.source_ids
    labels = torch.tensor([float(v) for v in manifest.labels], dtype=torch.float32)
    feats = encode_features(model.encoder, store, ids, batch_size=max(config.batch_size, 8))

    n = len(ids)
    n_val = round_half_up(config.val_fraction * n) if config.epochs > 0 else 0
    perm = root.child("val-split").generator().permutation(n)
    val_idx = torch.from_numpy(np.sort(perm[:n_val]))
    train_idx = np.sort(perm[n_val:])
    if train_idx.size == 0:
        raise InvalidInputError("val_fraction leaves no training samples")

    head = model.head
    optimizer = torch.optim.Adam(head.parameters(), lr=config.learning_rate,
                                 weight_decay=config.weight_decay)
    records: list[dict] = []
    best_state, best_mae, best_epoch = None, math.inf, None
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        torch.manual_seed(root.child("epoch", epoch).torch_seed())
        order = root.child("order", epoch).generator().permutation(train_idx)
        head.train()
        epoch_losses = []
        for step, start in enumerate(range(0, order.size, config.batch_size)):
            idx = torch.from_numpy(order[start:start + config.batch_size])
            loss = F.mse_loss(head(feats[idx]), labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            _record(records, epoch, step, epoch_losses[-1], lr)
        _record(records, epoch, -1, float(np.mean(epoch_losses)), lr)
        if n_val:
            head.eval()
            with torch.no_grad():
                val_mae = float(torch.mean(torch.abs(head(feats[val_idx]) - labels[val_idx])))
            if val_mae < best_mae:
                best_mae, best_epoch = val_mae, epoch
                best_state = copy.deepcopy(head.state_dict())
    if best_state is not None:
        head.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, records=records, best_epoch=best_epoch,
                       val_mae=None if best_epoch is None else best_mae)


def train_supervised(config: TrainConfig, manifest: Manifest,
                     store: ClipStore) -> TrainResult:
    """End-to-end squared-error training of encoder + head from scratch.

    No augmentation, no early stopping, final-epoch weights returned:
    this is the arm that demonstrates what a high-capacity model does to
    a small labeled set.
    """
    if config.stage != "supervised":
        raise ConfigError(f"train_supervised() needs stage 'supervised', got {config.stage!r}")
    if len(manifest) == 0:
        raise InvalidInputError("cannot train on an empty manifest")
    manifest.require_labels()
    configure_torch()

    root = RngStream(config.seed, "supervised")
    torch.manual_seed(root.child("init").torch_seed())
    model = CoPredictor(config.encoder)
    ids = manifest.source_ids
    labels = torch.tensor([float(v) for v in manifest.labels], dtype=torch.float32)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 weight_decay=config.weight_decay)
    records: list[dict] = []
    model.train()
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        torch.manual_seed(root.child("epoch", epoch).torch_seed())
        order = root.child("order", epoch).generator().permutation(len(ids))
        epoch_losses = []
        for step, start in enumerate(range(0, order.size, config.batch_size)):
            chosen = [ids[int(j)] for j in order[start:start + config.batch_size]]
            x = clips_to_tensor(store.batch(chosen))
            idx = torch.from_numpy(order[start:start + config.batch_size])
            loss = F.mse_loss(model(x), labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            _record(records, epoch, step, epoch_losses[-1], lr)
        _record(records, epoch, -1, float(np.mean(epoch_losses)), lr)
    model.eval()
    return TrainResult(model=model, records=records)


def predict(model: CoPredictor, store: ClipStore, ids: Sequence[str],
            batch_size: int = 8) -> np.ndarray:
    """Deterministic eval-mode predictions, one value per clip id."""
    configure_torch()
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            x = clips_to_tensor(store.batch(list(ids[start:start + batch_size])))
            preds.append(model(x).numpy())
    return np.concatenate(preds).astype(np.float64)


# --------------------------------------------------------------------------
# multi-seed runs
# --------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    report: MetricsReport
    predictions: np.ndarray
    checkpoint: str | None
    model: CoPredictor
    pretrain_records: list[dict]
    train_records: list[dict]


def run_seeds(train_config: TrainConfig, train_manifest: Manifest,
              test_manifest: Manifest, store: ClipStore, seeds: Sequence[int],
              out_dir: str | Path | None = None,
              pretrain_config: TrainConfig | None = None,
              resume: bool = False) -> list[SeedResult]:
    """One independent pipeline run per seed; reports left unaggregated.

    Each seed re-seeds both configs and runs [pretrain ->] train ->
    predict -> evaluate. Checkpoints land in ``out_dir/seed-<s>/`` when
    an out_dir is given (a temporary directory is used otherwise).
    """
    if not seeds:
        raise InvalidInputError("seed list must be nonempty")
    test_manifest.require_labels()
    test_labels = np.asarray([float(v) for v in test_manifest.labels])
    results = []
    for seed in seeds:
        with contextlib.ExitStack() as stack:
            if out_dir is not None:
                seed_dir = Path(out_dir) / f"seed-{seed}"
            else:
                seed_dir = Path(stack.enter_context(tempfile.TemporaryDirectory()))
            ckpt, pre_records = None, []
            if pretrain_config is not None:
                pre = pretrain(replace(pretrain_config, seed=seed), train_manifest,
                               store, seed_dir, resume=resume)
                ckpt, pre_records = pre.checkpoint_path, pre.records
            cfg = replace(train_config, seed=seed)
            if cfg.stage == "supervised":
                trained = train_supervised(cfg, train_manifest, store)
            else:
                trained = finetune(cfg, ckpt, train_manifest, store)
            preds = predict(trained.model, store, test_manifest.source_ids)
            report = evaluate_predictions(preds, test_labels)
            if out_dir is None:
                ckpt = None  # the temporary seed_dir is about to vanish
        results.append(SeedResult(seed=seed, report=report, predictions=preds,
                                  checkpoint=ckpt, model=trained.model,
                                  pretrain_records=pre_records,
                                  train_records=trained.records))
    return results
