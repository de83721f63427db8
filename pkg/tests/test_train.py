import dataclasses
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import strip_wall_time
from echossl.augment import MILD_AUGMENT
from echossl.core import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    Manifest,
    RngStream,
)
from echossl.models import EncoderConfig, load_checkpoint, parameter_checksum
from echossl.train import (
    PretrainResult,
    TrainConfig,
    configure_torch,
    encode_features,
    finetune,
    loss_log_rows,
    lr_multiplier,
    predict,
    pretrain,
    read_loss_log,
    run_seeds,
    train_supervised,
    write_loss_log,
)

FAST_PRETRAIN = TrainConfig(stage="pretrain", epochs=2, batch_size=2,
                            learning_rate=1e-3, temperature=0.5, seed=11,
                            augment=MILD_AUGMENT)
FAST_HEAD = TrainConfig(stage="finetune", epochs=3, batch_size=4,
                        learning_rate=1e-3, seed=11)
FAST_SUP = TrainConfig(stage="supervised", epochs=3, batch_size=4,
                       learning_rate=1e-3, seed=11)


def halves(ds, n_train=8):
    ids = ds.manifest.source_ids
    return ds.manifest.subset(ids[:n_train]), ds.manifest.subset(ids[n_train:])


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kwargs", [
    {"stage": "warmup"},
    {"stage": "pretrain", "epochs": 0},
    {"stage": "supervised", "epochs": 0},
    {"stage": "pretrain", "batch_size": 1},
    {"stage": "finetune", "batch_size": 0},
    {"learning_rate": 0.0},
    {"weight_decay": -1e-4},
    {"lr_milestones": (0.66, 0.33)},
    {"lr_milestones": (0.0, 0.5)},
    {"lr_milestones": (0.5, 1.0)},
    {"lr_decay_factor": 0.0},
    {"temperature": 0.0},
    {"val_fraction": 0.6},
    {"checkpoint_every": -1},
])
def test_config_rejections(kwargs):
    base = dict(stage="finetune", epochs=1, batch_size=4, learning_rate=1e-3)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        TrainConfig(**base)


def test_finetune_allows_zero_epochs():
    assert TrainConfig(stage="finetune", epochs=0, batch_size=4,
                       learning_rate=1e-3).epochs == 0


def test_config_dict_round_trip():
    cfg = TrainConfig(stage="pretrain", epochs=5, batch_size=4, learning_rate=2e-4,
                      lr_milestones=(0.33, 0.66), lr_decay_factor=0.1,
                      temperature=0.1, augment=MILD_AUGMENT,
                      encoder=EncoderConfig.tiny())
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    # and through JSON, where tuples become lists
    import json
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_published_recipes():
    pre = TrainConfig.paper_pretrain()
    assert (pre.epochs, pre.batch_size) == (500, 64)
    assert (pre.learning_rate, pre.weight_decay) == (1e-5, 1e-3)
    assert pre.lr_milestones == (0.33, 0.66) and pre.lr_decay_factor == 0.1
    assert pre.temperature == 0.5
    assert pre.encoder == EncoderConfig.full()
    head = TrainConfig.paper_finetune()
    assert (head.epochs, head.batch_size, head.learning_rate) == (100, 16, 1e-4)


# ---------------------------------------------------------------- lr schedule


def test_lr_multiplier_step_decay_golden():
    # milestones at floor(.33*30)=9 and floor(.66*30)=19
    ms = (0.33, 0.66)
    assert lr_multiplier(0, 30, ms, 0.1) == 1.0
    assert lr_multiplier(8, 30, ms, 0.1) == 1.0
    assert lr_multiplier(9, 30, ms, 0.1) == pytest.approx(0.1)
    assert lr_multiplier(18, 30, ms, 0.1) == pytest.approx(0.1)
    assert lr_multiplier(19, 30, ms, 0.1) == pytest.approx(0.01)
    assert lr_multiplier(29, 30, ms, 0.1) == pytest.approx(0.01)


def test_lr_multiplier_no_milestones_is_flat():
    assert all(lr_multiplier(e, 10, (), 0.1) == 1.0 for e in range(10))


def test_lr_multiplier_rejects_out_of_range_epoch():
    with pytest.raises(InvalidInputError):
        lr_multiplier(10, 10, (), 0.1)
    with pytest.raises(InvalidInputError):
        lr_multiplier(-1, 10, (), 0.1)


@given(total=st.integers(1, 500), factor=st.floats(0.01, 1.0),
       data=st.data())
def test_lr_multiplier_monotone_and_exact(total, factor, data):
    ms = tuple(sorted(data.draw(
        st.lists(st.floats(0.01, 0.99), min_size=0, max_size=4))))
    values = [lr_multiplier(e, total, ms, factor) for e in range(total)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    for e, v in enumerate(values):
        crossed = sum(1 for m in ms if e >= math.floor(m * total))
        assert v == pytest.approx(factor**crossed)


# ---------------------------------------------------------------- loss logs


def test_loss_log_round_trip(tmp_path):
    records = [
        {"epoch": 0, "step": 0, "loss": 2.5, "lr": 1e-3, "wall_time": 123.4},
        {"epoch": 0, "step": -1, "loss": 2.5, "lr": 1e-3, "wall_time": 124.0},
    ]
    path = tmp_path / "log.jsonl"
    write_loss_log(path, records)
    assert read_loss_log(path) == records
    assert loss_log_rows(records) == [(0, 0, 2.5, 1e-3), (0, -1, 2.5, 1e-3)]


def test_configure_torch_pins_one_thread():
    configure_torch()
    assert torch.get_num_threads() == 1


# ---------------------------------------------------------------- pretraining


@pytest.fixture(scope="module")
def pretrained(small_ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    train_m, _ = halves(small_ds)
    result = pretrain(FAST_PRETRAIN, train_m, small_ds.store, out)
    return train_m, result


def test_pretrain_stage_and_size_guards(small_ds):
    train_m, _ = halves(small_ds)
    with pytest.raises(ConfigError):
        pretrain(FAST_HEAD, train_m, small_ds.store, "/tmp/unused")
    big = dataclasses.replace(FAST_PRETRAIN, batch_size=64)
    with pytest.raises(InvalidInputError):
        pretrain(big, train_m, small_ds.store, "/tmp/unused")


def test_pretrain_artifacts_and_log_structure(pretrained):
    _, result = pretrained
    assert isinstance(result, PretrainResult)
    out = result.checkpoint_path
    assert out.endswith("pretrain.pt")
    on_disk = read_loss_log(out.replace("pretrain.pt", "pretrain-log.jsonl"))
    assert strip_wall_time(on_disk) == strip_wall_time(result.records)
    # 8 clips, batch 2 -> 4 steps/epoch plus one mean row per epoch
    per_epoch = [r for r in result.records if r["epoch"] == 0]
    assert [r["step"] for r in per_epoch] == [0, 1, 2, 3, -1]
    means = [r for r in result.records if r["step"] == -1]
    assert len(means) == FAST_PRETRAIN.epochs
    step_losses = [r["loss"] for r in per_epoch[:-1]]
    assert means[0]["loss"] == pytest.approx(np.mean(step_losses))
    assert all(r["lr"] == FAST_PRETRAIN.learning_rate for r in result.records)
    assert all(np.isfinite(r["loss"]) for r in result.records)


def test_pretrain_checkpoint_is_resumable_state(pretrained):
    _, result = pretrained
    saved = load_checkpoint(result.checkpoint_path, expected_kind="pretrain",
                            expected_config=FAST_PRETRAIN.encoder)
    payload = saved["payload"]
    assert payload["next_epoch"] == FAST_PRETRAIN.epochs
    assert payload["train_config"] == FAST_PRETRAIN.to_dict()
    assert strip_wall_time(payload["records"]) == strip_wall_time(result.records)
    enc_state = result.model.encoder.state_dict()
    for name, tensor in payload["encoder_state"].items():
        assert torch.equal(tensor, enc_state[name])


def test_pretrain_deterministic(small_ds, tmp_path, pretrained):
    train_m, first = pretrained
    second = pretrain(FAST_PRETRAIN, train_m, small_ds.store, tmp_path)
    assert loss_log_rows(second.records) == loss_log_rows(first.records)
    assert parameter_checksum(second.model) == parameter_checksum(first.model)


def test_pretrain_seed_changes_trajectory(small_ds, tmp_path, pretrained):
    train_m, first = pretrained
    other = pretrain(dataclasses.replace(FAST_PRETRAIN, seed=12), train_m,
                     small_ds.store, tmp_path)
    assert loss_log_rows(other.records) != loss_log_rows(first.records)


def test_pretrain_ignores_labels(small_ds, tmp_path, pretrained):
    train_m, first = pretrained
    unlabeled = Manifest(tuple(dataclasses.replace(e, label=None)
                               for e in train_m.entries))
    blind = pretrain(FAST_PRETRAIN, unlabeled, small_ds.store, tmp_path)
    assert loss_log_rows(blind.records) == loss_log_rows(first.records)
    assert parameter_checksum(blind.model) == parameter_checksum(first.model)


def test_pretrain_refuses_accidental_overwrite(small_ds, tmp_path):
    train_m, _ = halves(small_ds)
    cfg = dataclasses.replace(FAST_PRETRAIN, epochs=1)
    pretrain(cfg, train_m, small_ds.store, tmp_path)
    with pytest.raises(CheckpointError):
        pretrain(cfg, train_m, small_ds.store, tmp_path)
    # a different config cannot silently resume either
    with pytest.raises(CheckpointError):
        pretrain(dataclasses.replace(cfg, learning_rate=2e-3), train_m,
                 small_ds.store, tmp_path, resume=True)
    pretrain(cfg, train_m, small_ds.store, tmp_path, overwrite=True)


def test_pretrain_resume_replays_exact_trajectory(small_ds, tmp_path, pretrained):
    """An interrupted run continued from its checkpoint matches a straight run.

    The interrupted state is produced by running the first epoch alone and
    relabeling its checkpoint as a 2-epoch run; with no lr milestones the
    first epoch of both schedules is identical, so this is exactly the
    state after an interruption at the epoch boundary.
    """
    train_m, full = pretrained
    one = dataclasses.replace(FAST_PRETRAIN, epochs=1)
    pretrain(one, train_m, small_ds.store, tmp_path)
    ckpt = tmp_path / "pretrain.pt"
    record = torch.load(ckpt, weights_only=False)
    record["payload"]["train_config"] = FAST_PRETRAIN.to_dict()
    torch.save(record, ckpt)
    resumed = pretrain(FAST_PRETRAIN, train_m, small_ds.store, tmp_path, resume=True)
    assert loss_log_rows(resumed.records) == loss_log_rows(full.records)
    assert parameter_checksum(resumed.model) == parameter_checksum(full.model)


# ---------------------------------------------------------------- finetuning


def test_finetune_guards(small_ds):
    train_m, _ = halves(small_ds)
    with pytest.raises(ConfigError):
        finetune(FAST_SUP, None, train_m, small_ds.store)
    unlabeled = Manifest(tuple(dataclasses.replace(e, label=None)
                               for e in train_m.entries))
    with pytest.raises(InvalidInputError):
        finetune(FAST_HEAD, None, unlabeled, small_ds.store)


def test_finetune_zero_epochs_keeps_initialization(small_ds):
    train_m, test_m = halves(small_ds)
    cfg = dataclasses.replace(FAST_HEAD, epochs=0)
    result = finetune(cfg, None, train_m, small_ds.store)
    assert result.records == []
    assert result.best_epoch is None and result.val_mae is None
    again = finetune(cfg, None, train_m, small_ds.store)
    np.testing.assert_array_equal(
        predict(result.model, small_ds.store, test_m.source_ids),
        predict(again.model, small_ds.store, test_m.source_ids))


def test_finetune_trains_only_the_head(small_ds, pretrained, tmp_path):
    train_m, pre = pretrained
    result = finetune(FAST_HEAD, pre.checkpoint_path, train_m, small_ds.store)
    saved = load_checkpoint(pre.checkpoint_path)
    enc_state = result.model.encoder.state_dict()
    for name, tensor in saved["payload"]["encoder_state"].items():
        assert torch.equal(tensor, enc_state[name]), f"encoder drifted at {name}"
    assert not any(p.requires_grad for p in result.model.encoder.parameters())


def test_finetune_selects_best_epoch_on_heldout(small_ds, pretrained):
    train_m, pre = pretrained
    result = finetune(FAST_HEAD, pre.checkpoint_path, train_m, small_ds.store)
    assert result.best_epoch is not None
    assert 0 <= result.best_epoch < FAST_HEAD.epochs
    assert result.val_mae is not None and np.isfinite(result.val_mae)
    # with 8 train clips and val_fraction .1, one clip is held out
    mean_rows = [r for r in result.records if r["step"] == -1]
    assert len(mean_rows) == FAST_HEAD.epochs


def test_finetune_no_validation_when_fraction_zero(small_ds):
    train_m, _ = halves(small_ds)
    cfg = dataclasses.replace(FAST_HEAD, val_fraction=0.0)
    result = finetune(cfg, None, train_m, small_ds.store)
    assert result.best_epoch is None and result.val_mae is None
    assert len([r for r in result.records if r["step"] == -1]) == cfg.epochs


def test_finetune_needs_a_training_sample(small_ds):
    solo = small_ds.manifest.subset(small_ds.manifest.source_ids[:1])
    cfg = dataclasses.replace(FAST_HEAD, val_fraction=0.5)
    with pytest.raises(InvalidInputError):
        finetune(cfg, None, solo, small_ds.store)


def test_finetune_deterministic(small_ds, pretrained):
    train_m, pre = pretrained
    a = finetune(FAST_HEAD, pre.checkpoint_path, train_m, small_ds.store)
    b = finetune(FAST_HEAD, pre.checkpoint_path, train_m, small_ds.store)
    assert loss_log_rows(a.records) == loss_log_rows(b.records)
    assert parameter_checksum(a.model) == parameter_checksum(b.model)


# ---------------------------------------------------------------- supervised


def test_supervised_guards(small_ds):
    train_m, _ = halves(small_ds)
    with pytest.raises(ConfigError):
        train_supervised(FAST_HEAD, train_m, small_ds.store)


def test_supervised_loss_decreases_and_is_deterministic(small_ds):
    train_m, _ = halves(small_ds, n_train=4)
    cfg = dataclasses.replace(FAST_SUP, epochs=8, batch_size=4)
    a = train_supervised(cfg, train_m, small_ds.store)
    means = [r["loss"] for r in a.records if r["step"] == -1]
    assert means[-1] < means[0]
    assert a.best_epoch is None  # final-epoch weights, no early stopping
    b = train_supervised(cfg, train_m, small_ds.store)
    assert loss_log_rows(a.records) == loss_log_rows(b.records)
    assert parameter_checksum(a.model) == parameter_checksum(b.model)


# ---------------------------------------------------------------- features / predict


def test_encode_features_batch_invariant(small_ds, pretrained):
    _, pre = pretrained
    ids = small_ds.manifest.source_ids[:5]
    enc = pre.model.encoder
    f3 = encode_features(enc, small_ds.store, ids, batch_size=3)
    f8 = encode_features(enc, small_ds.store, ids, batch_size=8)
    assert f3.shape == (5, enc.feature_dim)
    assert torch.allclose(f3, f8, atol=1e-5)


def test_predict_matches_feature_head_composition(small_ds, pretrained):
    train_m, pre = pretrained
    result = finetune(FAST_HEAD, pre.checkpoint_path, train_m, small_ds.store)
    ids = small_ds.manifest.source_ids[8:]
    preds = predict(result.model, small_ds.store, ids, batch_size=2)
    feats = encode_features(result.model.encoder, small_ds.store, ids)
    with torch.no_grad():
        manual = result.model.head(feats).numpy()
    np.testing.assert_allclose(preds, manual, atol=1e-5)
    np.testing.assert_array_equal(
        preds, predict(result.model, small_ds.store, ids, batch_size=2))


# ---------------------------------------------------------------- multi-seed


def test_run_seeds_structure_and_determinism(small_ds, tmp_path):
    train_m, test_m = halves(small_ds)
    pre_cfg = dataclasses.replace(FAST_PRETRAIN, epochs=1)
    head_cfg = dataclasses.replace(FAST_HEAD, epochs=2)
    results = run_seeds(head_cfg, train_m, test_m, small_ds.store,
                        seeds=(11, 12), pretrain_config=pre_cfg)
    assert [r.seed for r in results] == [11, 12]
    for r in results:
        assert r.checkpoint is None  # ran in a temporary directory
        assert r.predictions.shape == (len(test_m),)
        assert np.isfinite(r.report.mae)
    assert not np.array_equal(results[0].predictions, results[1].predictions)

    again = run_seeds(head_cfg, train_m, test_m, small_ds.store,
                      seeds=(11,), pretrain_config=pre_cfg, out_dir=tmp_path)
    assert again[0].report == results[0].report
    assert again[0].checkpoint is not None
    assert (tmp_path / "seed-11" / "pretrain.pt").exists()


def test_run_seeds_requires_seeds_and_labels(small_ds):
    train_m, test_m = halves(small_ds)
    with pytest.raises(InvalidInputError):
        run_seeds(FAST_HEAD, train_m, test_m, small_ds.store, seeds=())
    unlabeled = Manifest(tuple(dataclasses.replace(e, label=None)
                               for e in test_m.entries))
    with pytest.raises(InvalidInputError):
        run_seeds(FAST_HEAD, train_m, unlabeled, small_ds.store, seeds=(11,))
