import dataclasses
import json

import numpy as np
import pytest

from echossl.core import ConfigError, SplitSpec, tensor_digest
from echossl.evaluate import MetricsReport
from echossl.experiment import (
    DEFAULT_SPLIT,
    PRESETS,
    ExperimentConfig,
    build_dataset,
    load_dataset,
    load_predictions,
    preset,
    run_experiment,
    save_predictions,
)
from echossl.models import EncoderConfig
from echossl.synthdata import (
    ACCEPTANCE_PRESET,
    area_variance_feature,
    iter_dataset,
    small_preset,
)
from echossl.train import TrainConfig

SMALL_SYNTH = small_preset(n_clips=12, seed=3)


def small_experiment(name="small-ssl", seeds=(11, 12)):
    return ExperimentConfig(
        name=name,
        synth=SMALL_SYNTH,
        split=DEFAULT_SPLIT,
        pretrain=TrainConfig(stage="pretrain", epochs=1, batch_size=2,
                             learning_rate=1e-3, seed=11),
        train=TrainConfig(stage="finetune", epochs=2, batch_size=4,
                          learning_rate=1e-3, seed=11),
        seeds=seeds,
    )


# ---------------------------------------------------------------- datasets


def test_build_dataset_contents(small_ds):
    assert len(small_ds.manifest) == 12
    assert small_ds.manifest.source_ids[0] == "synth-0000"
    assert set(small_ds.features) == set(small_ds.manifest.source_ids)
    tensor = small_ds.store.get("synth-0003")
    assert tensor.shape == (32, 224, 224, 1)
    cid, raw, label = next(iter_dataset(SMALL_SYNTH))
    assert small_ds.features[cid] == pytest.approx(area_variance_feature(raw))
    assert small_ds.manifest.entries[0].label == pytest.approx(label)


def test_build_dataset_round_trips_through_disk(small_ds, tmp_path):
    built = build_dataset(dataclasses.replace(SMALL_SYNTH, n_clips=3),
                          save_dir=tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.manifest == built.manifest
    assert loaded.synth == built.synth
    assert loaded.features == built.features
    for cid in built.manifest.source_ids:
        assert tensor_digest(loaded.store.get(cid)) == tensor_digest(built.store.get(cid))
    names = {p.name for p in tmp_path.iterdir()}
    assert {"manifest.json", "features.json", "hashes.json",
            "synth-config.json"} <= names


# ---------------------------------------------------------------- config


def test_experiment_config_guards():
    cfg = small_experiment()
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, seeds=())
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, pretrain=cfg.train)  # wrong stage in slot
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, train=cfg.pretrain)


def test_experiment_config_dict_round_trip():
    cfg = small_experiment()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    no_pre = dataclasses.replace(cfg, pretrain=None,
                                 train=TrainConfig(stage="supervised", epochs=1,
                                                   batch_size=4, learning_rate=1e-3))
    assert ExperimentConfig.from_dict(no_pre.to_dict()) == no_pre


# ---------------------------------------------------------------- presets


def test_every_preset_builds():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.name == name
        assert cfg.seeds == (40, 41, 42)
        assert cfg.synth == ACCEPTANCE_PRESET


def test_unknown_preset_lists_options():
    with pytest.raises(ConfigError, match="ssl-64-tiny"):
        preset("nope")


def test_ssl_presets_form_a_batch_size_pair():
    big, small = preset("ssl-64-tiny"), preset("ssl-32-tiny")
    assert big.pretrain.batch_size == 2 * small.pretrain.batch_size == 8
    assert dataclasses.replace(big.pretrain, batch_size=4) == small.pretrain
    assert big.train == small.train
    assert big.train.stage == "finetune"
    assert big.pretrain.encoder == EncoderConfig.tiny()


def test_controls_have_no_pretraining():
    assert preset("supervised-end-to-end-tiny").pretrain is None
    assert preset("supervised-end-to-end-tiny").train.stage == "supervised"
    assert preset("random-frozen-tiny").pretrain is None
    assert preset("random-frozen-tiny").train.stage == "finetune"


def test_full_scale_presets_mirror_published_recipe():
    cfg = preset("ssl-64")
    assert cfg.pretrain == TrainConfig.paper_pretrain(batch_size=64)
    assert cfg.pretrain.epochs == 500
    assert cfg.train.encoder == EncoderConfig.full()


# ---------------------------------------------------------------- predictions io


def test_predictions_round_trip(tmp_path):
    ids = ["a", "b", "c"]
    labels = np.array([2.0, 7.31, 9.999999999])
    preds = np.array([1.9, 0.1 + 0.2, 10.0])
    path = tmp_path / "p.csv"
    save_predictions(path, ids, labels, preds)
    rids, rlabels, rpreds = load_predictions(path)
    assert rids == ids
    np.testing.assert_array_equal(rlabels, labels)
    np.testing.assert_array_equal(rpreds, preds)  # repr round-trip is exact


# ---------------------------------------------------------------- orchestration


@pytest.fixture(scope="module")
def small_run(small_ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    config = small_experiment()
    return config, out, run_experiment(config, out, dataset=small_ds)


def test_run_experiment_directory_layout(small_run):
    _, out, result = small_run
    for name in ("config.json", "train-manifest.json", "test-manifest.json",
                 "baseline.json", "aggregate.json", "summary.txt"):
        assert (out / name).exists(), name
    for seed in (11, 12):
        seed_dir = out / f"seed-{seed}"
        for name in ("pretrain.pt", "pretrain-log.jsonl", "train-log.jsonl",
                     "predictions.csv", "train-predictions.csv", "report.json"):
            assert (seed_dir / name).exists(), f"seed-{seed}/{name}"
    assert result.directory == out


def test_run_experiment_reports_are_consistent(small_run):
    config, out, result = small_run
    assert set(result.seed_reports) == {11, 12}
    assert result.aggregate.n_seeds == 2
    maes = [result.seed_reports[s].mae for s in config.seeds]
    assert result.aggregate.mae_mean == pytest.approx(np.mean(maes))
    ids, labels, preds = load_predictions(out / "seed-11" / "predictions.csv")
    test_ids = json.loads((out / "test-manifest.json").read_text())["entries"]
    assert ids == [e["source_id"] for e in test_ids]
    report = MetricsReport.from_dict(
        json.loads((out / "seed-11" / "report.json").read_text()))
    assert report == result.seed_reports[11]
    summary = (out / "summary.txt").read_text()
    assert config.name in summary and "baseline (mean)" in summary


def test_run_experiment_resumes_without_retraining(small_ds, small_run):
    config, out, result = small_run
    ckpt = out / "seed-11" / "pretrain.pt"
    stamp = ckpt.stat().st_mtime_ns
    again = run_experiment(config, out, dataset=small_ds)
    assert ckpt.stat().st_mtime_ns == stamp  # finished seed was skipped
    assert again.seed_reports == result.seed_reports
    assert again.aggregate == result.aggregate


def test_run_experiment_is_deterministic_across_directories(small_ds, small_run,
                                                            tmp_path):
    config, _, result = small_run
    fresh = run_experiment(config, tmp_path, dataset=small_ds)
    assert fresh.seed_reports == result.seed_reports
    assert fresh.baseline == result.baseline


def test_run_experiment_refuses_config_conflicts(small_ds, small_run):
    _, out, _ = small_run
    other = small_experiment(name="something-else")
    with pytest.raises(ConfigError, match="different config"):
        run_experiment(other, out, dataset=small_ds)


def test_run_experiment_checks_dataset_provenance(small_ds, tmp_path):
    config = dataclasses.replace(small_experiment(),
                                 synth=dataclasses.replace(SMALL_SYNTH, seed=4))
    with pytest.raises(ConfigError, match="different synth config"):
        run_experiment(config, tmp_path, dataset=small_ds)


def test_run_experiment_supervised_arm(small_ds, tmp_path):
    config = ExperimentConfig(
        name="small-supervised", synth=SMALL_SYNTH, split=DEFAULT_SPLIT,
        train=TrainConfig(stage="supervised", epochs=1, batch_size=4,
                          learning_rate=1e-3), seeds=(11,))
    result = run_experiment(config, tmp_path, dataset=small_ds)
    assert result.aggregate.n_seeds == 1
    assert result.aggregate.mae_std is None
    assert not (tmp_path / "seed-11" / "pretrain.pt").exists()
