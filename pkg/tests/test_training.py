import dataclasses
import json

import numpy as np
import pytest
import torch

from bevfuse.errors import ConfigError, DataError, SchemaError
from bevfuse.geometry import BevGridSpec
from bevfuse.metrics import EvalConfig
from bevfuse.synthetic import SceneConfig, default_rig, generate_dataset
from bevfuse.training import (Checkpoint, TrainConfig, build_model, dataset_gt_frames,
                              evaluate_checkpoint, load_checkpoint, load_model,
                              predict_dataset, predictions_json, save_checkpoint,
                              smoothed_det_loss, train)

SMALL_GRID = BevGridSpec(16, 16, 3.2)


def small_dataset(n_train=2, n_val=2, seed=21, **cfg_kw):
    cfg = SceneConfig(seed=seed, frames_per_scene=3, image_size=32, **cfg_kw)
    return generate_dataset(cfg, n_train, n_val, grid=SMALL_GRID)


@pytest.fixture(scope="module")
def dataset():
    return small_dataset()


@pytest.fixture(scope="module")
def quick_config():
    return TrainConfig(learning_rate=1e-3, steps=4, seed=3, channels=16,
                       num_layers=1, num_queries=8)


@pytest.fixture(scope="module")
def trained(dataset, quick_config):
    return train(quick_config, dataset)


PARAM_GROUPS = {
    "embedding": lambda n: n.startswith("radar.embedding"),
    "gated_unit": lambda n: n.startswith("radar.gate"),
    "pos_embed": lambda n: n.startswith("encoder.pos_embed"),
    "image_backbone": lambda n: n.startswith("encoder.backbone"),
    "attention": lambda n: ".temporal." in n or ".spatial." in n,
    "feed_forward": lambda n: ".ffn." in n,
    "object_queries": lambda n: n.startswith("head.object_queries"),
    "detection_head": lambda n: n.startswith("head.") and "object_queries" not in n,
    "rain_head": lambda n: n.startswith("context.rain"),
    "tod_head": lambda n: n.startswith("context.tod"),
}


def test_one_step_touches_every_enabled_group(dataset, quick_config):
    before = {name: p.detach().clone()
              for name, p in build_model(quick_config, dataset).named_parameters()}
    cfg = dataclasses.replace(quick_config, steps=1)
    ckpt = train(cfg, dataset)
    changed_groups = set()
    for name, arr in ckpt.state.items():
        if not np.array_equal(before[name].numpy(), arr):
            for group, match in PARAM_GROUPS.items():
                if match(name):
                    changed_groups.add(group)
    assert changed_groups == set(PARAM_GROUPS)


def test_training_determinism(dataset, quick_config, trained):
    again = train(quick_config, dataset)
    assert [dataclasses.astuple(h) for h in again.loss_history] == \
        [dataclasses.astuple(h) for h in trained.loss_history]
    for name, arr in trained.state.items():
        np.testing.assert_array_equal(arr, again.state[name])


def test_loss_history_records_all_terms(trained, quick_config):
    assert len(trained.loss_history) == quick_config.steps
    for h in trained.loss_history:
        assert h.l_joint == h.l_det + h.l_rain + h.l_tod
        assert h.l_det >= 0 and h.l_rain >= 0 and h.l_tod >= 0
    first, last = smoothed_det_loss(trained.loss_history)
    assert first > 0 and last > 0


def test_mtl_off_freezes_context_heads(dataset, quick_config):
    cfg = dataclasses.replace(quick_config, with_mtl=False)
    base = build_model(cfg, dataset)
    init = {n: p.detach().clone().numpy() for n, p in base.named_parameters()}
    ckpt = train(cfg, dataset)
    for name, arr in ckpt.state.items():
        if name.startswith("context."):
            np.testing.assert_array_equal(arr, init[name])  # bit-identical
        elif name.startswith("head.object_queries"):
            assert not np.array_equal(arr, init[name])
    assert all(h.l_rain == 0.0 and h.l_tod == 0.0 for h in ckpt.loss_history)


def test_rb_off_freezes_radar_backbone(dataset, quick_config):
    cfg = dataclasses.replace(quick_config, with_rb=False)
    base = build_model(cfg, dataset)
    init = {n: p.detach().clone().numpy() for n, p in base.named_parameters()}
    ckpt = train(cfg, dataset)
    for name, arr in ckpt.state.items():
        if name.startswith("radar."):
            np.testing.assert_array_equal(arr, init[name])
        elif name.startswith("encoder.pos_embed"):
            assert not np.array_equal(arr, init[name])


def test_train_requires_train_split(quick_config):
    ds = small_dataset(n_train=2, n_val=1, seed=22)
    ds.splits["train"] = []
    with pytest.raises(DataError):
        train(quick_config, ds)


def test_nonfinite_loss_aborts_with_term_name(dataset, quick_config):
    cfg = dataclasses.replace(quick_config, optimizer="sgd", learning_rate=1e14,
                              steps=30)
    with pytest.raises(RuntimeError, match="l_"):
        train(cfg, dataset)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="adagrad")


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path, dataset, trained):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained, str(path))
    back = load_checkpoint(str(path))
    assert back.config == trained.config
    assert back.step == trained.step
    assert [dataclasses.astuple(h) for h in back.loss_history] == \
        [dataclasses.astuple(h) for h in trained.loss_history]
    assert set(back.state) == set(trained.state)
    for name, arr in trained.state.items():
        assert arr.dtype == np.float32
        np.testing.assert_array_equal(arr, back.state[name])

    # forward outputs bit-identical through the save/load cycle
    model_a = load_model(trained, dataset)
    model_b = load_model(back, dataset)
    preds_a = predict_dataset(model_a, dataset)
    preds_b = predict_dataset(model_b, dataset)
    for fid in preds_a:
        for da, db in zip(preds_a[fid], preds_b[fid]):
            assert np.array_equal(da.box.params(), db.box.params())
            assert da.confidence == db.confidence


def test_checkpoint_census_is_stable(trained, dataset, quick_config):
    model = build_model(quick_config, dataset)
    assert set(trained.state) == {n for n, _ in model.named_parameters()}


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"PK\x03\x04 not a checkpoint")
    with pytest.raises(SchemaError):
        load_checkpoint(str(path))
    with pytest.raises(SchemaError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


# ---------------------------------------------------------------------------
# evaluation orchestration


def test_evaluate_checkpoint_deterministic(dataset, trained):
    r1 = evaluate_checkpoint(trained, dataset, subset="all")
    r2 = evaluate_checkpoint(trained, dataset, subset="all")
    assert r1.to_json() == r2.to_json()
    assert r1.num_frames == sum(len(s.frames) for s in dataset.split_scenes("val"))


def test_evaluate_checkpoint_subset_partition(trained):
    ds = small_dataset(n_train=2, n_val=4, seed=23, rain_probability=0.5,
                       night_probability=0.5)
    cfg = dataclasses.replace(trained.config)
    ckpt = train(cfg, ds)
    full = evaluate_checkpoint(ckpt, ds, subset="all")
    rain = evaluate_checkpoint(ckpt, ds, subset="rain")
    night = evaluate_checkpoint(ckpt, ds, subset="night")
    gt = dataset_gt_frames(ds)
    assert rain.num_frames == sum(f.rain for f in gt)
    assert night.num_frames == sum(f.night for f in gt)
    assert full.num_frames == len(gt)


def test_evaluate_checkpoint_empty_subset_reports_not_crashes(trained, quick_config):
    ds = small_dataset(n_train=2, n_val=2, seed=24, rain_probability=0.0)
    ckpt = train(quick_config, ds)
    report = evaluate_checkpoint(ckpt, ds, subset="rain")
    assert report.num_frames == 0
    assert report.nds == 0.0
    assert report.per_class_ap == {}


def test_untrained_model_scores_near_zero(dataset, quick_config):
    model = build_model(quick_config, dataset)
    preds = predict_dataset(model, dataset)
    gt = dataset_gt_frames(dataset)
    from bevfuse.metrics import evaluate_frames
    report = evaluate_frames(gt, preds)
    assert report.mean_ap < 0.05


def test_predictions_json_schema(dataset, trained):
    model = load_model(trained, dataset)
    preds = predict_dataset(model, dataset)
    doc = predictions_json(preds)
    assert doc["schema_version"] == 1
    from bevfuse.metrics import predictions_from_json
    parsed = predictions_from_json(doc)
    assert set(parsed) == set(preds)
    n_q = trained.config.num_queries
    assert all(len(v) == n_q for v in parsed.values())
