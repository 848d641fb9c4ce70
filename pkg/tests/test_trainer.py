import dataclasses

import numpy as np
import pytest

from anchormae import data, numerics as nm, trainer
from anchormae.config import Phase, TrainConfig
from anchormae.errors import CheckpointError, ConfigError, InvalidArgument, TrainingDiverged
from anchormae.imageset import SetKind
from conftest import TINY_GEN, TINY_MODEL, TINY_TRAIN


def test_pretrain_fixed_seed_reproduces_log(tiny_dataset):
    a = trainer.pretrain(TINY_TRAIN, tiny_dataset, TINY_MODEL)
    b = trainer.pretrain(TINY_TRAIN, tiny_dataset, TINY_MODEL)
    assert a.log == b.log
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_pretrain_loss_log_matches_schedule(tiny_dataset):
    cfg = dataclasses.replace(TINY_TRAIN, epochs=4, warmup_steps=1)
    result = trainer.pretrain(cfg, tiny_dataset, TINY_MODEL)
    total = len(result.log)
    for entry in result.log:
        assert entry.lr == nm.cosine_lr(entry.step, total, cfg.base_lr, cfg.warmup_steps)
    assert result.log[1].lr == cfg.base_lr  # step == warmup_steps


def test_pretrain_curriculum_purity(tiny_dataset):
    result = trainer.pretrain(TINY_TRAIN, tiny_dataset, TINY_MODEL)
    for entry in result.log:
        if entry.phase == 1:
            assert set(entry.kinds) <= {"s2l8_city", "s2l8_reserve"}
        else:
            assert set(entry.kinds) == {"gfs2"}
    assert {e.phase for e in result.log} == {1, 2}


def test_pretrain_empty_phase_is_config_error():
    dataset = data.build_dataset(TINY_GEN, 4, kinds=(SetKind.S2L8_CITY,))
    with pytest.raises(ConfigError):
        trainer.pretrain(TINY_TRAIN, dataset, TINY_MODEL)


def test_pretrain_nan_loss_aborts_with_step():
    dataset = data.build_dataset(TINY_GEN, 6)
    for rec in dataset.records:
        for raw, _ in rec.raw_images:
            raw[:] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        trainer.pretrain(TINY_TRAIN, dataset, TINY_MODEL)
    assert exc.value.step == 0


def test_curriculum_shares_must_sum():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=4, curriculum=(Phase(("gfs2",), 1), Phase(("s2l8_city",), 1)))


def test_custom_curriculum_respected(tiny_dataset):
    cfg = dataclasses.replace(
        TINY_TRAIN, epochs=2,
        curriculum=(Phase(("gfs2",), 1), Phase(("s2l8_city", "s2l8_reserve"), 1)))
    result = trainer.pretrain(cfg, tiny_dataset, TINY_MODEL)
    assert set(result.log[0].kinds) == {"gfs2"}


def test_checkpoint_roundtrip(tmp_path, tiny_dataset):
    result = trainer.pretrain(TINY_TRAIN, tiny_dataset, TINY_MODEL, out_dir=tmp_path)
    assert (tmp_path / "final.json").exists()
    params, model_cfg, train_cfg = trainer.load_checkpoint(tmp_path / "final")
    assert model_cfg == TINY_MODEL
    assert train_cfg == TINY_TRAIN
    assert list(params) == list(result.params)
    for name in params:
        assert np.array_equal(params[name].data.astype(np.float32),
                              result.params[name].data.astype(np.float32)), name


def test_checkpoint_truncated_blob_names_array(tmp_path, tiny_dataset, tiny_params):
    trainer.save_checkpoint(tmp_path / "ck", tiny_params, TINY_MODEL, TINY_TRAIN)
    blob = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError) as exc:
        trainer.load_checkpoint(tmp_path / "ck")
    assert "truncated at array" in str(exc.value)


def test_checkpoint_trailing_bytes_rejected(tmp_path, tiny_params):
    trainer.save_checkpoint(tmp_path / "ck", tiny_params, TINY_MODEL, TINY_TRAIN)
    blob = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(blob + b"\x00\x00\x00\x00")
    with pytest.raises(CheckpointError):
        trainer.load_checkpoint(tmp_path / "ck")


def test_loss_log_csv_columns(tmp_path, tiny_dataset):
    result = trainer.pretrain(TINY_TRAIN, tiny_dataset, TINY_MODEL)
    path = tmp_path / "log.csv"
    trainer.write_loss_log(path, result.log)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,phase,lr,loss"
    assert len(lines) == len(result.log) + 1
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "1"


def test_probe_single_class_is_perfect(tiny_dataset, tiny_params):
    labeled = [(img, 0) for img, _ in data.probe_images(tiny_dataset)]
    result = trainer.linear_probe(tiny_params, TINY_MODEL, labeled)
    assert result.accuracy == 1.0
    assert result.n_eval > 0


def test_probe_zeroed_encoder_hits_majority_rate(tiny_dataset, tiny_params):
    for p in tiny_params.values():
        p.data[...] = 0.0
    labeled = data.probe_images(tiny_dataset)
    result = trainer.linear_probe(tiny_params, TINY_MODEL, labeled, seed=3)
    labels = np.array([lab for _, lab in labeled])
    locs = np.array([img.meta.location_id for img, _ in labeled])
    rng = np.random.default_rng([3, 0xB0BE])
    shuffled = rng.permutation(np.unique(locs))
    eval_locs = set(shuffled[: max(1, round(0.3 * len(np.unique(locs))))].tolist())
    eval_mask = np.array([loc in eval_locs for loc in locs])
    train_labels = labels[~eval_mask]
    majority = np.bincount(train_labels).argmax()
    expected = float((labels[eval_mask] == majority).mean())
    assert result.accuracy == pytest.approx(expected)


def test_probe_leaves_encoder_untouched(tiny_dataset, tiny_params):
    before = {k: v.data.copy() for k, v in tiny_params.items()}
    trainer.linear_probe(tiny_params, TINY_MODEL, data.probe_images(tiny_dataset))
    for name, prev in before.items():
        assert np.array_equal(prev, tiny_params[name].data)


def test_probe_deterministic(tiny_dataset, tiny_params):
    labeled = data.probe_images(tiny_dataset)
    a = trainer.linear_probe(tiny_params, TINY_MODEL, labeled, seed=1)
    b = trainer.linear_probe(tiny_params, TINY_MODEL, labeled, seed=1)
    assert a == b


def test_probe_rejects_empty_input(tiny_params):
    with pytest.raises(InvalidArgument):
        trainer.linear_probe(tiny_params, TINY_MODEL, [])
