import os

import numpy as np
import pytest

import config
import training.trainer as trainer_module
from errors import ConfigError, NumericalError, TrainingHalted
from training.trainer import Trainer, load_model, resolve_length_bias, train
from utils.file_utils import read_checkpoint, read_metrics


def _params(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def test_short_run_writes_artifacts(tmp_path, tiny_run_cfg, tiny_corpus):
    result = train(tiny_run_cfg, tiny_corpus, str(tmp_path))
    assert result.epochs_run == 3
    assert [row.r for row in result.rows] == [2, 2, 1]
    assert [row.epoch for row in result.rows] == [0, 1, 2]
    for name in (config.FINAL_CHECKPOINT_NAME, config.LAST_CHECKPOINT_NAME, config.BEST_CHECKPOINT_NAME,
                 config.METRICS_FILE):
        assert os.path.isfile(tmp_path / name)
    assert read_metrics(str(tmp_path / config.METRICS_FILE)) == result.rows
    ckpt = read_checkpoint(result.final_checkpoint)
    assert ckpt.epoch == 3 and (ckpt.initial_r, ckpt.step_every, ckpt.floor_r) == (2, 2, 1)
    for row in result.rows:
        assert np.isfinite(row.total)
        assert 0.0 <= row.diagonality <= 1.0 and 0.0 <= row.monotonicity <= 1.0


def test_final_checkpoint_synthesizes(tmp_path, tiny_run_cfg, tiny_corpus):
    result = train(tiny_run_cfg.replace(epochs=1), tiny_corpus, str(tmp_path))
    model, run_cfg = load_model(result.final_checkpoint)
    assert not model.training
    assert run_cfg.length_bias_frames >= 0
    out = model.synthesize(tiny_corpus[0].char_ids, length_bias_frames=run_cfg.length_bias_frames)
    assert out.spectrogram.shape[1] == tiny_run_cfg.n_bins


def test_training_reduces_loss(tmp_path, tiny_run_cfg, tiny_corpus):
    cfg = tiny_run_cfg.replace(epochs=8, rf_initial=1, rf_floor=1, learning_rate=3e-3)
    rows = train(cfg, tiny_corpus, str(tmp_path)).rows
    assert rows[-1].total < rows[0].total


def test_resume_reproduces_uninterrupted_run(tmp_path, tiny_run_cfg, tiny_corpus):
    cfg = tiny_run_cfg.replace(epochs=4)
    straight = Trainer(cfg, tiny_corpus, str(tmp_path / "a"))
    straight_result = straight.run()

    first = Trainer(cfg, tiny_corpus, str(tmp_path / "b"))
    first.run(epochs=2)
    resumed = Trainer(cfg, tiny_corpus, str(tmp_path / "b"))
    resumed.resume(str(tmp_path / "b" / config.LAST_CHECKPOINT_NAME))
    assert resumed.start_epoch == 2 and len(resumed.rows) == 2
    resumed_result = resumed.run()

    assert resumed_result.rows == straight_result.rows
    a, b = _params(straight.model), _params(resumed.model)
    assert all(np.array_equal(a[name], b[name]) for name in a)


def test_resume_rejects_different_model(tmp_path, tiny_run_cfg, tiny_corpus):
    Trainer(tiny_run_cfg, tiny_corpus, str(tmp_path)).run(epochs=1)
    other = Trainer(tiny_run_cfg.replace(d_ffn=8), tiny_corpus, str(tmp_path / "other"))
    with pytest.raises(ConfigError):
        other.resume(str(tmp_path / config.LAST_CHECKPOINT_NAME))


def test_numerical_failure_halts_with_last_good_checkpoint(tmp_path, tiny_run_cfg, tiny_corpus, monkeypatch):
    real_step = trainer_module.adam_step
    calls = []

    def failing_step(params, grads, state):
        calls.append(1)
        # 每轮3个小批量，第二轮开始失败
        if len(calls) > 3:
            raise NumericalError("参数 x 的梯度包含 NaN/Inf")
        return real_step(params, grads, state)

    monkeypatch.setattr(trainer_module, 'adam_step', failing_step)
    with pytest.raises(TrainingHalted) as info:
        train(tiny_run_cfg, tiny_corpus, str(tmp_path))
    assert info.value.epoch == 1
    assert info.value.last_good_checkpoint == str(tmp_path / config.LAST_CHECKPOINT_NAME)
    assert read_checkpoint(info.value.last_good_checkpoint).epoch == 1
    assert len(read_metrics(str(tmp_path / config.METRICS_FILE))) == 1


def test_divergent_learning_rate_halts(tmp_path, tiny_run_cfg, tiny_corpus):
    with pytest.raises(TrainingHalted) as info:
        train(tiny_run_cfg.replace(learning_rate=1e3, epochs=5), tiny_corpus, str(tmp_path))
    assert os.path.isfile(info.value.last_good_checkpoint)


def test_trainer_input_validation(tmp_path, tiny_run_cfg, tiny_corpus):
    with pytest.raises(ConfigError):
        Trainer(tiny_run_cfg, [], str(tmp_path))
    with pytest.raises(ConfigError):
        Trainer(tiny_run_cfg.replace(n_bins=16), tiny_corpus, str(tmp_path))


def test_length_bias_defaults_to_ten_percent_of_mean(tiny_run_cfg, tiny_corpus):
    resolved = resolve_length_bias(tiny_run_cfg, tiny_corpus)
    mean = np.mean([u.n_frames for u in tiny_corpus])
    assert resolved.length_bias_frames == int(round(0.1 * mean))
    assert resolve_length_bias(tiny_run_cfg.replace(length_bias_frames=4), tiny_corpus).length_bias_frames == 4
