"""
This module contains unit tests for `train`: the learning-rate schedule, the Adam update
with gradient clipping, single steps and their determinism, the epoch loop, checkpoint
averaging and sequence-level distillation.
"""

import dataclasses
import json
import math
import threading
from contextlib import closing

import numpy as np
import pytest

import train
from conftest import TINY, random_params
from decode import Hypothesis
from errors import ConfigError, UsageError
from logging_utils import read_json_lines
from losses import LossWeights, ObjectiveResult, compute_objective
from model import ModelParams, load_checkpoint, load_model, save_checkpoint
from numerics import Node, parameter
from train import (
    AVERAGED_CHECKPOINT,
    TRAIN_LOG,
    AdamOptimizer,
    CheckpointIncompatibleError,
    EpochRecord,
    OptimizerState,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
    _prefetch,
    average_checkpoints,
    iter_batches,
    noam_lr,
    select_best_epochs,
    seqkd_distill,
    train_step,
    validation_loss,
)
from vocab_data import PAD_ID, gen_corpus, pad_batch


@pytest.fixture
def samples():
    return gen_corpus(seed=4, n_samples=8, len_range=(2, 5))


class TestNoam:
    def test_peak_at_warmup(self):
        lrs = [noam_lr(step, 256, 100, 5.0) for step in (99, 100, 101)]
        assert lrs[1] > lrs[0]
        assert lrs[1] > lrs[2]
        assert lrs[1] == pytest.approx(5.0 * 256**-0.5 * 100**-0.5)

    def test_linear_warmup(self):
        assert noam_lr(4, 64, 1000, 1.0) == pytest.approx(2 * noam_lr(2, 64, 1000, 1.0))

    def test_inverse_sqrt_decay(self):
        assert noam_lr(400, 64, 100, 1.0) == pytest.approx(noam_lr(100, 64, 100, 1.0) / 2)

    def test_step_zero(self):
        with pytest.raises(UsageError):
            noam_lr(0, 64, 100, 1.0)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs", [{"objective": "gan"}, {"epochs": 0}, {"adam_beta2": 1.0}, {"clip_norm": 0.0}, {"n_avg": 0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestAdam:
    def _single(self, value, grad):
        node = parameter(value)
        node.grad = np.array(grad, dtype=np.float64)
        return ModelParams({"x": node})

    def test_first_step_moves_by_the_learning_rate(self):
        params = self._single([1.0], [0.5])
        state = OptimizerState.zeros_like(params)
        optimizer = AdamOptimizer(TrainConfig(warmup_steps=10), d_model=16)
        lr, norm = optimizer.apply(params, state)
        assert state.step == 1
        assert norm == pytest.approx(0.5)
        assert lr == pytest.approx(noam_lr(1, 16, 10, 2.0))
        # Bias-corrected m / sqrt(v) is the gradient sign on the first step.
        assert params["x"].value[0] == pytest.approx(1.0 - lr * 0.5 / (0.5 + 1e-9))

    def test_clipping_scales_the_gradient(self):
        params = self._single([0.0, 0.0], [6.0, 8.0])
        state = OptimizerState.zeros_like(params)
        _, norm = AdamOptimizer(TrainConfig(clip_norm=5.0), d_model=16).apply(params, state)
        assert norm == pytest.approx(10.0)
        np.testing.assert_allclose(state.first_moment["x"], 0.1 * np.array([3.0, 4.0]))

    def test_missing_gradient_counts_as_zero(self):
        params = self._single([2.0], [0.0])
        params["x"].grad = None
        state = OptimizerState.zeros_like(params)
        _, norm = AdamOptimizer(TrainConfig(), d_model=16).apply(params, state)
        assert norm == 0.0
        np.testing.assert_array_equal(params["x"].value, [2.0])


class TestTrainStep:
    def _run(self, samples, steps, seed=3):
        params = random_params(TINY, seed=1)
        state = OptimizerState.zeros_like(params)
        config = TrainConfig(warmup_steps=10, objective="orthros_cmlm")
        rng = np.random.default_rng(seed)
        batch = pad_batch(samples[:4], PAD_ID)
        results = [train_step(params, TINY, state, batch, config, LossWeights(), rng) for _ in range(steps)]
        return params, results

    def test_step_result(self, samples):
        _, (result,) = self._run(samples, 1)
        assert result.step == 1
        assert math.isfinite(result.loss_total)
        assert set(result.components) == {"cmlm", "length", "ar", "mt"}
        record = result.to_record(epoch=2)
        assert record["epoch"] == 2
        assert record["loss_weights"]["ar"] == 0.3

    def test_deterministic(self, samples):
        first, _ = self._run(samples, 2)
        second, _ = self._run(samples, 2)
        for name in first:
            np.testing.assert_array_equal(first[name].value, second[name].value)

    def test_mask_seed_matters(self, samples):
        first, _ = self._run(samples, 1, seed=3)
        second, _ = self._run(samples, 1, seed=4)
        assert any(not np.array_equal(first[n].value, second[n].value) for n in first)

    def test_loss_decreases_on_a_fixed_batch(self, samples):
        params = random_params(TINY, seed=2, std=0.1)
        state = OptimizerState.zeros_like(params)
        config = TrainConfig(warmup_steps=10, lr_constant=1.0, objective="ar")
        batch = pad_batch(samples[:4], PAD_ID)
        weights = LossWeights(label_smoothing=0.0)
        before = compute_objective("ar", params, TINY, batch, weights, None).value
        for _ in range(20):
            train_step(params, TINY, state, batch, config, weights, None)
        assert compute_objective("ar", params, TINY, batch, weights, None).value < before

    def test_non_finite_loss_leaves_params(self, mocker, samples):
        params = random_params(TINY)
        before = params.arrays()
        bad = ObjectiveResult(total=Node(np.array(np.nan)), components={"cmlm": float("nan")}, weights={"cmlm": 1.0})
        mocker.patch("train.compute_objective", return_value=bad)
        state = OptimizerState.zeros_like(params)
        with pytest.raises(TrainingDivergedError) as excinfo:
            train_step(params, TINY, state, pad_batch(samples[:2], PAD_ID), TrainConfig(), LossWeights(),
                       np.random.default_rng(0))
        assert "cmlm" in excinfo.value.components
        assert state.step == 0
        for name, value in before.items():
            np.testing.assert_array_equal(params[name].value, value)


class TestBatches:
    def test_every_sample_once(self, samples):
        ids = [i for batch in iter_batches(samples, 3, np.random.default_rng(0)) for i in batch.ids]
        assert sorted(ids) == [s.id for s in samples]
        assert ids != [s.id for s in samples]

    def test_unshuffled_order(self, samples):
        batches = list(iter_batches(samples, 3))
        assert [len(b) for b in batches] == [3, 3, 2]
        assert [i for b in batches for i in b.ids] == [s.id for s in samples]

    def test_prefetch_preserves_order(self, samples):
        direct = [b.ids for b in iter_batches(samples, 2)]
        assert [b.ids for b in _prefetch(iter_batches(samples, 2), 1)] == direct

    def test_prefetch_reraises(self):
        def broken():
            yield pad_batch(gen_corpus(seed=0, n_samples=1), PAD_ID)
            raise ValueError("bad batch")

        with pytest.raises(ValueError, match="bad batch"):
            list(_prefetch(broken(), 2))

    def test_closing_early_stops_the_producer(self, samples):
        prefetched = _prefetch(iter_batches(samples, 1), 1)
        first = next(prefetched)
        prefetched.close()
        assert first.ids == [samples[0].id]
        assert not any(t.name == "batch-prefetch" for t in threading.enumerate())

    def test_consumer_failure_stops_the_producer(self, samples):
        with pytest.raises(RuntimeError), closing(_prefetch(iter_batches(samples, 1), 1)) as prefetched:
            for _ in prefetched:
                raise RuntimeError("step failed")
        assert not any(t.name == "batch-prefetch" for t in threading.enumerate())


class TestValidation:
    def test_deterministic(self, samples):
        params = random_params(TINY)
        config = TrainConfig(batch_size=3)
        first = validation_loss(params, TINY, samples, config, LossWeights())
        assert first == validation_loss(params, TINY, samples, config, LossWeights())
        assert first > 0

    def test_empty(self):
        with pytest.raises(UsageError):
            validation_loss(random_params(TINY), TINY, [], TrainConfig(), LossWeights())


class TestCheckpointAveraging:
    def test_select_best_epochs_ties_to_earlier(self):
        history = [EpochRecord(epoch, loss, f"e{epoch}") for epoch, loss in [(1, 2.0), (2, 1.0), (3, 1.0), (4, 3.0)]]
        assert [r.epoch for r in select_best_epochs(history, 2)] == [2, 3]
        assert [r.epoch for r in select_best_epochs(history, 10)] == [2, 3, 1, 4]

    def test_mean_of_parameters(self, tmp_path):
        first, second = random_params(TINY, seed=1), random_params(TINY, seed=2)
        save_checkpoint(first, tmp_path / "a.ckpt", {"epoch": 1})
        save_checkpoint(second, tmp_path / "b.ckpt", {"epoch": 2})
        averaged, meta = average_checkpoints([tmp_path / "a.ckpt", tmp_path / "b.ckpt"])
        assert meta == {"epoch": 1}
        for name in first:
            np.testing.assert_allclose(averaged[name].value, (first[name].value + second[name].value) / 2)

    def test_single_checkpoint_is_unchanged(self, tmp_path):
        params = random_params(TINY)
        save_checkpoint(params, tmp_path / "a.ckpt")
        averaged, _ = average_checkpoints([tmp_path / "a.ckpt"])
        for name in params:
            np.testing.assert_array_equal(averaged[name].value, params[name].value)

    def test_incompatible(self, tmp_path):
        save_checkpoint(random_params(TINY), tmp_path / "a.ckpt")
        save_checkpoint(random_params(dataclasses.replace(TINY, use_ctc_head=False)), tmp_path / "b.ckpt")
        with pytest.raises(CheckpointIncompatibleError) as excinfo:
            average_checkpoints([tmp_path / "a.ckpt", tmp_path / "b.ckpt"])
        assert any(name.startswith("ctc") for name in excinfo.value.names)

    def test_empty(self):
        with pytest.raises(UsageError):
            average_checkpoints([])


class TestTrainer:
    def _fit(self, out_dir, samples):
        train_config = TrainConfig(epochs=2, batch_size=4, warmup_steps=5, n_avg=2, seed=5)
        trainer = Trainer(TINY, train_config, LossWeights(), out_dir)
        return trainer.fit(samples[:6], samples[6:])

    def test_outputs(self, tmp_path, samples):
        summary = self._fit(tmp_path, samples)
        assert [r.epoch for r in summary.history] == [1, 2]
        assert sorted(summary.best_epochs) == [1, 2]
        assert summary.averaged_checkpoint == str(tmp_path / AVERAGED_CHECKPOINT)

        records = list(read_json_lines(tmp_path / TRAIN_LOG))
        assert [r["step"] for r in records] == [1, 2, 3, 4]
        assert [r["epoch"] for r in records] == [1, 1, 2, 2]
        assert set(records[0]) == {"step", "epoch", "lr", "loss_total", "loss_components", "loss_weights"}

        sidecar = json.loads((tmp_path / "epoch002.json").read_text(encoding="utf-8"))
        assert sidecar["epoch"] == 2
        assert sidecar["valid_loss"] == pytest.approx(summary.history[1].valid_loss)

        averaged, config, meta = load_model(tmp_path / AVERAGED_CHECKPOINT)
        assert config == TINY
        assert sorted(meta["averaged_epochs"]) == [1, 2]
        epoch1, _ = load_checkpoint(tmp_path / "epoch001.ckpt")
        epoch2, _ = load_checkpoint(tmp_path / "epoch002.ckpt")
        for name in averaged:
            np.testing.assert_allclose(averaged[name].value, (epoch1[name].value + epoch2[name].value) / 2)

    def test_same_seed_same_model(self, tmp_path, samples):
        first = self._fit(tmp_path / "a", samples)
        second = self._fit(tmp_path / "b", samples)
        a, _ = load_checkpoint(first.averaged_checkpoint)
        b, _ = load_checkpoint(second.averaged_checkpoint)
        for name in a:
            np.testing.assert_array_equal(a[name].value, b[name].value)

    def test_empty_training_set(self, tmp_path):
        with pytest.raises(UsageError):
            Trainer(TINY, TrainConfig(), LossWeights(), tmp_path).fit([], [])


class TestSeqKD:
    def test_targets_replaced(self, mocker, samples):
        outputs = iter([Hypothesis(tokens=[9, 9, 10]), Hypothesis(tokens=[])])
        mocker.patch("train.ar_beam", side_effect=lambda *args: next(outputs))
        distilled = seqkd_distill(random_params(TINY), TINY, {"objective": "ar"}, samples[:2], beam=3)
        assert distilled[0].tgt == [9, 9, 10]
        assert distilled[1].tgt == samples[1].tgt
        for before, after in zip(samples[:2], distilled, strict=True):
            assert after.id == before.id
            assert after.src == before.src
            np.testing.assert_array_equal(after.frames, before.frames)

    def test_text_teacher_reads_transcriptions(self, mocker, samples):
        mocker.patch("train.ar_beam", return_value=Hypothesis(tokens=[7]))
        text = mocker.spy(train, "encode_text")
        speech = mocker.spy(train, "encode_speech")
        seqkd_distill(random_params(TINY), TINY, {"objective": "mt"}, samples[:3])
        assert text.call_count == 3
        assert speech.call_count == 0

    def test_real_beam_search(self, samples):
        distilled = seqkd_distill(random_params(TINY), TINY, {"objective": "orthros_cmlm"}, samples[:2], beam=2)
        assert len(distilled) == 2
        assert all(len(s.tgt) <= TINY.max_target_len for s in distilled)
