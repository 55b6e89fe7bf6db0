"""
This module trains models: the Noam learning-rate schedule, Adam with global-norm gradient
clipping, a single training step over any objective, the epoch loop with validation and
per-epoch checkpoints, checkpoint averaging, and sequence-level knowledge distillation.

Training is a pure function of the initial parameters, the data and the seed: every random
stream (data order, masks, dropout) is spawned from one `SeedSequence`.
"""

import json
import logging
import math
import queue
import threading
from collections.abc import Iterator, Sequence
from contextlib import closing
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

import numerics as nx
from decode import ar_beam
from errors import ConfigError, OrthrosError, UsageError
from logging_utils import JsonLinesWriter
from losses import OBJECTIVES, LossWeights, ObjectiveResult, compute_objective
from model import (
    ModelConfig,
    ModelParams,
    encode_speech,
    encode_text,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from vocab_data import PAD_ID, Batch, Sample, pad_batch

AVERAGED_CHECKPOINT = "model.avg.ckpt"
TRAIN_LOG = "train_log.jsonl"
PREFETCH_POLL_SECONDS = 0.1


class TrainingDivergedError(OrthrosError):
    """Raised when a step produces a non-finite loss or gradient."""

    def __init__(self, message: str, components: dict[str, float]):
        super().__init__(message, {"components": components})
        self.components = components


class CheckpointIncompatibleError(OrthrosError):
    """Raised when checkpoints to be averaged do not share one name/shape table."""

    def __init__(self, message: str, names: Sequence[str]):
        super().__init__(message, {"names": list(names)})
        self.names = list(names)


@dataclass
class TrainConfig:
    """Optimization settings. Defaults are the desk-scale recipe."""

    epochs: int = 10
    batch_size: int = 32
    lr_constant: float = 2.0
    warmup_steps: int = 400
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float = 5.0
    seed: int = 1
    objective: str = "orthros_cmlm"
    n_avg: int = 5
    prefetch: int = 4

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got '{self.objective}'.")
        for name in ("epochs", "batch_size", "warmup_steps", "n_avg", "prefetch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1).")
        if self.clip_norm <= 0 or self.lr_constant <= 0 or self.adam_eps <= 0:
            raise ConfigError("clip_norm, lr_constant and adam_eps must be positive.")


def noam_lr(step: int, d_model: int, warmup: int, constant: float) -> float:
    """
    constant * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warm-up followed
    by inverse square-root decay, peaking at `step == warmup`.

    Raises:
        UsageError: If `step` < 1.
    """
    if step < 1:
        raise UsageError(f"noam_lr is defined for step >= 1, got {step}.")
    return constant * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class OptimizerState:
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            step=0,
            first_moment={name: np.zeros(node.shape) for name, node in params.items()},
            second_moment={name: np.zeros(node.shape) for name, node in params.items()},
        )


class AdamOptimizer:
    """Bias-corrected Adam driven by the Noam schedule, with global-norm gradient clipping."""

    def __init__(self, train_config: TrainConfig, d_model: int):
        self.config = train_config
        self.d_model = d_model

    def learning_rate(self, step: int) -> float:
        return noam_lr(step, self.d_model, self.config.warmup_steps, self.config.lr_constant)

    def apply(self, params: ModelParams, state: OptimizerState) -> tuple[float, float]:
        """
        Updates `params` in place from their accumulated gradients.

        Returns:
            tuple[float, float]: The learning rate used and the pre-clipping gradient norm.
        """
        grads = {name: node.grad if node.grad is not None else np.zeros(node.shape) for name, node in params.items()}
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        clip = min(1.0, self.config.clip_norm / norm) if norm > 0 else 1.0

        state.step += 1
        lr = self.learning_rate(state.step)
        beta1, beta2 = self.config.adam_beta1, self.config.adam_beta2
        correction1 = 1.0 - beta1**state.step
        correction2 = 1.0 - beta2**state.step
        for name, node in params.items():
            grad = grads[name] * clip
            m = state.first_moment[name] = beta1 * state.first_moment[name] + (1.0 - beta1) * grad
            v = state.second_moment[name] = beta2 * state.second_moment[name] + (1.0 - beta2) * grad * grad
            node.value = node.value - lr * (m / correction1) / (np.sqrt(v / correction2) + self.config.adam_eps)
        return lr, norm


@dataclass
class StepResult:
    step: int
    lr: float
    grad_norm: float
    loss_total: float
    components: dict[str, float]
    weights: dict[str, float]

    def to_record(self, epoch: int) -> dict:
        return {
            "step": self.step,
            "epoch": epoch,
            "lr": self.lr,
            "loss_total": self.loss_total,
            "loss_components": self.components,
            "loss_weights": self.weights,
        }


def train_step(
    params: ModelParams,
    model_config: ModelConfig,
    opt_state: OptimizerState,
    batch: Batch,
    train_config: TrainConfig,
    weights: LossWeights,
    rng: np.random.Generator,
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """
    One forward/backward pass of the configured objective followed by one Adam update.

    Raises:
        TrainingDivergedError: If the loss or the gradient norm is not finite; the
            parameters are left untouched.
    """
    params.zero_grad()
    result: ObjectiveResult = compute_objective(
        train_config.objective, params, model_config, batch, weights, rng, dropout_rng
    )
    if not np.isfinite(result.value):
        raise TrainingDivergedError(
            f"Non-finite loss {result.value} at step {opt_state.step + 1}: {result.components}", result.components
        )
    result.total.backward()
    grads_finite = all(node.grad is None or np.isfinite(node.grad).all() for node in params.values())
    if not grads_finite:
        raise TrainingDivergedError(f"Non-finite gradient at step {opt_state.step + 1}.", result.components)

    lr, grad_norm = AdamOptimizer(train_config, model_config.d_model).apply(params, opt_state)
    return StepResult(opt_state.step, lr, grad_norm, result.value, result.components, result.weights)


def iter_batches(
    samples: Sequence[Sample], batch_size: int, rng: np.random.Generator | None = None
) -> Iterator[Batch]:
    """Yields padded batches, in a permuted order when `rng` is given."""
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    for start in range(0, len(samples), batch_size):
        yield pad_batch([samples[i] for i in order[start : start + batch_size]], PAD_ID)


def _prefetch(batches: Iterator[Batch], size: int) -> Iterator[Batch]:
    """
    Pads batches on a background thread, at most `size` ahead of the consumer. Closing the
    generator stops the producer and waits for it.
    """
    buffer: queue.Queue = queue.Queue(maxsize=size)
    stop = threading.Event()
    done = object()

    def put(item) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=PREFETCH_POLL_SECONDS)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for batch in batches:
                if not put(batch):
                    return
        except Exception as e:
            put(e)
            return
        put(done)

    producer = threading.Thread(target=produce, daemon=True, name="batch-prefetch")
    producer.start()
    try:
        while (item := buffer.get()) is not done:
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()
        producer.join()


def validation_loss(
    params: ModelParams,
    model_config: ModelConfig,
    samples: Sequence[Sample],
    train_config: TrainConfig,
    weights: LossWeights,
) -> float:
    """Mean objective over the validation batches, without dropout and with a fixed mask seed."""
    if not samples:
        raise UsageError("The validation set is empty.")
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    totals = []
    with nx.no_grad():
        for batch in iter_batches(samples, train_config.batch_size):
            result = compute_objective(train_config.objective, params, model_config, batch, weights, rng)
            totals.append(result.value)
    return float(np.mean(totals))


def checkpoint_meta(model_config: ModelConfig, train_config: TrainConfig, **extra) -> dict:
    return {"model_config": model_config.to_dict(), "objective": train_config.objective, **extra}


@dataclass
class EpochRecord:
    epoch: int
    valid_loss: float
    checkpoint: str


@dataclass
class TrainSummary:
    history: list[EpochRecord]
    best_epochs: list[int]
    averaged_checkpoint: str


def select_best_epochs(history: Sequence[EpochRecord], n_avg: int) -> list[EpochRecord]:
    """The `n_avg` lowest validation losses; ties go to the earlier epoch."""
    return sorted(history, key=lambda record: (record.valid_loss, record.epoch))[:n_avg]


class Trainer:
    """
    Runs the epoch loop of one model: seeded shuffling, per-step JSON log, per-epoch
    validation and checkpoint with a JSON sidecar, and a final average of the best
    checkpoints written to `model.avg.ckpt`.
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        weights: LossWeights,
        out_dir: str | Path,
        params: ModelParams | None = None,
    ):
        self.model_config = model_config
        self.train_config = train_config
        self.weights = weights
        self.out_dir = Path(out_dir)
        init_seq, data_seq, mask_seq, dropout_seq = np.random.SeedSequence(train_config.seed).spawn(4)
        if params is None:
            params = init_params(model_config, seed=int(init_seq.generate_state(1)[0]))
        self.params = params
        self.opt_state = OptimizerState.zeros_like(self.params)
        self.data_rng = np.random.Generator(np.random.PCG64(data_seq))
        self.mask_rng = np.random.Generator(np.random.PCG64(mask_seq))
        self.dropout_rng = np.random.Generator(np.random.PCG64(dropout_seq))

    def fit(self, train_samples: Sequence[Sample], valid_samples: Sequence[Sample]) -> TrainSummary:
        if not train_samples:
            raise UsageError("The training set is empty.")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logging.info(
            f"Training '{self.train_config.objective}' with {self.params.num_parameters()} parameters "
            f"on {len(train_samples)} samples for {self.train_config.epochs} epochs."
        )
        history = []
        with JsonLinesWriter(self.out_dir / TRAIN_LOG) as log:
            for epoch in range(1, self.train_config.epochs + 1):
                batches = iter_batches(train_samples, self.train_config.batch_size, self.data_rng)
                with closing(_prefetch(batches, self.train_config.prefetch)) as prefetched:
                    for batch in prefetched:
                        step = train_step(
                            self.params, self.model_config, self.opt_state, batch, self.train_config, self.weights,
                            self.mask_rng, self.dropout_rng,
                        )
                        log.write(step.to_record(epoch))
                history.append(self._end_epoch(epoch, valid_samples or train_samples))

        best = select_best_epochs(history, self.train_config.n_avg)
        averaged, _ = average_checkpoints([record.checkpoint for record in best])
        averaged_path = self.out_dir / AVERAGED_CHECKPOINT
        save_checkpoint(
            averaged,
            averaged_path,
            checkpoint_meta(self.model_config, self.train_config, averaged_epochs=[r.epoch for r in best]),
        )
        logging.info(f"Averaged epochs {[r.epoch for r in best]} into {averaged_path}.")
        return TrainSummary(history, [r.epoch for r in best], str(averaged_path))

    def _end_epoch(self, epoch: int, valid_samples: Sequence[Sample]) -> EpochRecord:
        valid_loss = validation_loss(self.params, self.model_config, valid_samples, self.train_config, self.weights)
        path = self.out_dir / f"epoch{epoch:03d}.ckpt"
        save_checkpoint(self.params, path, checkpoint_meta(self.model_config, self.train_config, epoch=epoch))
        sidecar = {"epoch": epoch, "valid_loss": valid_loss, "objective": self.train_config.objective,
                   "train_config": asdict(self.train_config)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
        logging.info(f"Epoch {epoch}: validation loss {valid_loss:.4f}, checkpoint {path}.")
        return EpochRecord(epoch, valid_loss, str(path))


def average_checkpoints(paths: Sequence[str | Path]) -> tuple[ModelParams, dict]:
    """
    Element-wise mean of the parameters of several checkpoints.

    Returns:
        tuple[ModelParams, dict]: The averaged parameters and the metadata of the first checkpoint.

    Raises:
        UsageError: If `paths` is empty.
        CheckpointIncompatibleError: If the name/shape tables differ; lists the offending names.
    """
    if not paths:
        raise UsageError("No checkpoints to average.")
    first, meta = load_checkpoint(paths[0])
    reference = first.shapes()
    sums = first.arrays()
    for path in paths[1:]:
        params, _ = load_checkpoint(path)
        shapes = params.shapes()
        offending = sorted(
            set(reference) ^ set(shapes) | {n for n in set(reference) & set(shapes) if reference[n] != shapes[n]}
        )
        if offending:
            raise CheckpointIncompatibleError(f"{path} does not match {paths[0]}: {offending}", offending)
        for name, node in params.items():
            sums[name] += node.value
    return ModelParams.from_arrays({name: total / len(paths) for name, total in sums.items()}), meta


def seqkd_distill(
    params: ModelParams,
    config: ModelConfig,
    meta: dict,
    samples: Sequence[Sample],
    beam: int = 5,
) -> list[Sample]:
    """
    Sequence-level knowledge distillation: replaces every target with the autoregressive
    teacher's beam-search output. A teacher trained with the `mt` objective reads the
    source transcription; any other teacher reads the frames. Frames and transcriptions
    are copied unchanged; samples whose teacher output is empty keep their original target.
    """
    text_input = meta.get("objective") == "mt"
    distilled, kept = [], 0
    for sample in samples:
        batch = pad_batch([sample], PAD_ID)
        with nx.no_grad():
            if text_input:
                enc = encode_text(params, config, batch.src, batch.src_lengths)
            else:
                enc = encode_speech(params, config, batch)
        hyp = ar_beam(params, config, enc, beam, config.max_target_len)
        if hyp.tokens:
            distilled.append(replace(sample, tgt=list(hyp.tokens)))
        else:
            kept += 1
            distilled.append(sample)
    if kept:
        logging.warning(f"Teacher produced empty outputs for {kept} sample(s); their original targets were kept.")
    source = "text" if text_input else "speech"
    logging.info(f"Distilled {len(samples)} samples with a beam of {beam} ({source} teacher).")
    return distilled
