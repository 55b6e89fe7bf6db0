"""
This module implements the training objectives: label-smoothed cross entropy for the CMLM
and autoregressive decoders, CTC, the length-prediction loss, SMART, multi-mask training,
the auxiliary text-input NAR MT task, and the composite totals built from them.

Every loss returns a scalar `Node`. Token losses are averaged over the contributing
positions of each utterance and then over the utterances of the batch, so loss weights do
not depend on batch shape. Composite totals return an `ObjectiveResult` carrying the
unweighted component values and the weights applied to them.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

import numerics as nx
from errors import ConfigError, OrthrosError, UsageError
from model import (
    EncoderOutput,
    LengthError,
    ModelConfig,
    ModelParams,
    ar_forward,
    cmlm_forward,
    ctc_logits,
    encode_speech,
    encode_text,
    predict_length,
)
from numerics import DimensionError, Node
from vocab_data import BLANK_ID, BOS_ID, EOS_ID, MASK_ID, PAD_ID, Batch

OBJECTIVES = ("ar", "mt", "cmlm", "smart", "ctc", "ctc_cmlm", "orthros_cmlm", "orthros_ctc")


class InfeasibleAlignmentError(OrthrosError):
    """Raised when an utterance has too few encoder frames for any CTC alignment of its target."""


@dataclass
class LossWeights:
    """
    Loss weights and related settings.

    Attributes:
        length (float): Weight of the length-prediction loss.
        ar (float): Weight of the auxiliary autoregressive decoder loss.
        mt (float): Weight of the auxiliary text-input NAR MT loss.
        ctc (float): CTC weight of the CTC-CMLM convex combination, in [0, 1].
        n_masks (int): Number of independently masked CMLM passes per step.
        label_smoothing (float): Label smoothing of the cross-entropy losses.
        p_thres (float): Confidence threshold used by CTC-CMLM decoding; unused in training.
    """

    length: float = 0.1
    ar: float = 0.3
    mt: float = 0.3
    ctc: float = 0.3
    n_masks: int = 2
    label_smoothing: float = 0.1
    p_thres: float = 0.9

    def __post_init__(self):
        for name in ("length", "ar", "mt", "ctc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"Loss weight '{name}' must be non-negative, got {getattr(self, name)}.")
        if self.n_masks < 1:
            raise ConfigError(f"n_masks must be >= 1, got {self.n_masks}.")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}.")
        if not 0.0 <= self.p_thres <= 1.0:
            raise ConfigError(f"p_thres must lie in [0, 1], got {self.p_thres}.")


@dataclass(frozen=True)
class MaskDraw:
    """The masked target positions of one utterance."""

    n_mask: int
    positions: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.positions)) != self.n_mask:
            raise UsageError(f"MaskDraw expects {self.n_mask} distinct positions, got {self.positions}.")


@dataclass
class ObjectiveResult:
    """A composite loss: `total` equals the weighted sum of `components`."""

    total: Node
    components: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.total.item()

    def weighted_sum(self) -> float:
        return float(sum(self.weights[name] * value for name, value in self.components.items()))


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def sample_mask_draws(rng: np.random.Generator, lengths: Sequence[int]) -> list[MaskDraw]:
    """Draws n_mask ~ U(1, N) and then n_mask distinct positions for every utterance."""
    draws = []
    for length in lengths:
        length = int(length)
        if length < 1:
            raise UsageError("Cannot mask an empty target sequence.")
        n_mask = int(rng.integers(1, length + 1))
        positions = np.sort(rng.choice(length, size=n_mask, replace=False))
        draws.append(MaskDraw(n_mask, tuple(int(p) for p in positions)))
    return draws


def draws_to_mask(draws: Sequence[MaskDraw], shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for row, draw in enumerate(draws):
        mask[row, list(draw.positions)] = True
    return mask


def apply_mask_draws(
    tokens: np.ndarray, draws: Sequence[MaskDraw], mask_id: int = MASK_ID
) -> tuple[np.ndarray, np.ndarray]:
    """Returns the decoder input with drawn positions replaced by `mask_id`, and the boolean mask."""
    mask = draws_to_mask(draws, tokens.shape)
    return np.where(mask, mask_id, tokens), mask


# ---------------------------------------------------------------------------
# Token losses
# ---------------------------------------------------------------------------


def _smoothed_token_nll(logits: Node, targets: np.ndarray, label_smoothing: float) -> Node:
    """Per-position (1 - e) * -log p(gold) + e * mean_v -log p(v), shape [B, N]."""
    log_probs = nx.log_softmax(logits)
    batch, length = targets.shape
    rows = np.arange(batch)[:, None]
    cols = np.arange(length)[None, :]
    gold = nx.gather(log_probs, (rows, cols, targets))
    nll = nx.scale(gold, -(1.0 - label_smoothing))
    if label_smoothing > 0:
        nll = nll + nx.scale(nx.mean(log_probs, axis=-1), -label_smoothing)
    return nll


def _mean_over_rows(token_losses: Node, weights_mask: np.ndarray) -> Node:
    """Averages over the flagged positions of each row, then over rows with at least one flag."""
    counts = weights_mask.sum(axis=1)
    active = counts > 0
    if not active.any():
        raise UsageError("No positions contribute to the loss.")
    weights = np.where(active[:, None], weights_mask / np.maximum(counts, 1)[:, None], 0.0) / active.sum()
    return nx.sum(nx.mul(token_losses, weights))


def masked_ce(logits: Node, targets: np.ndarray, mask: np.ndarray, label_smoothing: float = 0.0) -> Node:
    """
    Label-smoothed cross entropy at the masked positions.

    Args:
        logits (Node): CMLM logits [B, N, V].
        targets (np.ndarray): Gold tokens [B, N].
        mask (np.ndarray): Boolean [B, N]; True where the loss is taken (see `draws_to_mask`).
        label_smoothing (float): Smoothing weight e.

    Raises:
        UsageError: If no position is masked.
        DimensionError: If logits and targets disagree in shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:2] != targets.shape or np.shape(mask) != targets.shape:
        raise DimensionError(f"masked_ce: logits {logits.shape}, targets {targets.shape}, mask {np.shape(mask)}.")
    return _mean_over_rows(_smoothed_token_nll(logits, targets, label_smoothing), np.asarray(mask, dtype=bool))


def ar_io(tgt: np.ndarray, tgt_lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Builds teacher-forcing pairs: inputs [bos, y1..yN] and outputs [y1..yN, eos], pad-filled."""
    tgt = np.asarray(tgt, dtype=np.int64)
    batch, width = tgt.shape
    inputs = np.full((batch, width + 1), PAD_ID, dtype=np.int64)
    outputs = np.full((batch, width + 1), PAD_ID, dtype=np.int64)
    inputs[:, 0] = BOS_ID
    for row, length in enumerate(np.asarray(tgt_lengths)):
        inputs[row, 1 : length + 1] = tgt[row, :length]
        outputs[row, :length] = tgt[row, :length]
        outputs[row, length] = EOS_ID
    return inputs, outputs


def ar_ce(logits: Node, outputs: np.ndarray, label_smoothing: float = 0.0) -> Node:
    """
    Label-smoothed cross entropy of the autoregressive decoder over all non-pad positions.

    Args:
        logits (Node): Decoder logits [B, N + 1, V].
        outputs (np.ndarray): Gold outputs ending in eos, pad elsewhere [B, N + 1] (see `ar_io`).
    """
    outputs = np.asarray(outputs, dtype=np.int64)
    if logits.shape[:2] != outputs.shape:
        raise DimensionError(f"ar_ce: logits {logits.shape} do not match outputs {outputs.shape}.")
    return _mean_over_rows(_smoothed_token_nll(logits, outputs, label_smoothing), outputs != PAD_ID)


def length_loss(length_logits: Node, lengths: Sequence[int]) -> Node:
    """
    Cross entropy of the length classifier against the true target lengths, batch mean.

    Raises:
        LengthError: If a length exceeds the classifier's largest class.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    max_len = length_logits.shape[-1] - 1
    if (lengths > max_len).any() or (lengths < 0).any():
        raise LengthError(f"Target lengths {lengths.tolist()} exceed max_target_len {max_len}.")
    log_probs = nx.log_softmax(length_logits)
    gold = nx.gather(log_probs, (np.arange(len(lengths)), lengths))
    return nx.scale(nx.mean(gold), -1.0)


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------


def ctc_min_frames(labels: Sequence[int]) -> int:
    """Minimum number of frames any alignment of `labels` needs (one blank between each repeat)."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:], strict=False) if a == b)


def _ctc_lattice(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    extended = np.full(2 * len(labels) + 1, BLANK_ID, dtype=np.int64)
    extended[1::2] = labels
    skip = np.zeros(len(extended), dtype=bool)
    skip[2:] = (extended[2:] != BLANK_ID) & (extended[2:] != extended[:-2])
    return extended, skip


def ctc_forward_backward(log_probs: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """
    Log-space forward-backward over the blank-augmented label lattice.

    Args:
        log_probs (np.ndarray): Frame log-probabilities [U, V]; class 0 is blank.
        labels (Sequence[int]): Target labels (no blanks).

    Returns:
        tuple[float, np.ndarray]: log P(labels | frames), and the occupancy [U, V]: the
        posterior probability that frame u emits class v. The gradient of -log P with
        respect to `log_probs` is minus the occupancy.

    Raises:
        InfeasibleAlignmentError: If there are fewer frames than `ctc_min_frames(labels)`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    frames = log_probs.shape[0]
    if frames < ctc_min_frames(labels):
        raise InfeasibleAlignmentError(
            f"CTC needs at least {ctc_min_frames(labels)} frames for {len(labels)} labels, got {frames}."
        )
    extended, skip = _ctc_lattice(labels)
    states = len(extended)
    emit = log_probs[:, extended]

    alpha = np.full((frames, states), -np.inf)
    alpha[0, : min(2, states)] = emit[0, : min(2, states)]
    for u in range(1, frames):
        prev = alpha[u - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[u] = acc + emit[u]

    beta = np.full((frames, states), -np.inf)
    beta[-1, max(0, states - 2) :] = 0.0
    for u in range(frames - 2, -1, -1):
        nxt = beta[u + 1] + emit[u + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[u] = acc

    log_likelihood = float(np.logaddexp.reduce(alpha[-1, max(0, states - 2) :]))
    occupancy_states = np.exp(alpha + beta - log_likelihood)
    occupancy = np.zeros_like(log_probs)
    np.add.at(occupancy, (slice(None), extended), occupancy_states)
    return log_likelihood, occupancy


def _ctc_nll(log_probs: Node, frame_lengths: np.ndarray, labels: Sequence[Sequence[int]]) -> Node:
    """Per-utterance -log P(Y | X) [B] over the valid frames of each row."""
    values = np.zeros(log_probs.shape[0])
    occupancies = np.zeros_like(log_probs.value)
    for row, (frames, target) in enumerate(zip(frame_lengths, labels, strict=True)):
        log_likelihood, occupancy = ctc_forward_backward(log_probs.value[row, :frames], target)
        values[row] = -log_likelihood
        occupancies[row, :frames] = occupancy

    def backward(g):
        return (-g[:, None, None] * occupancies,)

    return nx.make_node(values, (log_probs,), backward)


def ctc_loss(logits: Node, labels: Sequence[int]) -> Node:
    """
    CTC loss -log P(labels | frames) of a single utterance.

    Args:
        logits (Node): Frame logits [U', V]; class 0 is blank.
        labels (Sequence[int]): Target labels.

    Raises:
        InfeasibleAlignmentError: If no alignment exists.
    """
    log_probs = nx.reshape(nx.log_softmax(logits), (1, *logits.shape))
    return nx.sum(_ctc_nll(log_probs, np.array([logits.shape[0]]), [list(labels)]))


def ctc_batch_loss(logits: Node, frame_lengths: np.ndarray, tgt: np.ndarray, tgt_lengths: np.ndarray) -> Node:
    """Mean over the batch of per-utterance CTC losses on padded logits [B, U', V]."""
    labels = [list(row[:length]) for row, length in zip(np.asarray(tgt), np.asarray(tgt_lengths), strict=True)]
    return nx.mean(_ctc_nll(nx.log_softmax(logits), np.asarray(frame_lengths), labels))


# ---------------------------------------------------------------------------
# CMLM training variants
# ---------------------------------------------------------------------------


def _require_cmlm(config: ModelConfig) -> None:
    if not config.use_cmlm_decoder:
        raise ConfigError("This objective needs the CMLM decoder (use_cmlm_decoder=true).")


def mmt_loss(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    enc: EncoderOutput,
    rng: np.random.Generator,
    n_masks: int = 1,
    label_smoothing: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> Node:
    """
    Multi-mask training: the mean of `n_masks` masked CE losses whose mask draws are
    sampled independently (in order) from `rng`. With `n_masks=1` this is the plain
    CMLM loss.
    """
    _require_cmlm(config)
    if n_masks < 1:
        raise ConfigError(f"n_masks must be >= 1, got {n_masks}.")
    total = None
    for _ in range(n_masks):
        draws = sample_mask_draws(rng, batch.tgt_lengths)
        inputs, mask = apply_mask_draws(batch.tgt, draws)
        logits = cmlm_forward(params, config, inputs, enc, dropout_rng)
        loss = masked_ce(logits, batch.tgt, mask, label_smoothing)
        total = loss if total is None else total + loss
    return nx.scale(total, 1.0 / n_masks)


def nar_mt_loss(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    rng: np.random.Generator,
    n_masks: int = 1,
    label_smoothing: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> Node:
    """
    Auxiliary text-input NAR MT loss: `mmt_loss` with the CMLM decoder cross-attending to
    the text encoding of the source transcription. `rng` must be a stream separate from
    the one used for the speech-side masks.

    Raises:
        ConfigError: If the text encoder is disabled.
    """
    text_enc = encode_text(params, config, batch.src, batch.src_lengths, dropout_rng)
    return mmt_loss(params, config, batch, text_enc, rng, n_masks, label_smoothing, dropout_rng)


def smart_predictions(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    enc: EncoderOutput,
    draws: Sequence[MaskDraw],
) -> np.ndarray:
    """First SMART pass: argmax predictions at every position of a masked gold input, without gradients."""
    inputs, _ = apply_mask_draws(batch.tgt, draws)
    with nx.no_grad():
        logits = cmlm_forward(params, config, inputs, enc.detached())
    predictions = logits.value.argmax(axis=-1)
    return np.where(batch.tgt == PAD_ID, PAD_ID, predictions)


def smart_loss(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    enc: EncoderOutput,
    rng: np.random.Generator,
    label_smoothing: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> Node:
    """
    Semi-autoregressive training. Pass one masks the gold target and predicts every
    position with gradients disabled; pass two re-masks the predicted sequence with a
    fresh draw and takes the cross entropy against the gold target at all non-pad
    positions.
    """
    _require_cmlm(config)
    predictions = smart_predictions(params, config, batch, enc, sample_mask_draws(rng, batch.tgt_lengths))
    inputs, _ = apply_mask_draws(predictions, sample_mask_draws(rng, batch.tgt_lengths))
    logits = cmlm_forward(params, config, inputs, enc, dropout_rng)
    return masked_ce(logits, batch.tgt, batch.tgt != PAD_ID, label_smoothing)


# ---------------------------------------------------------------------------
# Composite objectives
# ---------------------------------------------------------------------------


def _check_enabled(weight: float, enabled: bool, name: str, head: str) -> None:
    if weight > 0 and not enabled:
        raise ConfigError(f"Loss weight '{name}' is {weight} but the {head} is disabled.")


def _combine(terms: dict[str, tuple[float, Node]]) -> ObjectiveResult:
    total = None
    components, weights = {}, {}
    for name, (weight, loss) in terms.items():
        weighted = loss if weight == 1.0 else nx.scale(loss, weight)
        total = weighted if total is None else total + weighted
        components[name] = loss.item()
        weights[name] = weight
    return ObjectiveResult(total=total, components=components, weights=weights)


def _ar_term(params, config, batch, enc, weights, dropout_rng) -> Node:
    inputs, outputs = ar_io(batch.tgt, batch.tgt_lengths)
    return ar_ce(ar_forward(params, config, inputs, enc, dropout_rng), outputs, weights.label_smoothing)


def _length_term(params, config, batch, enc) -> Node:
    return length_loss(predict_length(params, config, enc), batch.tgt_lengths)


def _ctc_term(params, config, batch, enc) -> Node:
    return ctc_batch_loss(ctc_logits(params, config, enc), enc.lengths, batch.tgt, batch.tgt_lengths)


def _speech(params, config, batch, enc, dropout_rng) -> EncoderOutput:
    return enc if enc is not None else encode_speech(params, config, batch, dropout_rng)


def total_orthros_cmlm(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    weights: LossWeights,
    rng: np.random.Generator,
    dropout_rng: np.random.Generator | None = None,
    enc: EncoderOutput | None = None,
) -> ObjectiveResult:
    """
    L_CMLM + w_length * L_length + w_ar * L_AR + w_mt * L_MT. L_CMLM is the multi-mask
    average when `weights.n_masks > 1`. Terms with zero weight are not computed. The text
    task draws its masks from a stream split off `rng`, separate from the speech masks.

    Raises:
        ConfigError: If a nonzero weight refers to a disabled head.
    """
    _check_enabled(weights.length, config.use_length_predictor, "length", "length predictor")
    _check_enabled(weights.ar, config.uses_ar_decoder, "ar", "autoregressive decoder")
    _check_enabled(weights.mt, config.use_text_encoder, "mt", "text encoder")
    speech_rng, text_rng = rng.spawn(2)
    enc = _speech(params, config, batch, enc, dropout_rng)

    terms = {
        "cmlm": (1.0, mmt_loss(params, config, batch, enc, speech_rng, weights.n_masks, weights.label_smoothing,
                               dropout_rng)),
    }
    if weights.length > 0:
        terms["length"] = (weights.length, _length_term(params, config, batch, enc))
    if weights.ar > 0:
        terms["ar"] = (weights.ar, _ar_term(params, config, batch, enc, weights, dropout_rng))
    if weights.mt > 0:
        terms["mt"] = (weights.mt, nar_mt_loss(params, config, batch, text_rng, weights.n_masks,
                                               weights.label_smoothing, dropout_rng))
    return _combine(terms)


def total_orthros_ctc(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    weights: LossWeights,
    rng: np.random.Generator | None = None,
    dropout_rng: np.random.Generator | None = None,
    enc: EncoderOutput | None = None,
) -> ObjectiveResult:
    """L_CTC + w_ar * L_AR on the shared speech encoder."""
    if not config.use_ctc_head:
        raise ConfigError("Orthros-CTC needs the CTC head (use_ctc_head=true).")
    _check_enabled(weights.ar, config.uses_ar_decoder, "ar", "autoregressive decoder")
    enc = _speech(params, config, batch, enc, dropout_rng)
    terms = {"ctc": (1.0, _ctc_term(params, config, batch, enc))}
    if weights.ar > 0:
        terms["ar"] = (weights.ar, _ar_term(params, config, batch, enc, weights, dropout_rng))
    return _combine(terms)


def ctc_cmlm_total(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    weights: LossWeights,
    rng: np.random.Generator,
    dropout_rng: np.random.Generator | None = None,
    enc: EncoderOutput | None = None,
) -> ObjectiveResult:
    """
    (1 - w_ctc) * L_CMLM + w_ctc * L_CTC for the CTC-initialized CMLM.

    Raises:
        ConfigError: If `weights.ctc` lies outside [0, 1] or a head is disabled.
    """
    if not 0.0 <= weights.ctc <= 1.0:
        raise ConfigError(f"The CTC weight of CTC-CMLM must lie in [0, 1], got {weights.ctc}.")
    if not (config.use_ctc_head and config.use_cmlm_decoder):
        raise ConfigError("CTC-CMLM needs both the CTC head and the CMLM decoder.")
    enc = _speech(params, config, batch, enc, dropout_rng)
    terms = {}
    if weights.ctc < 1.0:
        terms["cmlm"] = (1.0 - weights.ctc, mmt_loss(params, config, batch, enc, rng, weights.n_masks,
                                                     weights.label_smoothing, dropout_rng))
    if weights.ctc > 0.0:
        terms["ctc"] = (weights.ctc, _ctc_term(params, config, batch, enc))
    return _combine(terms)


def cmlm_total(params, config, batch, weights, rng, dropout_rng=None, enc=None) -> ObjectiveResult:
    """Plain CMLM: L_CMLM + w_length * L_length."""
    _check_enabled(weights.length, config.use_length_predictor, "length", "length predictor")
    enc = _speech(params, config, batch, enc, dropout_rng)
    terms = {"cmlm": (1.0, mmt_loss(params, config, batch, enc, rng, weights.n_masks, weights.label_smoothing,
                                    dropout_rng))}
    if weights.length > 0:
        terms["length"] = (weights.length, _length_term(params, config, batch, enc))
    return _combine(terms)


def smart_total(params, config, batch, weights, rng, dropout_rng=None, enc=None) -> ObjectiveResult:
    """SMART: L_SMART + w_length * L_length."""
    _check_enabled(weights.length, config.use_length_predictor, "length", "length predictor")
    enc = _speech(params, config, batch, enc, dropout_rng)
    terms = {"smart": (1.0, smart_loss(params, config, batch, enc, rng, weights.label_smoothing, dropout_rng))}
    if weights.length > 0:
        terms["length"] = (weights.length, _length_term(params, config, batch, enc))
    return _combine(terms)


def ar_total(params, config, batch, weights, rng=None, dropout_rng=None, enc=None) -> ObjectiveResult:
    enc = _speech(params, config, batch, enc, dropout_rng)
    return _combine({"ar": (1.0, _ar_term(params, config, batch, enc, weights, dropout_rng))})


def mt_total(params, config, batch, weights, rng=None, dropout_rng=None, enc=None) -> ObjectiveResult:
    """Autoregressive text-input MT (source transcription to target); the distillation teacher."""
    if enc is None:
        enc = encode_text(params, config, batch.src, batch.src_lengths, dropout_rng)
    return _combine({"ar": (1.0, _ar_term(params, config, batch, enc, weights, dropout_rng))})


def ctc_total(params, config, batch, weights, rng=None, dropout_rng=None, enc=None) -> ObjectiveResult:
    enc = _speech(params, config, batch, enc, dropout_rng)
    return _combine({"ctc": (1.0, _ctc_term(params, config, batch, enc))})


_OBJECTIVE_FNS = {
    "ar": ar_total,
    "mt": mt_total,
    "cmlm": cmlm_total,
    "smart": smart_total,
    "ctc": ctc_total,
    "ctc_cmlm": ctc_cmlm_total,
    "orthros_cmlm": total_orthros_cmlm,
    "orthros_ctc": total_orthros_ctc,
}


def compute_objective(
    objective: str,
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    weights: LossWeights,
    rng: np.random.Generator,
    dropout_rng: np.random.Generator | None = None,
) -> ObjectiveResult:
    """
    Dispatches to the composite loss of a training objective.

    Raises:
        ConfigError: If the objective name is unknown.
    """
    if objective not in _OBJECTIVE_FNS:
        raise ConfigError(f"Unknown objective '{objective}'; expected one of {OBJECTIVES}.")
    return _OBJECTIVE_FNS[objective](params, config, batch, weights, rng, dropout_rng)
