"""
This module implements inference: Mask-Predict with length parallel decoding, restricted
Mask-Predict initialized from CTC, CTC greedy and prefix beam search, de-duplication,
autoregressive beam search, and parallel rescoring of NAR candidates with the shallow
autoregressive decoder.

Every decode path is deterministic. Ties are broken by the lowest position index, then by
the shorter hypothesis, then by the lowest hypothesis index.
"""

import itertools
import logging
import multiprocessing
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

import numerics as nx
from errors import ConfigError, OrthrosError, UsageError
from logging_utils import setup_logging
from losses import ar_io
from model import (
    EncoderOutput,
    LengthError,
    ModelConfig,
    ModelParams,
    ar_forward,
    ar_init_state,
    ar_step,
    cmlm_forward,
    ctc_logits,
    encode_speech,
    predict_length,
    top_lengths,
)
from vocab_data import BLANK_ID, BOS_ID, EOS_ID, MASK_ID, PAD_ID, SPECIAL_TOKENS, Sample, pad_batch

ALGORITHMS = ("ar_beam", "ctc_greedy", "ctc_beam", "mask_predict", "ctc_cmlm")

# Output ids a CMLM prediction may never take.
_NON_CONTENT_IDS = np.arange(len(SPECIAL_TOKENS))


class EmptyHypothesisError(OrthrosError):
    """Raised when a decoder has no non-empty candidate to refine."""


@dataclass
class DecodeConfig:
    """
    Inference settings.

    Attributes:
        algorithm (str): One of ALGORITHMS.
        iterations (int): Mask-Predict iterations T.
        length_beam (int): Number of candidate lengths l (Mask-Predict) or CTC beam width.
        beam_size (int): Autoregressive beam width.
        p_thres (float): CTC confidence below which CTC-CMLM masks a token.
        dedup (bool): Collapse adjacent repeated tokens of CMLM outputs.
        update_all (bool): Re-predict every position at each iteration (SMART-style inference).
        rescore (bool): Select among candidates with the autoregressive decoder.
        max_len (int): Length limit of autoregressive beam search; 0 uses the model's max_target_len.
    """

    algorithm: str = "mask_predict"
    iterations: int = 10
    length_beam: int = 5
    beam_size: int = 4
    p_thres: float = 0.9
    dedup: bool = True
    update_all: bool = False
    rescore: bool = False
    max_len: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got '{self.algorithm}'.")
        for name in ("iterations", "length_beam", "beam_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if not 0.0 <= self.p_thres <= 1.0:
            raise ConfigError(f"p_thres must lie in [0, 1], got {self.p_thres}.")
        if self.max_len < 0:
            raise ConfigError(f"max_len must be >= 0, got {self.max_len}.")


@dataclass
class MaskState:
    """Snapshot of one candidate after a Mask-Predict iteration; scores are log-probabilities, -inf where masked."""

    tokens: np.ndarray
    scores: np.ndarray
    masked: np.ndarray
    iteration: int


@dataclass
class Hypothesis:
    tokens: list[int]
    nar_score: float | None = None
    ar_score: float | None = None
    source_length: int = 0
    finished: bool = True

    def to_dict(self) -> dict:
        return {
            "tokens": [int(t) for t in self.tokens],
            "nar_score": self.nar_score,
            "ar_score": self.ar_score,
            "source_length": self.source_length,
            "finished": self.finished,
        }


@dataclass
class DecodeResult:
    best: Hypothesis
    candidates: list[Hypothesis] = field(default_factory=list)
    algorithm: str = ""


def mask_schedule(n_tokens: int, iterations: int, t: int) -> int:
    """
    Number of positions re-masked after iteration `t`: floor(N * (T - t) / T).

    Raises:
        UsageError: If `t` lies outside [1, T].
    """
    if not 1 <= t <= iterations:
        raise UsageError(f"Iteration t={t} outside [1, {iterations}].")
    return n_tokens * (iterations - t) // iterations


def dedup(tokens: Sequence[int]) -> list[int]:
    """Collapses runs of equal adjacent tokens to a single token."""
    return [int(token) for token, _ in itertools.groupby(tokens)]


def _lowest_scores(scores: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(scores, kind="stable")[:k]


def _predict(params: ModelParams, config: ModelConfig, tokens: np.ndarray, enc: EncoderOutput):
    """Argmax content-token predictions and their log-probabilities at every position."""
    with nx.no_grad():
        log_probs = nx.log_softmax(cmlm_forward(params, config, tokens, enc)).value
    log_probs[..., _NON_CONTENT_IDS] = -np.inf
    predictions = log_probs.argmax(axis=-1)
    return predictions, np.take_along_axis(log_probs, predictions[..., None], axis=-1)[..., 0]


def _refine(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    tokens: np.ndarray,
    scores: np.ndarray,
    masked: np.ndarray,
    lengths: np.ndarray,
    decode_config: DecodeConfig,
    mask_cap: np.ndarray | None = None,
    trace: list | None = None,
) -> None:
    """
    Runs T predict/mask iterations in place on a batch of candidates. Row r has
    `lengths[r]` valid positions; with `mask_cap` the re-masking count is clipped per row.
    """
    iterations = decode_config.iterations
    valid = np.arange(tokens.shape[1])[None, :] < lengths[:, None]
    for t in range(1, iterations + 1):
        predictions, pred_scores = _predict(params, config, tokens, enc)
        update = valid if decode_config.update_all else masked
        tokens[update] = predictions[update]
        scores[update] = pred_scores[update]
        masked[:] = False
        if t < iterations:
            for row, length in enumerate(lengths):
                k = mask_schedule(int(length), iterations, t)
                if mask_cap is not None:
                    k = min(k, int(mask_cap[row]))
                masked[row, _lowest_scores(scores[row, :length], k)] = True
            tokens[masked] = MASK_ID
            scores[masked] = -np.inf
        if trace is not None:
            trace.append([
                MaskState(tokens[row, :n].copy(), scores[row, :n].copy(), masked[row, :n].copy(), t)
                for row, n in enumerate(lengths)
            ])


def _finish(tokens: np.ndarray, scores: np.ndarray, lengths: np.ndarray, use_dedup: bool) -> list[Hypothesis]:
    hyps = []
    for row, length in enumerate(lengths):
        out = [int(t) for t in tokens[row, :length]]
        hyps.append(Hypothesis(
            tokens=dedup(out) if use_dedup else out,
            nar_score=float(scores[row, :length].mean()),
            source_length=int(length),
        ))
    return hyps


def mask_predict(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    decode_config: DecodeConfig,
    trace: list | None = None,
) -> list[Hypothesis]:
    """
    Mask-Predict with length parallel decoding for one utterance.

    The top-l predicted lengths (zero skipped) are decoded together as one batch: each
    starts fully masked; every iteration predicts the masked positions (or all positions
    when `update_all`) and, before the last iteration, re-masks the k(t) lowest-scoring
    positions. Unmasked positions keep their last assigned score.

    Args:
        enc (EncoderOutput): Encoder output of a single utterance.
        trace (list | None): If given, receives one list of MaskState per iteration.

    Returns:
        list[Hypothesis]: One hypothesis per decoded length, in length-probability order,
        with nar_score = mean log-probability over its positions.

    Raises:
        EmptyHypothesisError: If every candidate length is zero.
    """
    with nx.no_grad():
        length_logits = predict_length(params, config, enc).value[0]
    lengths = np.array([n for n in top_lengths(length_logits, decode_config.length_beam) if n > 0], dtype=np.int64)
    if len(lengths) == 0:
        raise EmptyHypothesisError("All candidate lengths predicted for the utterance are zero.")

    width = int(lengths.max())
    valid = np.arange(width)[None, :] < lengths[:, None]
    tokens = np.where(valid, MASK_ID, PAD_ID).astype(np.int64)
    scores = np.full(tokens.shape, -np.inf)
    masked = valid.copy()
    replicated = enc.select(np.zeros(len(lengths), dtype=np.int64))
    _refine(params, config, replicated, tokens, scores, masked, lengths, decode_config, trace=trace)
    return _finish(tokens, scores, lengths, decode_config.dedup)


def _ctc_frame_log_probs(params: ModelParams, config: ModelConfig, enc: EncoderOutput) -> np.ndarray:
    with nx.no_grad():
        log_probs = nx.log_softmax(ctc_logits(params, config, enc)).value[0]
    return log_probs[: int(enc.lengths[0])]


def ctc_collapse(frame_tokens: Sequence[int], frame_probs: Sequence[float] | None = None):
    """
    Collapses a frame labelling: merges adjacent repeats, then drops blanks.

    Returns:
        The collapsed tokens; with `frame_probs`, also the confidence of each token, the
        maximum frame probability among the frames merged into it.
    """
    tokens, confidence = [], []
    previous = None
    for u, label in enumerate(frame_tokens):
        label = int(label)
        if label != previous and label != BLANK_ID:
            tokens.append(label)
            confidence.append(-np.inf)
        if label != BLANK_ID and frame_probs is not None:
            confidence[-1] = max(confidence[-1], float(frame_probs[u]))
        previous = label
    return tokens if frame_probs is None else (tokens, confidence)


def ctc_greedy(logits) -> list[int]:
    """Per-frame argmax over [U', V] logits, collapsed. May return an empty sequence."""
    values = logits.value if isinstance(logits, nx.Node) else np.asarray(logits)
    return ctc_collapse(values.argmax(axis=-1))


def _greedy_hypothesis(log_probs: np.ndarray) -> Hypothesis:
    path = log_probs.argmax(axis=-1)
    tokens = ctc_collapse(path)
    path_score = float(log_probs[np.arange(len(path)), path].sum())
    return Hypothesis(tokens=tokens, nar_score=path_score / max(len(tokens), 1), source_length=len(tokens))


def ctc_prefix_beam(logits, beam: int) -> list[Hypothesis]:
    """
    Left-to-right CTC prefix beam search in log space.

    Each prefix carries the probability of ending in blank and in its last label; a
    repeated label only extends the prefix after a blank. After every frame the `beam`
    most probable prefixes survive.

    Returns:
        list[Hypothesis]: Up to `beam` distinct label sequences, most probable first, with
        nar_score = total log-probability / prefix length.
    """
    if beam < 1:
        raise UsageError(f"beam must be >= 1, got {beam}.")
    values = logits.value if isinstance(logits, nx.Node) else np.asarray(logits, dtype=np.float64)
    log_probs = values - np.logaddexp.reduce(values, axis=-1, keepdims=True)
    labels = [c for c in range(log_probs.shape[-1]) if c != BLANK_ID]

    beams: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, -np.inf)}
    for frame in log_probs:
        extended: dict[tuple[int, ...], list[float]] = defaultdict(lambda: [-np.inf, -np.inf])
        for prefix, (p_blank, p_label) in beams.items():
            p_total = np.logaddexp(p_blank, p_label)
            stay = extended[prefix]
            stay[0] = np.logaddexp(stay[0], p_total + frame[BLANK_ID])
            for c in labels:
                grown = extended[prefix + (c,)]
                if prefix and prefix[-1] == c:
                    grown[1] = np.logaddexp(grown[1], p_blank + frame[c])
                    stay[1] = np.logaddexp(stay[1], p_label + frame[c])
                else:
                    grown[1] = np.logaddexp(grown[1], p_total + frame[c])
        ranked = sorted(extended.items(), key=lambda item: (-np.logaddexp(*item[1]), len(item[0]), item[0]))
        beams = {prefix: (p[0], p[1]) for prefix, p in ranked[:beam]}

    hyps = []
    for prefix, (p_blank, p_label) in beams.items():
        total = float(np.logaddexp(p_blank, p_label))
        hyps.append(Hypothesis(tokens=list(prefix), nar_score=total / max(len(prefix), 1),
                               source_length=len(prefix)))
    return hyps


def prefix_log_prob(hyp: Hypothesis) -> float:
    return hyp.nar_score * max(len(hyp.tokens), 1)


def ctc_cmlm_decode(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    decode_config: DecodeConfig,
    trace: list | None = None,
) -> Hypothesis:
    """
    Restricted Mask-Predict initialized from greedy CTC. Tokens whose CTC confidence is
    below p_thres start masked (m0 of them); iteration t then re-masks the
    min(k(t), m0) lowest-scoring positions anywhere in the sequence. Unmasked initial
    tokens score log(confidence).
    A greedy output longer than max_target_len cannot be fed to the CMLM decoder and is
    returned unrefined with a warning.

    Raises:
        EmptyHypothesisError: If the greedy CTC output is empty.
    """
    log_probs = _ctc_frame_log_probs(params, config, enc)
    path = log_probs.argmax(axis=-1)
    tokens, confidence = ctc_collapse(path, np.exp(log_probs[np.arange(len(path)), path]))
    if not tokens:
        raise EmptyHypothesisError("Greedy CTC output is empty; nothing to refine.")
    if len(tokens) > config.max_target_len:
        logging.warning(
            f"Greedy CTC output has {len(tokens)} tokens, more than max_target_len {config.max_target_len}; "
            "returning it unrefined."
        )
        return Hypothesis(tokens=tokens, nar_score=float(np.mean(np.log(confidence))), source_length=len(tokens))

    confidence = np.array(confidence)
    masked = (confidence < decode_config.p_thres) | (decode_config.p_thres >= 1.0)
    n_initial = int(masked.sum())
    tokens = np.array([tokens], dtype=np.int64)
    scores = np.where(masked, -np.inf, np.log(confidence))[None, :]
    tokens[0, masked] = MASK_ID
    masked = masked[None, :]
    lengths = np.array([tokens.shape[1]])
    if n_initial > 0:
        restricted = replace(decode_config, update_all=False)
        _refine(params, config, enc, tokens, scores, masked, lengths, restricted,
                mask_cap=np.array([n_initial]), trace=trace)
    return _finish(tokens, scores, lengths, decode_config.dedup and n_initial > 0)[0]


def ar_token_log_probs(params: ModelParams, config: ModelConfig, enc: EncoderOutput, candidates) -> np.ndarray:
    """
    Teacher-forced log-probabilities of every candidate (eos appended) in one batched
    pass; padded positions hold NaN. `enc` is the single-utterance encoder output.
    """
    lengths = np.array([len(c) for c in candidates], dtype=np.int64)
    width = max(int(lengths.max()), 1)
    tgt = np.full((len(candidates), width), PAD_ID, dtype=np.int64)
    for row, cand in enumerate(candidates):
        tgt[row, : len(cand)] = cand
    inputs, outputs = ar_io(tgt, lengths)
    with nx.no_grad():
        logits = ar_forward(params, config, inputs, enc.select(np.zeros(len(candidates), dtype=np.int64)))
        log_probs = nx.log_softmax(logits).value
    gold = np.take_along_axis(log_probs, outputs[..., None], axis=-1)[..., 0]
    return np.where(outputs != PAD_ID, gold, np.nan)


def parallel_rescore(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    hyps: Sequence[Hypothesis],
) -> tuple[int, list[Hypothesis]]:
    """
    Scores all candidates with the autoregressive decoder in one teacher-forced pass and
    selects by ar_score alone (mean token log-probability including eos).

    Returns:
        tuple[int, list[Hypothesis]]: Index of the best candidate (ties to the shorter,
        then the earlier one) and the candidates with ar_score filled in.

    Raises:
        UsageError: If `hyps` is empty.
        ConfigError: If the model has no autoregressive decoder.
    """
    if not hyps:
        raise UsageError("parallel_rescore needs at least one candidate.")
    if not config.uses_ar_decoder:
        raise ConfigError("Rescoring needs the autoregressive decoder (n_ar_blocks >= 1).")
    token_scores = ar_token_log_probs(params, config, enc, [h.tokens for h in hyps])
    scored = [replace(h, ar_score=float(np.nanmean(row))) for h, row in zip(hyps, token_scores, strict=True)]
    best = min(range(len(scored)), key=lambda i: (-scored[i].ar_score, len(scored[i].tokens), i))
    return best, scored


def incremental_ar_score(params: ModelParams, config: ModelConfig, enc: EncoderOutput, tokens: Sequence[int]) -> float:
    """Mean token log-probability of `tokens` + eos computed step by step with the decoder cache."""
    state = ar_init_state(config, 1)
    total = 0.0
    feed = [BOS_ID, *tokens]
    for position, token in enumerate(feed):
        log_probs, state = ar_step(params, config, state, np.array([token]), enc)
        target = tokens[position] if position < len(tokens) else EOS_ID
        total += float(log_probs[0, target])
    return total / len(feed)


def select_by_nar_score(hyps: Sequence[Hypothesis]) -> int:
    """Index of the candidate with the highest nar_score; ties to the shorter, then the earlier one."""
    if not hyps:
        raise UsageError("Cannot select from an empty candidate list.")
    return min(range(len(hyps)), key=lambda i: (-hyps[i].nar_score, len(hyps[i].tokens), i))


def ar_beam(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    beam_size: int,
    max_len: int,
) -> Hypothesis:
    """
    Length-normalized autoregressive beam search from bos to eos. With `beam_size=1`
    this is greedy decoding. Hypothesis scores are summed log-probabilities divided by
    the number of emitted tokens (eos included); the search stops once `beam_size`
    hypotheses have finished or `max_len` tokens were emitted.

    Returns:
        Hypothesis: The best finished hypothesis with ar_score set. If none finished, the
        best unfinished one with `finished=False` (a warning is logged).
    """
    if beam_size < 1:
        raise UsageError(f"beam_size must be >= 1, got {beam_size}.")
    if not config.uses_ar_decoder:
        raise ConfigError("Beam search needs the autoregressive decoder (n_ar_blocks >= 1).")
    forbidden = [BLANK_ID, PAD_ID, BOS_ID, MASK_ID]
    state = ar_init_state(config, 1)
    alive_tokens: list[list[int]] = [[]]
    alive_scores = np.zeros(1)
    feed = np.array([BOS_ID])
    finished: list[Hypothesis] = []

    for step in range(max_len + 1):
        log_probs, state = ar_step(params, config, state, feed, enc.select(np.zeros(len(alive_tokens), dtype=np.int64)))
        log_probs[:, forbidden] = -np.inf
        totals = (alive_scores[:, None] + log_probs).reshape(-1)
        order = np.argsort(-totals, kind="stable")[:beam_size]
        vocab = log_probs.shape[1]

        rows, next_tokens, next_scores = [], [], []
        for flat in order:
            if not np.isfinite(totals[flat]):
                continue
            row, token = divmod(int(flat), vocab)
            tokens = alive_tokens[row]
            if token == EOS_ID:
                finished.append(Hypothesis(tokens=list(tokens), ar_score=float(totals[flat]) / (len(tokens) + 1),
                                           source_length=len(tokens)))
            else:
                rows.append(row)
                next_tokens.append(token)
                next_scores.append(totals[flat])
        if len(finished) >= beam_size or not rows or step == max_len:
            break
        alive_tokens = [alive_tokens[r] + [t] for r, t in zip(rows, next_tokens, strict=True)]
        alive_scores = np.array(next_scores)
        state = state.select(rows)
        feed = np.array(next_tokens)

    if finished:
        return min(finished, key=lambda h: (-h.ar_score, len(h.tokens)))
    logging.warning(f"Autoregressive beam search reached max_len={max_len} without emitting eos.")
    best = int(np.argmax(alive_scores / np.maximum([len(t) for t in alive_tokens], 1)))
    tokens = alive_tokens[best]
    return Hypothesis(tokens=tokens, ar_score=float(alive_scores[best]) / max(len(tokens), 1),
                      source_length=len(tokens), finished=False)


def decode_utterance(
    params: ModelParams,
    config: ModelConfig,
    enc: EncoderOutput,
    decode_config: DecodeConfig,
) -> DecodeResult:
    """
    Decodes one utterance with the configured algorithm. For the candidate-producing
    algorithms, selection uses parallel rescoring when `rescore` is set and nar_score
    otherwise.
    """
    algorithm = decode_config.algorithm
    if algorithm == "ar_beam":
        max_len = decode_config.max_len or config.max_target_len
        best = ar_beam(params, config, enc, decode_config.beam_size, max_len)
        return DecodeResult(best=best, candidates=[best], algorithm=algorithm)

    if algorithm == "mask_predict":
        candidates = mask_predict(params, config, enc, decode_config)
    elif algorithm == "ctc_cmlm":
        candidates = [ctc_cmlm_decode(params, config, enc, decode_config)]
    elif algorithm == "ctc_beam":
        candidates = ctc_prefix_beam(_ctc_frame_log_probs(params, config, enc), decode_config.length_beam)
    else:
        candidates = [_greedy_hypothesis(_ctc_frame_log_probs(params, config, enc))]

    if decode_config.rescore:
        best, candidates = parallel_rescore(params, config, enc, candidates)
    else:
        best = select_by_nar_score(candidates)
    return DecodeResult(best=candidates[best], candidates=candidates, algorithm=algorithm)


def decode_record(sample_id: int, result: DecodeResult) -> dict:
    """The decode-output JSON record of one utterance."""
    return {
        "id": int(sample_id),
        "hyp": [int(t) for t in result.best.tokens],
        "nar_score": result.best.nar_score,
        "ar_score": result.best.ar_score,
        "n_candidates": len(result.candidates),
        "algorithm": result.algorithm,
        "candidates": [[int(t) for t in h.tokens] for h in result.candidates],
    }


def error_record(sample_id: int, algorithm: str, error: Exception) -> dict:
    """The record of an utterance that produced no hypothesis; it scores as an empty output."""
    return {
        "id": int(sample_id),
        "hyp": [],
        "nar_score": None,
        "ar_score": None,
        "n_candidates": 0,
        "algorithm": algorithm,
        "candidates": [],
        "error": f"{type(error).__name__}: {error}",
    }


def decode_sample(params: ModelParams, config: ModelConfig, sample: Sample, decode_config: DecodeConfig) -> dict:
    """
    Decodes one sample into its output record. Utterances without a hypothesis are logged
    and recorded with an empty `hyp` and an `error` field instead of aborting the corpus.
    """
    batch = pad_batch([sample], PAD_ID)
    with nx.no_grad():
        enc = encode_speech(params, config, batch)
    try:
        result = decode_utterance(params, config, enc, decode_config)
    except (EmptyHypothesisError, LengthError) as e:
        logging.warning(f"Utterance {sample.id}: {type(e).__name__}: {e}")
        return error_record(sample.id, decode_config.algorithm, e)
    return decode_record(sample.id, result)


# Per-process model used by pool workers.
_worker_state: dict = {}


def _init_worker(arrays: dict, config_dict: dict, decode_config: DecodeConfig, log_queue, log_level: int) -> None:
    if log_queue is not None:
        setup_logging(log_queue, log_level)
    _worker_state["params"] = ModelParams.from_arrays(arrays)
    _worker_state["config"] = ModelConfig.from_dict(config_dict)
    _worker_state["decode_config"] = decode_config


def _decode_in_worker(sample: Sample) -> dict:
    return decode_sample(_worker_state["params"], _worker_state["config"], sample, _worker_state["decode_config"])


def decode_corpus(
    params: ModelParams,
    config: ModelConfig,
    samples: Iterable[Sample],
    decode_config: DecodeConfig,
    workers: int = 1,
    log_queue: "multiprocessing.Queue | None" = None,
    log_level: int = logging.INFO,
) -> list[dict]:
    """
    Decodes every sample independently (batch size 1) and returns the output records in
    input order. With `workers > 1` utterances are spread over a process pool whose
    workers log through `log_queue`.
    """
    samples = list(samples)
    logging.info(f"Decoding {len(samples)} utterances with {decode_config.algorithm} ({workers} worker(s)).")
    if workers <= 1:
        records = [decode_sample(params, config, sample, decode_config) for sample in samples]
    else:
        init_args = (params.arrays(), config.to_dict(), decode_config, log_queue, log_level)
        with multiprocessing.Pool(workers, initializer=_init_worker, initargs=init_args) as pool:
            records = pool.map(_decode_in_worker, samples)
    failed = sum("error" in record for record in records)
    if failed:
        logging.warning(f"{failed} of {len(records)} utterances produced no hypothesis.")
    return records
