"""
This module handles the vocabulary, the synthetic frame-to-token translation corpus,
dataset serialization and batching.

The corpus simulates speech translation at desk scale: every source token has a fixed
random "acoustic" embedding that is repeated for a random number of frames (speaking
rate) with Gaussian noise on top, and the target sentence is a deterministic translation
of the source (token substitution followed by swapping adjacent bigrams).

All randomness comes from numpy's PCG64 bit generator seeded with the caller's seed, so a
corpus is a pure function of its arguments.
"""

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from errors import ConfigError, OrthrosError, UsageError

# Default dimensionality of a synthetic frame.
FRAME_DIM = 16

# Special symbols, in id order. The CTC blank must be id 0.
SPECIAL_TOKENS = ("<blank>", "<pad>", "<s>", "</s>", "<mask>")
BLANK_ID, PAD_ID, BOS_ID, EOS_ID, MASK_ID = range(len(SPECIAL_TOKENS))


class DatasetParseError(OrthrosError):
    """Raised when a dataset or vocabulary file is malformed."""

    def __init__(self, message: str, line_number: int = 0):
        super().__init__(f"line {line_number}: {message}" if line_number else message)
        self.line_number = line_number


@dataclass(frozen=True)
class Vocabulary:
    """Token table shared by source transcriptions and target translations."""

    tokens: tuple[str, ...]
    blank_id: int = BLANK_ID
    pad_id: int = PAD_ID
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    mask_id: int = MASK_ID

    def __post_init__(self):
        specials = (self.blank_id, self.pad_id, self.bos_id, self.eos_id, self.mask_id)
        if self.blank_id != 0:
            raise ConfigError(f"The blank id must be 0, got {self.blank_id}.")
        if len(set(specials)) != len(specials):
            raise ConfigError(f"Special token ids must be distinct, got {specials}.")
        if len(self.tokens) < 6:
            raise ConfigError(f"Vocabulary must hold at least 6 tokens, got {len(self.tokens)}.")
        if max(specials) >= len(self.tokens):
            raise ConfigError(f"Special token ids {specials} exceed vocabulary size {len(self.tokens)}.")

    @classmethod
    def build(cls, size: int) -> "Vocabulary":
        """Creates a vocabulary of `size` ids: the special symbols followed by content words."""
        if size < 6:
            raise ConfigError(f"Vocabulary must hold at least 6 tokens, got {size}.")
        words = tuple(f"w{i}" for i in range(len(SPECIAL_TOKENS), size))
        return cls(tokens=SPECIAL_TOKENS + words)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def first_content_id(self) -> int:
        return len(SPECIAL_TOKENS)

    def content_ids(self) -> np.ndarray:
        return np.arange(self.first_content_id, len(self.tokens))

    def to_string(self, ids: Iterable[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "pad": self.pad_id,
            "mask": self.mask_id,
            "bos": self.bos_id,
            "eos": self.eos_id,
            "blank": self.blank_id,
        }


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(json.dumps(vocab.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    """
    Reads a vocabulary file. The model components assume the standard special-id layout,
    so files that move the special symbols are rejected.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = Vocabulary(
            tokens=tuple(data["tokens"]),
            blank_id=data["blank"],
            pad_id=data["pad"],
            bos_id=data["bos"],
            eos_id=data["eos"],
            mask_id=data["mask"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetParseError(f"Invalid vocabulary file {path}: {e}") from e
    layout = (vocab.blank_id, vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.mask_id)
    if layout != (BLANK_ID, PAD_ID, BOS_ID, EOS_ID, MASK_ID):
        raise ConfigError(f"Unsupported special-id layout {layout} in {path}.")
    return vocab


@dataclass
class Sample:
    """One utterance: frames X [U, F], target Y and source transcription Z."""

    id: int
    frames: np.ndarray
    tgt: list[int]
    src: list[int]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.tgt == other.tgt
            and self.src == other.src
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )


@dataclass
class Batch:
    """Right-padded batch of samples; token padding uses pad_id and frame padding zeros."""

    ids: list[int]
    frames: np.ndarray
    frame_lengths: np.ndarray
    tgt: np.ndarray
    tgt_lengths: np.ndarray
    src: np.ndarray
    src_lengths: np.ndarray
    pad_id: int = field(default=PAD_ID)

    def __len__(self) -> int:
        return len(self.ids)


def translate_source(src: Sequence[int], permutation: np.ndarray) -> list[int]:
    """
    The deterministic "translation" Z -> Y: substitute every token through `permutation`,
    then swap each adjacent bigram. An unpaired final token is substituted but not moved.

    Args:
        src (Sequence[int]): Source token ids.
        permutation (np.ndarray): Lookup table indexed by token id.

    Returns:
        list[int]: Target token ids, same length as `src`.
    """
    substituted = [int(permutation[t]) for t in src]
    for i in range(0, len(substituted) - 1, 2):
        substituted[i], substituted[i + 1] = substituted[i + 1], substituted[i]
    return substituted


def count_adjacent_repeats(tokens: Sequence[int]) -> int:
    return sum(1 for a, b in zip(tokens, tokens[1:], strict=False) if a == b)


def _content_permutation(rng: np.random.Generator, vocab: Vocabulary) -> np.ndarray:
    table = np.arange(len(vocab))
    content = vocab.content_ids()
    table[content] = rng.permutation(content)
    return table


def gen_corpus(
    seed: int,
    n_samples: int,
    vocab_size: int = 32,
    len_range: tuple[int, int] = (3, 12),
    repeat_range: tuple[int, int] = (4, 7),
    noise_std: float = 0.1,
    frame_dim: int = FRAME_DIM,
    synonym_rate: float = 0.0,
    pad_silence: bool = True,
) -> list[Sample]:
    """
    Generates the synthetic frame-to-token translation corpus.

    Args:
        seed (int): PCG64 seed; the corpus is a pure function of the arguments.
        n_samples (int): Number of samples.
        vocab_size (int): Total vocabulary size including special symbols (>= 8).
        len_range (tuple[int, int]): Inclusive range of source/target lengths, within [1, 64].
        repeat_range (tuple[int, int]): Inclusive range of frames emitted per source token.
        noise_std (float): Standard deviation of the Gaussian frame noise.
        frame_dim (int): Feature dimension F of a frame.
        synonym_rate (float): Probability of replacing a target token with its alternative translation.
        pad_silence (bool): Append silence frames so that U >= 4 * (N + repeats) + 4.

    Returns:
        list[Sample]: The generated samples with ids 0..n_samples-1.

    Raises:
        ConfigError: If any argument is out of range.
    """
    if vocab_size < 8:
        raise ConfigError(f"vocab_size must be >= 8, got {vocab_size}.")
    low, high = len_range
    if not 1 <= low <= high <= 64:
        raise ConfigError(f"len_range must lie within [1, 64], got {len_range}.")
    if repeat_range[0] < 1 or repeat_range[0] > repeat_range[1]:
        raise ConfigError(f"repeat_range minimum must be >= 1 and <= maximum, got {repeat_range}.")
    if not 0.0 <= synonym_rate <= 1.0:
        raise ConfigError(f"synonym_rate must lie within [0, 1], got {synonym_rate}.")

    vocab = Vocabulary.build(vocab_size)
    rng = np.random.Generator(np.random.PCG64(seed))
    # Frame embeddings and both translation tables are drawn once per corpus.
    embeddings = rng.standard_normal((vocab_size, frame_dim))
    permutation = _content_permutation(rng, vocab)
    synonyms = _content_permutation(rng, vocab)
    content = vocab.content_ids()

    samples = []
    for sample_id in range(n_samples):
        length = int(rng.integers(low, high + 1))
        src = [int(t) for t in rng.choice(content, size=length)]
        tgt = translate_source(src, permutation)
        if synonym_rate > 0.0:
            swap = rng.random(length) < synonym_rate
            tgt = [int(synonyms[t]) if s else t for t, s in zip(tgt, swap, strict=True)]

        repeats = rng.integers(repeat_range[0], repeat_range[1] + 1, size=length)
        frames = np.repeat(embeddings[src], repeats, axis=0)
        if pad_silence:
            required = 4 * (len(tgt) + count_adjacent_repeats(tgt)) + 4
            if frames.shape[0] < required:
                frames = np.concatenate([frames, np.zeros((required - frames.shape[0], frame_dim))])
        if noise_std > 0.0:
            frames = frames + noise_std * rng.standard_normal(frames.shape)
        samples.append(Sample(id=sample_id, frames=frames, tgt=tgt, src=src))

    logging.info(f"Generated {n_samples} samples (seed={seed}, vocab_size={vocab_size}, len_range={len_range}).")
    return samples


def split_corpus(samples: list[Sample], n_valid: int, n_eval: int) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Splits a corpus into train / valid / eval parts, keeping generation order."""
    if n_valid + n_eval >= len(samples):
        raise UsageError(f"Cannot hold out {n_valid} + {n_eval} samples from a corpus of {len(samples)}.")
    n_train = len(samples) - n_valid - n_eval
    return samples[:n_train], samples[n_train : n_train + n_valid], samples[n_train + n_valid :]


def sample_to_json(sample: Sample) -> str:
    return json.dumps(
        {"id": sample.id, "frames": sample.frames.tolist(), "tgt": sample.tgt, "src": sample.src},
        separators=(",", ":"),
    )


def save_dataset(samples: Iterable[Sample], path: str | Path) -> None:
    """
    Writes samples as UTF-8 JSON lines. Python's float repr round-trips f64 exactly,
    so a save/load cycle is lossless.
    """
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(sample_to_json(sample) + "\n")


def load_dataset(path: str | Path) -> list[Sample]:
    """
    Reads a JSON-lines dataset.

    Raises:
        DatasetParseError: With the offending line number if a record is malformed or truncated.
    """
    samples = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                frames = np.asarray(record["frames"], dtype=np.float64)
                if frames.ndim != 2:
                    raise ValueError(f"frames must be a matrix, got {frames.ndim} dimensions")
                samples.append(
                    Sample(
                        id=int(record["id"]),
                        frames=frames,
                        tgt=[int(t) for t in record["tgt"]],
                        src=[int(t) for t in record["src"]],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetParseError(f"Malformed sample in {path}: {e}", line_number) from e
    return samples


def _pad_tokens(sequences: Sequence[Sequence[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    padded = np.full((len(sequences), max(int(lengths.max()), 1)), pad_id, dtype=np.int64)
    for row, seq in enumerate(sequences):
        padded[row, : len(seq)] = seq
    return padded, lengths


def pad_batch(samples: Sequence[Sample], pad_id: int) -> Batch:
    """
    Pads a list of samples into a batch.

    Raises:
        UsageError: If `samples` is empty.
    """
    if not samples:
        raise UsageError("Cannot build a batch from an empty list of samples.")

    frame_lengths = np.array([s.frames.shape[0] for s in samples], dtype=np.int64)
    frame_dim = samples[0].frames.shape[1]
    frames = np.zeros((len(samples), int(frame_lengths.max()), frame_dim))
    for row, sample in enumerate(samples):
        frames[row, : sample.frames.shape[0]] = sample.frames

    tgt, tgt_lengths = _pad_tokens([s.tgt for s in samples], pad_id)
    src, src_lengths = _pad_tokens([s.src for s in samples], pad_id)
    return Batch(
        ids=[s.id for s in samples],
        frames=frames,
        frame_lengths=frame_lengths,
        tgt=tgt,
        tgt_lengths=tgt_lengths,
        src=src,
        src_lengths=src_lengths,
        pad_id=pad_id,
    )
