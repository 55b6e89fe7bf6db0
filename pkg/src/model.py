"""
This module defines the network: a speech encoder (Transformer or Conformer blocks over a
two-layer stride-2 convolutional frontend), an optional text encoder, the CMLM decoder,
the shallow autoregressive decoder, the CTC projection head and the length predictor.
Every head reads the same shared speech encoder output.

Parameters live in a flat name -> Node map (`ModelParams`) so that checkpoints can be
written, averaged and compared by name. All blocks are pre-norm with residual connections.
"""

import json
import logging
import math
import struct
from collections.abc import Iterator, Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

import numerics as nx
from errors import ConfigError, OrthrosError, UsageError
from numerics import Node
from vocab_data import BOS_ID, FRAME_DIM, PAD_ID, Batch

# Additive attention bias for disallowed keys; exp() of it underflows to exactly zero.
NEG_INF = -1e9

CHECKPOINT_MAGIC = b"ORTH"
CHECKPOINT_VERSION = 1

ENCODER_KINDS = ("transformer", "conformer")


class LengthError(OrthrosError):
    """Raised when a sequence length exceeds the configured maximum."""


class InputTooShortError(OrthrosError):
    """Raised when an utterance has no frames left after subsampling."""


class CheckpointFormatError(OrthrosError):
    """Raised when a checkpoint file cannot be decoded."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults are the desk-scale configuration."""

    vocab_size: int = 32
    src_vocab_size: int = 32
    frame_dim: int = FRAME_DIM
    encoder_kind: str = "transformer"
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    n_ar_blocks: int = 1
    n_text_blocks: int = 2
    d_model: int = 64
    d_ff: int = 256
    n_heads: int = 4
    conv_kernel: int = 7
    max_target_len: int = 16
    dropout: float = 0.1
    use_cmlm_decoder: bool = True
    use_ctc_head: bool = False
    use_length_predictor: bool = True
    use_text_encoder: bool = True
    use_relative_pe: bool | None = None
    share_ar_embedding: bool = True

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder_kind must be one of {ENCODER_KINDS}, got '{self.encoder_kind}'.")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads}).")
        if min(self.n_enc_blocks, self.n_dec_blocks, self.n_ar_blocks, self.n_text_blocks) < 0:
            raise ConfigError("Block counts must be non-negative.")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}.")
        if self.max_target_len < 1:
            raise ConfigError(f"max_target_len must be >= 1, got {self.max_target_len}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}.")
        if self.use_relative_pe is None:
            self.use_relative_pe = self.encoder_kind == "conformer"

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def uses_ar_decoder(self) -> bool:
        return self.n_ar_blocks > 0

    @property
    def ar_embedding_name(self) -> str:
        return "tgt_embed" if self.share_ar_embedding else "ar.embed"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model config keys: {unknown}.")
        return cls(**dict(data))


@dataclass
class EncoderOutput:
    """Encoder states [B, U', d_model] with valid-position flags [B, U']."""

    states: Node
    mask: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def select(self, rows) -> "EncoderOutput":
        """Returns the rows `rows` (repeats allowed), e.g. to replicate one utterance per candidate."""
        rows = np.asarray(rows, dtype=np.int64)
        return EncoderOutput(states=nx.gather(self.states, rows), mask=self.mask[rows])

    def detached(self) -> "EncoderOutput":
        return EncoderOutput(states=nx.detach(self.states), mask=self.mask)


class ModelParams(Mapping[str, Node]):
    """Named parameter map; every entry is a leaf `Node` with a fixed shape."""

    def __init__(self, tensors: Mapping[str, Node]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Node:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls({name: nx.parameter(value) for name, value in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._tensors.items()}

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: node.shape for name, node in self._tensors.items()}

    def zero_grad(self) -> None:
        for node in self._tensors.values():
            node.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(node.value.size for node in self._tensors.values()))


# ---------------------------------------------------------------------------
# Parameter layout and initialization
# ---------------------------------------------------------------------------


def _linear_shapes(prefix: str, d_in: int, d_out: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.w": (d_in, d_out), f"{prefix}.b": (d_out,)}


def _norm_shapes(prefix: str, dim: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.gamma": (dim,), f"{prefix}.beta": (dim,)}


def _attention_shapes(prefix: str, config: ModelConfig, relative: bool = False) -> dict[str, tuple[int, ...]]:
    d = config.d_model
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes.update(_linear_shapes(f"{prefix}.{proj}", d, d))
    if relative:
        shapes[f"{prefix}.pos.w"] = (d, d)
        shapes[f"{prefix}.pos_bias_u"] = (config.n_heads, config.head_dim)
        shapes[f"{prefix}.pos_bias_v"] = (config.n_heads, config.head_dim)
    return shapes


def _ffn_shapes(prefix: str, config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {
        **_linear_shapes(f"{prefix}.fc1", config.d_model, config.d_ff),
        **_linear_shapes(f"{prefix}.fc2", config.d_ff, config.d_model),
    }


def _encoder_block_shapes(prefix: str, config: ModelConfig, conformer: bool, relative: bool) -> dict:
    d = config.d_model
    shapes = {
        **_norm_shapes(f"{prefix}.norm_attn", d),
        **_attention_shapes(f"{prefix}.attn", config, relative),
        **_norm_shapes(f"{prefix}.norm_ffn", d),
        **_ffn_shapes(f"{prefix}.ffn", config),
    }
    if conformer:
        shapes.update(_norm_shapes(f"{prefix}.norm_macaron", d))
        shapes.update(_ffn_shapes(f"{prefix}.ffn_macaron", config))
        shapes.update(_norm_shapes(f"{prefix}.norm_conv", d))
        shapes.update(_linear_shapes(f"{prefix}.conv.pw1", d, 2 * d))
        shapes[f"{prefix}.conv.dw.w"] = (config.conv_kernel, d)
        shapes[f"{prefix}.conv.dw.b"] = (d,)
        shapes.update(_norm_shapes(f"{prefix}.conv.norm", d))
        shapes.update(_linear_shapes(f"{prefix}.conv.pw2", d, d))
        shapes.update(_norm_shapes(f"{prefix}.norm_final", d))
    return shapes


def _decoder_block_shapes(prefix: str, config: ModelConfig) -> dict:
    d = config.d_model
    return {
        **_norm_shapes(f"{prefix}.norm_self", d),
        **_attention_shapes(f"{prefix}.self_attn", config),
        **_norm_shapes(f"{prefix}.norm_cross", d),
        **_attention_shapes(f"{prefix}.cross_attn", config),
        **_norm_shapes(f"{prefix}.norm_ffn", d),
        **_ffn_shapes(f"{prefix}.ffn", config),
    }


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """
    Returns the ordered name -> shape table implied by a configuration. The table (and so
    the parameter count) is a pure function of the configuration.
    """
    d = config.d_model
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["frontend.conv1.w"] = (3, config.frame_dim, d)
    shapes["frontend.conv1.b"] = (d,)
    shapes["frontend.conv2.w"] = (3, d, d)
    shapes["frontend.conv2.b"] = (d,)
    shapes.update(_linear_shapes("frontend.out", d, d))

    conformer = config.encoder_kind == "conformer"
    for i in range(config.n_enc_blocks):
        shapes.update(_encoder_block_shapes(f"enc.{i}", config, conformer, bool(config.use_relative_pe)))
    shapes.update(_norm_shapes("enc.norm", d))

    if config.use_text_encoder:
        shapes["src_embed"] = (config.src_vocab_size, d)
        for i in range(config.n_text_blocks):
            shapes.update(_encoder_block_shapes(f"text.{i}", config, conformer=False, relative=False))
        shapes.update(_norm_shapes("text.norm", d))

    if config.use_cmlm_decoder or (config.uses_ar_decoder and config.share_ar_embedding):
        shapes["tgt_embed"] = (config.vocab_size, d)
    if config.use_cmlm_decoder:
        for i in range(config.n_dec_blocks):
            shapes.update(_decoder_block_shapes(f"cmlm.{i}", config))
        shapes.update(_norm_shapes("cmlm.norm", d))
        shapes.update(_linear_shapes("cmlm.out", d, config.vocab_size))

    if config.uses_ar_decoder:
        if not config.share_ar_embedding:
            shapes["ar.embed"] = (config.vocab_size, d)
        for i in range(config.n_ar_blocks):
            shapes.update(_decoder_block_shapes(f"ar.{i}", config))
        shapes.update(_norm_shapes("ar.norm", d))
        shapes.update(_linear_shapes("ar.out", d, config.vocab_size))

    if config.use_ctc_head:
        shapes.update(_linear_shapes("ctc", d, config.vocab_size))
    if config.use_length_predictor:
        shapes.update(_linear_shapes("length", d, config.max_target_len + 1))
    return shapes


def _is_decoder_side(name: str) -> bool:
    return name.split(".")[0] in {"tgt_embed", "cmlm", "ar", "ctc", "length"}


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """
    Initializes parameters. Biases and layer-norm shifts start at zero and layer-norm
    gains at one. Decoder-side weights (decoders, target embedding, CTC and length heads)
    follow the BERT scheme N(0, 0.02); encoder weights use Xavier-uniform initialization.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b", "beta") or leaf.startswith("pos_bias"):
            arrays[name] = np.zeros(shape)
        elif leaf == "gamma":
            arrays[name] = np.ones(shape)
        elif _is_decoder_side(name) or name == "src_embed":
            arrays[name] = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = math.sqrt(6.0 / (fan_in + shape[-1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams.from_arrays(arrays)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def sinusoid_table(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encodings for (possibly negative) integer positions, shape [len(positions), dim]."""
    inv_freq = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    table = np.zeros((len(positions), dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim // 2])
    return table


def _linear(params: ModelParams, prefix: str, x) -> Node:
    return nx.affine(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _norm(params: ModelParams, prefix: str, x) -> Node:
    return nx.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def _split_heads(x: Node, n_heads: int) -> Node:
    batch, length, dim = x.shape
    return nx.transpose(nx.reshape(x, (batch, length, n_heads, dim // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Node) -> Node:
    batch, n_heads, length, head_dim = x.shape
    return nx.reshape(nx.transpose(x, (0, 2, 1, 3)), (batch, length, n_heads * head_dim))


def _attention_bias(key_mask: np.ndarray, n_queries: int, causal: bool) -> np.ndarray:
    """Additive bias [B, 1, Uq, Uk]; queries are the last `n_queries` positions when causal."""
    n_keys = key_mask.shape[1]
    bias = np.where(key_mask[:, None, None, :], 0.0, NEG_INF)
    if causal:
        query_pos = np.arange(n_keys - n_queries, n_keys)[:, None]
        bias = bias + np.where(np.arange(n_keys)[None, :] > query_pos, NEG_INF, 0.0)[None, None]
    return np.broadcast_to(bias, (key_mask.shape[0], 1, n_queries, n_keys))


def _relative_shift_index(length: int) -> tuple:
    """Index selecting, for query i and key j, the relative-position column of distance i - j."""
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    return (slice(None), slice(None), i, length - 1 - i + j)


def multi_head_attention(
    params: ModelParams,
    prefix: str,
    query: Node,
    memory: Node,
    key_mask: np.ndarray,
    config: ModelConfig,
    causal: bool = False,
    relative: bool = False,
) -> Node:
    """
    Scaled dot-product multi-head attention.

    With `relative`, scores add a content-independent positional term computed from
    sinusoidal encodings of the relative distance (query and memory must coincide), and
    the learned biases u / v are added to the queries of the content and position terms.
    """
    n_heads, head_dim = config.n_heads, config.head_dim
    q = _split_heads(_linear(params, f"{prefix}.q", query), n_heads)
    k = _split_heads(_linear(params, f"{prefix}.k", memory), n_heads)
    v = _split_heads(_linear(params, f"{prefix}.v", memory), n_heads)
    keys_t = nx.transpose(k, (0, 1, 3, 2))

    if relative:
        length = memory.shape[1]
        bias_u = nx.reshape(params[f"{prefix}.pos_bias_u"], (1, n_heads, 1, head_dim))
        bias_v = nx.reshape(params[f"{prefix}.pos_bias_v"], (1, n_heads, 1, head_dim))
        distances = np.arange(length - 1, -length, -1)
        pos = nx.matmul(sinusoid_table(distances, config.d_model), params[f"{prefix}.pos.w"])
        pos = nx.transpose(nx.reshape(pos, (2 * length - 1, n_heads, head_dim)), (1, 2, 0))
        content = nx.matmul(q + bias_u, keys_t)
        position = nx.gather(nx.matmul(q + bias_v, pos), _relative_shift_index(length))
        scores = content + position
    else:
        scores = nx.matmul(q, keys_t)

    scores = nx.scale(scores, 1.0 / math.sqrt(head_dim)) + _attention_bias(key_mask, query.shape[1], causal)
    context = nx.matmul(nx.softmax(scores), v)
    return _linear(params, f"{prefix}.o", _merge_heads(context))


def _feed_forward(params: ModelParams, prefix: str, x: Node, swish: bool = False) -> Node:
    hidden = _linear(params, f"{prefix}.fc1", x)
    hidden = nx.silu(hidden) if swish else nx.relu(hidden)
    return _linear(params, f"{prefix}.fc2", hidden)


def _conv_module(params: ModelParams, prefix: str, x: Node, mask: np.ndarray) -> Node:
    """Pointwise conv + GLU, depthwise conv, layer norm, swish, pointwise conv."""
    hidden = nx.glu(_linear(params, f"{prefix}.pw1", x))
    hidden = nx.mul(hidden, mask[:, :, None])
    hidden = nx.depthwise_conv1d(hidden, params[f"{prefix}.dw.w"]) + params[f"{prefix}.dw.b"]
    hidden = nx.silu(_norm(params, f"{prefix}.norm", hidden))
    return _linear(params, f"{prefix}.pw2", hidden)


def _transformer_block(
    params: ModelParams,
    prefix: str,
    x: Node,
    mask: np.ndarray,
    config: ModelConfig,
    rng: np.random.Generator | None,
    relative: bool = False,
) -> Node:
    h = _norm(params, f"{prefix}.norm_attn", x)
    x = x + nx.dropout(multi_head_attention(params, f"{prefix}.attn", h, h, mask, config, relative=relative),
                       config.dropout, rng)
    h = _norm(params, f"{prefix}.norm_ffn", x)
    return x + nx.dropout(_feed_forward(params, f"{prefix}.ffn", h), config.dropout, rng)


def _conformer_block(
    params: ModelParams,
    prefix: str,
    x: Node,
    mask: np.ndarray,
    config: ModelConfig,
    rng: np.random.Generator | None,
) -> Node:
    rate = config.dropout
    h = _norm(params, f"{prefix}.norm_macaron", x)
    x = x + nx.scale(nx.dropout(_feed_forward(params, f"{prefix}.ffn_macaron", h, swish=True), rate, rng), 0.5)
    h = _norm(params, f"{prefix}.norm_attn", x)
    relative = bool(config.use_relative_pe)
    x = x + nx.dropout(multi_head_attention(params, f"{prefix}.attn", h, h, mask, config, relative=relative),
                       rate, rng)
    h = _norm(params, f"{prefix}.norm_conv", x)
    x = x + nx.dropout(_conv_module(params, f"{prefix}.conv", h, mask), rate, rng)
    h = _norm(params, f"{prefix}.norm_ffn", x)
    x = x + nx.scale(nx.dropout(_feed_forward(params, f"{prefix}.ffn", h, swish=True), rate, rng), 0.5)
    return _norm(params, f"{prefix}.norm_final", x)


def _decoder_block(
    params: ModelParams,
    prefix: str,
    x: Node,
    self_key_mask: np.ndarray,
    enc: EncoderOutput,
    config: ModelConfig,
    causal: bool,
    rng: np.random.Generator | None,
    keys: Node | None = None,
) -> Node:
    """
    Self-attention, cross-attention to the encoder, feed-forward. `keys` holds the block
    inputs of all visible positions when `x` covers only the newest ones (incremental
    decoding); by default queries and keys coincide.
    """
    h = _norm(params, f"{prefix}.norm_self", x)
    memory = h if keys is None else _norm(params, f"{prefix}.norm_self", keys)
    attended = multi_head_attention(params, f"{prefix}.self_attn", h, memory, self_key_mask, config, causal=causal)
    x = x + nx.dropout(attended, config.dropout, rng)
    h = _norm(params, f"{prefix}.norm_cross", x)
    attended = multi_head_attention(params, f"{prefix}.cross_attn", h, enc.states, enc.mask, config)
    x = x + nx.dropout(attended, config.dropout, rng)
    h = _norm(params, f"{prefix}.norm_ffn", x)
    return x + nx.dropout(_feed_forward(params, f"{prefix}.ffn", h), config.dropout, rng)


def _embed(params: ModelParams, table: str, tokens: np.ndarray, config: ModelConfig, offset: int = 0) -> Node:
    emb = nx.scale(nx.gather(params[table], tokens), math.sqrt(config.d_model))
    positions = np.arange(offset, offset + tokens.shape[1])
    return emb + sinusoid_table(positions, config.d_model)[None]


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


def subsampled_lengths(frame_lengths: np.ndarray) -> np.ndarray:
    """Valid lengths after the two stride-2 convolutions: ceil(ceil(U / 2) / 2)."""
    half = (np.asarray(frame_lengths) + 1) // 2
    return (half + 1) // 2


def _length_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    return np.arange(width)[None, :] < np.asarray(lengths)[:, None]


def subsample(params: ModelParams, config: ModelConfig, batch: Batch) -> tuple[Node, np.ndarray]:
    """
    Convolutional frontend: two kernel-3 stride-2 convolutions, each followed by a swish
    activation and re-masking of padded frames, then a linear projection. Returns the
    four-fold time-reduced stream [B, U', d_model] and its validity mask.

    Raises:
        InputTooShortError: If any utterance is empty.
    """
    lengths = np.asarray(batch.frame_lengths)
    if batch.frames.shape[1] == 0 or (lengths <= 0).any():
        raise InputTooShortError(f"Utterances {list(np.asarray(batch.ids)[lengths <= 0])} have no frames.")

    half = (lengths + 1) // 2
    x = nx.silu(nx.conv1d_strided(batch.frames, params["frontend.conv1.w"], params["frontend.conv1.b"]))
    x = nx.mul(x, _length_mask(half, x.shape[1])[:, :, None])
    x = nx.silu(nx.conv1d_strided(x, params["frontend.conv2.w"], params["frontend.conv2.b"]))
    mask = _length_mask(subsampled_lengths(lengths), x.shape[1])
    x = nx.mul(x, mask[:, :, None])
    return _linear(params, "frontend.out", x), mask


def encode_speech(
    params: ModelParams,
    config: ModelConfig,
    batch: Batch,
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """
    Encodes a batch of frame sequences with the shared speech encoder.

    Args:
        params (ModelParams): Model parameters.
        config (ModelConfig): Architecture configuration.
        batch (Batch): Padded input batch.
        rng (np.random.Generator | None): Dropout generator; None disables dropout.

    Returns:
        EncoderOutput: States [B, ceil(U / 4), d_model], zeroed at padded positions.
    """
    x, mask = subsample(params, config, batch)
    x = nx.scale(x, math.sqrt(config.d_model))
    if not config.use_relative_pe:
        x = x + sinusoid_table(np.arange(x.shape[1]), config.d_model)[None]
    x = nx.dropout(x, config.dropout, rng)

    for i in range(config.n_enc_blocks):
        if config.encoder_kind == "conformer":
            x = _conformer_block(params, f"enc.{i}", x, mask, config, rng)
        else:
            x = _transformer_block(params, f"enc.{i}", x, mask, config, rng, relative=bool(config.use_relative_pe))
    x = nx.mul(_norm(params, "enc.norm", x), mask[:, :, None])
    return EncoderOutput(states=x, mask=mask)


def encode_text(
    params: ModelParams,
    config: ModelConfig,
    src: np.ndarray,
    src_lengths: np.ndarray,
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """
    Encodes source transcriptions for the auxiliary text-input task (no subsampling).

    Raises:
        ConfigError: If the text encoder is disabled.
    """
    if not config.use_text_encoder:
        raise ConfigError("The text encoder is disabled (use_text_encoder=false).")
    src = np.asarray(src, dtype=np.int64)
    mask = _length_mask(src_lengths, src.shape[1])
    x = nx.dropout(_embed(params, "src_embed", src, config), config.dropout, rng)
    for i in range(config.n_text_blocks):
        x = _transformer_block(params, f"text.{i}", x, mask, config, rng)
    x = nx.mul(_norm(params, "text.norm", x), mask[:, :, None])
    return EncoderOutput(states=x, mask=mask)


# ---------------------------------------------------------------------------
# Decoders and heads
# ---------------------------------------------------------------------------


def cmlm_forward(
    params: ModelParams,
    config: ModelConfig,
    tokens: np.ndarray,
    enc: EncoderOutput,
    rng: np.random.Generator | None = None,
) -> Node:
    """
    Runs the CMLM decoder: bidirectional self-attention over every (possibly masked)
    position plus cross-attention to the encoder.

    Args:
        tokens (np.ndarray): Decoder input [B, N] that may contain mask ids anywhere.

    Returns:
        Node: Logits [B, N, V].

    Raises:
        ConfigError: If the CMLM decoder is disabled.
        LengthError: If N exceeds max_target_len.
    """
    if not config.use_cmlm_decoder:
        raise ConfigError("The CMLM decoder is disabled (use_cmlm_decoder=false).")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[1] > config.max_target_len:
        raise LengthError(f"Decoder input length {tokens.shape[1]} exceeds max_target_len {config.max_target_len}.")
    key_mask = tokens != PAD_ID
    x = nx.dropout(_embed(params, "tgt_embed", tokens, config), config.dropout, rng)
    for i in range(config.n_dec_blocks):
        x = _decoder_block(params, f"cmlm.{i}", x, key_mask, enc, config, causal=False, rng=rng)
    return _linear(params, "cmlm.out", _norm(params, "cmlm.norm", x))


def ar_forward(
    params: ModelParams,
    config: ModelConfig,
    tokens: np.ndarray,
    enc: EncoderOutput,
    rng: np.random.Generator | None = None,
) -> Node:
    """
    Teacher-forced pass of the autoregressive decoder over all positions at once.

    Args:
        tokens (np.ndarray): Shifted targets [B, N] starting with the bos id.

    Returns:
        Node: Logits [B, N, V]; position i depends only on tokens <= i of the input
        (i.e. target tokens < i) and on the encoder output.

    Raises:
        UsageError: If a row does not start with bos.
    """
    if not config.uses_ar_decoder:
        raise ConfigError("The autoregressive decoder is disabled (n_ar_blocks=0).")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[1] == 0 or (tokens[:, 0] != BOS_ID).any():
        raise UsageError("Autoregressive decoder input must start with the bos id in every row.")
    key_mask = tokens != PAD_ID
    x = nx.dropout(_embed(params, config.ar_embedding_name, tokens, config), config.dropout, rng)
    for i in range(config.n_ar_blocks):
        x = _decoder_block(params, f"ar.{i}", x, key_mask, enc, config, causal=True, rng=rng)
    return _linear(params, "ar.out", _norm(params, "ar.norm", x))


@dataclass
class ARDecoderState:
    """Incremental decoding cache: the block inputs of every position fed so far, per layer."""

    tokens: np.ndarray
    layer_inputs: list[np.ndarray] = field(default_factory=list)

    def select(self, rows) -> "ARDecoderState":
        rows = np.asarray(rows, dtype=np.int64)
        return ARDecoderState(self.tokens[rows], [cache[rows] for cache in self.layer_inputs])


def ar_init_state(config: ModelConfig, batch_size: int) -> ARDecoderState:
    empty = np.zeros((batch_size, 0, config.d_model))
    return ARDecoderState(np.zeros((batch_size, 0), dtype=np.int64), [empty] * config.n_ar_blocks)


def ar_step(
    params: ModelParams,
    config: ModelConfig,
    state: ARDecoderState,
    next_tokens: np.ndarray,
    enc: EncoderOutput,
) -> tuple[np.ndarray, ARDecoderState]:
    """
    Feeds one token per row and returns the next-token log-probabilities [B, V] together
    with the extended cache. Equivalent to `ar_forward` on the full prefix.
    """
    next_tokens = np.asarray(next_tokens, dtype=np.int64).reshape(-1, 1)
    position = state.tokens.shape[1]
    with nx.no_grad():
        x = _embed(params, config.ar_embedding_name, next_tokens, config, offset=position)
        key_mask = np.ones((next_tokens.shape[0], position + 1), dtype=bool)
        inputs = []
        for i in range(config.n_ar_blocks):
            keys = np.concatenate([state.layer_inputs[i], x.value], axis=1)
            inputs.append(keys)
            x = _decoder_block(params, f"ar.{i}", x, key_mask, enc, config, causal=True, rng=None, keys=Node(keys))
        logits = _linear(params, "ar.out", _norm(params, "ar.norm", x))
        log_probs = nx.log_softmax(logits).value[:, 0, :]
    return log_probs, ARDecoderState(np.concatenate([state.tokens, next_tokens], axis=1), inputs)


def ctc_logits(params: ModelParams, config: ModelConfig, enc: EncoderOutput) -> Node:
    """
    Linear projection of the encoder states to the output vocabulary; class 0 is blank.

    Raises:
        ConfigError: If the CTC head is disabled.
    """
    if not config.use_ctc_head:
        raise ConfigError("The CTC head is disabled (use_ctc_head=false).")
    return _linear(params, "ctc", enc.states)


def predict_length(params: ModelParams, config: ModelConfig, enc: EncoderOutput) -> Node:
    """
    Classifies the target length from the time-averaged encoder states (padded frames
    excluded from the average).

    Returns:
        Node: Length logits [B, max_target_len + 1]; class index = target length.

    Raises:
        ConfigError: If the length predictor is disabled.
    """
    if not config.use_length_predictor:
        raise ConfigError("The length predictor is disabled (use_length_predictor=false).")
    counts = np.maximum(enc.mask.sum(axis=1, keepdims=True), 1).astype(np.float64)
    pooled = nx.mul(nx.sum(nx.mul(enc.states, enc.mask[:, :, None]), axis=1), 1.0 / counts)
    return _linear(params, "length", pooled)


def top_lengths(length_logits: np.ndarray, length_beam: int) -> list[int]:
    """Returns the `length_beam` most probable length classes of one utterance, best first, ties to the shorter."""
    order = np.argsort(-np.asarray(length_logits), kind="stable")
    return [int(n) for n in order[:length_beam]]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path: str | Path, meta: Mapping | None = None) -> None:
    """
    Writes parameters in the binary checkpoint format: magic, version, header length,
    JSON header (name/shape table and metadata), then little-endian f64 payloads in
    header order.
    """
    header = json.dumps(
        {"tensors": [[name, list(shape)] for name, shape in params.shapes().items()], "meta": dict(meta or {})},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for node in params.values():
            f.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())
    logging.debug(f"Saved checkpoint with {params.num_parameters()} parameters to {path}.")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """
    Reads a checkpoint written by `save_checkpoint`.

    Returns:
        tuple[ModelParams, dict]: The parameters and the header metadata.

    Raises:
        CheckpointFormatError: On a bad magic number, version or truncated payload.
    """
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic).")
    try:
        version, header_len = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}.")
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        tensors = [(str(name), [int(n) for n in shape]) for name, shape in header["tensors"]]
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}") from e

    offset = 12 + header_len
    arrays = {}
    for name, shape in tensors:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f"{path}: payload truncated at tensor '{name}'.")
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    return ModelParams.from_arrays(arrays), header.get("meta", {})


def load_model(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    """Loads a checkpoint together with the ModelConfig recorded in its metadata."""
    params, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise CheckpointFormatError(f"{path}: checkpoint metadata has no model_config.")
    config = ModelConfig.from_dict(meta["model_config"])
    expected = param_shapes(config)
    if {k: tuple(v) for k, v in expected.items()} != params.shapes():
        raise CheckpointFormatError(f"{path}: parameter table does not match its recorded model_config.")
    return params, config, meta
