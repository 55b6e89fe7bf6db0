"""
Shared fixtures: a tiny model configuration, parameters drawn at a visible scale, and
small padded batches from the synthetic corpus.
"""

import numpy as np
import pytest

from model import ModelConfig, ModelParams, param_shapes
from vocab_data import PAD_ID, Sample, gen_corpus, pad_batch

TINY = ModelConfig(
    d_model=16,
    d_ff=32,
    n_heads=2,
    n_enc_blocks=1,
    n_dec_blocks=1,
    n_ar_blocks=1,
    n_text_blocks=1,
    conv_kernel=3,
    max_target_len=8,
    dropout=0.0,
    use_ctc_head=True,
)


def random_params(config: ModelConfig, seed: int = 0, std: float = 0.3) -> ModelParams:
    """Parameters with every entry drawn at a scale where perturbations are clearly visible."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            arrays[name] = 1.0 + 0.1 * rng.normal(size=shape)
        else:
            arrays[name] = rng.normal(0.0, std, size=shape)
    return ModelParams.from_arrays(arrays)


def make_batch(frame_counts, seed=0, tgt_len=3):
    rng = np.random.default_rng(seed)
    tokens = list(range(5, 5 + tgt_len))
    samples = [
        Sample(id=i, frames=rng.normal(size=(u, 16)), tgt=list(tokens), src=list(tokens))
        for i, u in enumerate(frame_counts)
    ]
    return pad_batch(samples, PAD_ID)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params():
    return random_params(TINY)


@pytest.fixture
def tiny_samples():
    return gen_corpus(seed=0, n_samples=8, len_range=(2, 6))


@pytest.fixture
def tiny_batch(tiny_samples):
    return pad_batch(tiny_samples[:3], PAD_ID)
