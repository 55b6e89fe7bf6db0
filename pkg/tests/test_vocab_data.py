"""
This module contains unit tests for `vocab_data`: the vocabulary, the synthetic corpus
generator, dataset and vocabulary files, and batch padding.
"""

import numpy as np
import pytest

from errors import ConfigError, UsageError
from vocab_data import (
    BLANK_ID,
    MASK_ID,
    PAD_ID,
    DatasetParseError,
    Sample,
    Vocabulary,
    count_adjacent_repeats,
    gen_corpus,
    load_dataset,
    load_vocab,
    pad_batch,
    save_dataset,
    save_vocab,
    split_corpus,
    translate_source,
)


@pytest.fixture
def corpus():
    return gen_corpus(seed=7, n_samples=20)


class TestVocabulary:
    def test_build_layout(self):
        vocab = Vocabulary.build(10)
        assert len(vocab) == 10
        assert vocab.blank_id == BLANK_ID == 0
        assert vocab.tokens[vocab.mask_id] == "<mask>"
        np.testing.assert_array_equal(vocab.content_ids(), np.arange(5, 10))
        assert vocab.to_string([5, 6]) == "w5 w6"

    def test_too_small(self):
        with pytest.raises(ConfigError):
            Vocabulary.build(5)

    def test_duplicate_special_ids(self):
        with pytest.raises(ConfigError, match="distinct"):
            Vocabulary(tokens=tuple(f"t{i}" for i in range(8)), pad_id=1, mask_id=1)

    def test_file_round_trip(self, tmp_path):
        vocab = Vocabulary.build(12)
        save_vocab(vocab, tmp_path / "vocab.json")
        assert load_vocab(tmp_path / "vocab.json") == vocab

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "vocab.json"
        path.write_text('{"tokens": ["a"]}', encoding="utf-8")
        with pytest.raises(DatasetParseError):
            load_vocab(path)


class TestTranslation:
    def test_substitute_then_swap_bigram(self):
        permutation = np.arange(10)
        permutation[5], permutation[6] = 8, 9
        assert translate_source([5, 6], permutation) == [9, 8]

    def test_odd_length_final_token_stays(self):
        permutation = np.arange(10)
        assert translate_source([5, 6, 7], permutation) == [6, 5, 7]

    @pytest.mark.parametrize("tokens, expected", [([], 0), ([5], 0), ([5, 5, 6], 1), ([5, 5, 5, 6, 6], 3)])
    def test_count_adjacent_repeats(self, tokens, expected):
        assert count_adjacent_repeats(tokens) == expected


class TestGenCorpus:
    def test_deterministic(self):
        assert gen_corpus(seed=3, n_samples=5) == gen_corpus(seed=3, n_samples=5)

    def test_seed_changes_corpus(self):
        assert gen_corpus(seed=3, n_samples=5) != gen_corpus(seed=4, n_samples=5)

    def test_byte_identical_files(self, tmp_path):
        save_dataset(gen_corpus(seed=7, n_samples=10), tmp_path / "a.jsonl")
        save_dataset(gen_corpus(seed=7, n_samples=10), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_frame_length_margin(self, corpus):
        for sample in corpus:
            n = len(sample.tgt)
            assert sample.frames.shape[0] >= 4 * n + 4
            assert sample.frames.shape[0] >= 4 * (n + count_adjacent_repeats(sample.tgt)) + 4

    def test_token_ranges(self, corpus):
        for sample in corpus:
            assert 3 <= len(sample.src) <= 12
            assert len(sample.tgt) == len(sample.src)
            assert min(sample.src + sample.tgt) >= 5
            assert max(sample.src + sample.tgt) < 32
            assert sample.frames.shape[1] == 16

    def test_mapping_is_consistent_across_samples(self, corpus):
        # The same source sentence always maps to the same target.
        mapping = {}
        for sample in corpus:
            key = tuple(sample.src)
            assert mapping.setdefault(key, sample.tgt) == sample.tgt
        # Per-token substitution is a fixed function: recover it from even-length pairs.
        table = {}
        for sample in corpus:
            swapped = list(sample.tgt)
            for i in range(0, len(swapped) - 1, 2):
                swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
            for s, t in zip(sample.src, swapped, strict=True):
                assert table.setdefault(s, t) == t

    def test_noise_free_single_repeat(self):
        samples = gen_corpus(seed=1, n_samples=4, noise_std=0.0, repeat_range=(1, 1), pad_silence=False)
        for sample in samples:
            assert sample.frames.shape[0] == len(sample.src)
        # Equal source tokens produce identical frames.
        by_token = {}
        for sample in samples:
            for token, frame in zip(sample.src, sample.frames, strict=True):
                np.testing.assert_array_equal(by_token.setdefault(token, frame), frame)

    def test_synonyms_change_some_targets(self):
        plain = gen_corpus(seed=5, n_samples=30)
        noisy = gen_corpus(seed=5, n_samples=30, synonym_rate=1.0)
        assert noisy[0].src == plain[0].src
        assert len(noisy[0].tgt) == len(plain[0].tgt)
        assert [s.tgt for s in noisy] != [s.tgt for s in plain]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"vocab_size": 7},
            {"len_range": (0, 5)},
            {"len_range": (3, 65)},
            {"repeat_range": (0, 3)},
            {"synonym_rate": 1.5},
        ],
    )
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ConfigError):
            gen_corpus(seed=1, n_samples=2, **kwargs)


class TestDatasetFiles:
    def test_round_trip(self, tmp_path, corpus):
        save_dataset(corpus, tmp_path / "data.jsonl")
        assert load_dataset(tmp_path / "data.jsonl") == corpus

    def test_empty_list(self, tmp_path):
        save_dataset([], tmp_path / "empty.jsonl")
        assert (tmp_path / "empty.jsonl").read_text(encoding="utf-8") == ""
        assert load_dataset(tmp_path / "empty.jsonl") == []

    def test_truncated_file_reports_line(self, tmp_path, corpus):
        path = tmp_path / "data.jsonl"
        save_dataset(corpus[:3], path)
        text = path.read_text(encoding="utf-8")
        path.write_text(text[: len(text) - 40], encoding="utf-8")
        with pytest.raises(DatasetParseError) as excinfo:
            load_dataset(path)
        assert excinfo.value.line_number == 3

    def test_missing_field(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"id": 0, "frames": [[0.0]], "tgt": [5]}\n', encoding="utf-8")
        with pytest.raises(DatasetParseError) as excinfo:
            load_dataset(path)
        assert excinfo.value.line_number == 1

    def test_split(self, corpus):
        train, valid, evaluation = split_corpus(corpus, 3, 2)
        assert (len(train), len(valid), len(evaluation)) == (15, 3, 2)
        assert train + valid + evaluation == corpus

    def test_split_too_large(self, corpus):
        with pytest.raises(UsageError):
            split_corpus(corpus, 10, 10)


class TestPadBatch:
    def _sample(self, sample_id, n_frames, tgt):
        return Sample(id=sample_id, frames=np.ones((n_frames, 4)), tgt=tgt, src=list(tgt))

    def test_single_sample_has_no_padding(self):
        batch = pad_batch([self._sample(0, 6, [5, 6, 7])], PAD_ID)
        assert batch.frames.shape == (1, 6, 4)
        np.testing.assert_array_equal(batch.tgt, [[5, 6, 7]])
        np.testing.assert_array_equal(batch.tgt_lengths, [3])

    def test_padding_values(self):
        batch = pad_batch([self._sample(0, 3, [5, 6]), self._sample(1, 5, [5, 6, 7, 8, 9])], PAD_ID)
        assert batch.tgt.shape == (2, 5)
        assert (batch.tgt[0] == PAD_ID).sum() == 3
        np.testing.assert_array_equal(batch.tgt_lengths, [2, 5])
        np.testing.assert_array_equal(batch.frame_lengths, [3, 5])
        np.testing.assert_array_equal(batch.frames[0, 3:], 0.0)
        assert len(batch) == 2
        assert batch.ids == [0, 1]

    def test_empty_target_keeps_a_column(self):
        batch = pad_batch([self._sample(0, 4, [])], PAD_ID)
        assert batch.tgt.shape == (1, 1)
        assert batch.tgt[0, 0] == PAD_ID
        assert batch.tgt_lengths[0] == 0
        assert MASK_ID not in batch.tgt

    def test_empty_list(self):
        with pytest.raises(UsageError):
            pad_batch([], PAD_ID)
