"""
This module contains tests for the command-line entry point: exit codes, deterministic
corpus generation, evaluation of stored hypotheses, and one end-to-end desk run.
"""

import logging

import pytest

from eval_bench import EvalReport
from logging_utils import JsonLinesWriter, read_json_lines
from main import EFFECTIVE_CONFIG, run
from vocab_data import load_dataset

TINY_MODEL = [
    "model.d_model=16",
    "model.d_ff=32",
    "model.n_heads=2",
    "model.n_enc_blocks=1",
    "model.n_dec_blocks=1",
    "model.n_text_blocks=1",
    "model.dropout=0.0",
]


@pytest.fixture(autouse=True)
def isolated_run(tmp_path, monkeypatch):
    """
    Runs every test in an empty directory, so no config.yaml is picked up, and removes the
    handlers each `run` call installs on the root logger.
    """
    monkeypatch.chdir(tmp_path)
    root = logging.getLogger()
    saved = list(root.handlers)
    level = root.level

    yield

    for handler in root.handlers:
        if handler not in saved:
            handler.close()
    root.handlers[:] = saved
    root.setLevel(level)


def _gen_data(out, *extra):
    argv = ["gen-data", "--n", "24", "--n-valid", "4", "--n-eval", "4", "--max-len", "5", "--out", str(out)]
    return run([*argv, *extra])


def test_help_exits_cleanly():
    assert run(["--help"]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["translate"],
        ["gen-data"],
        ["decode", "--preset", "big", "--checkpoint", "m.ckpt", "--data", "d.jsonl", "--out", "h.jsonl"],
        ["gen-data", "--n", "many", "--out", "data"],
    ],
)
def test_usage_errors(argv):
    assert run(argv) == 1


def test_gen_data_is_deterministic(tmp_path):
    assert _gen_data(tmp_path / "a") == 0
    assert _gen_data(tmp_path / "b") == 0
    for name in ("train.jsonl", "valid.jsonl", "eval.jsonl", "vocab.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(load_dataset(tmp_path / "a" / "train.jsonl")) == 16
    assert len(load_dataset(tmp_path / "a" / "eval.jsonl")) == 4


def test_gen_data_seed_changes_the_corpus(tmp_path):
    assert _gen_data(tmp_path / "a") == 0
    assert _gen_data(tmp_path / "b", "--seed", "8") == 0
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "b" / "train.jsonl").read_bytes()


def test_gen_data_hold_out_too_large(tmp_path):
    assert run(["gen-data", "--n", "4", "--n-valid", "2", "--n-eval", "2", "--out", str(tmp_path / "d")]) == 1


def test_invalid_override_is_a_usage_error(tmp_path):
    assert _gen_data(tmp_path / "data") == 0
    argv = ["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run"), "--set", "model.width=3"]
    assert run(argv) == 1


def test_missing_input_is_a_runtime_error(tmp_path):
    argv = ["eval", "--hyps", str(tmp_path / "none.jsonl"), "--data", str(tmp_path / "none.jsonl"),
            "--out", str(tmp_path / "eval.json")]
    assert run(argv) == 2


def test_eval_of_reference_hypotheses(tmp_path):
    """
    Tests that scoring the references against themselves gives a perfect report and CSV.
    """
    assert _gen_data(tmp_path / "data") == 0
    references = load_dataset(tmp_path / "data" / "eval.jsonl")
    with JsonLinesWriter(tmp_path / "hyps.jsonl") as writer:
        for sample in references:
            writer.write({"id": sample.id, "hyp": sample.tgt})

    argv = ["eval", "--hyps", str(tmp_path / "hyps.jsonl"), "--data", str(tmp_path / "data" / "eval.jsonl"),
            "--out", str(tmp_path / "eval.json"), "--csv", str(tmp_path / "eval.csv")]
    assert run(argv) == 0
    report = EvalReport.load(tmp_path / "eval.json")
    assert report.corpus_bleu == pytest.approx(100.0)
    assert report.exact_match == 1.0
    assert (tmp_path / "eval.csv").exists()


@pytest.mark.slow
def test_desk_run_end_to_end(tmp_path):
    """
    Tests generate, train, decode and evaluate with a tiny Orthros-CMLM model.
    """
    data, run_dir = tmp_path / "data", tmp_path / "run"
    assert _gen_data(data) == 0

    argv = ["train", "--preset", "orthros_cmlm_desk", "--data", str(data), "--out", str(run_dir), "--epochs", "2"]
    for override in [*TINY_MODEL, "train.batch_size=8", "train.n_avg=2"]:
        argv += ["--set", override]
    assert run(argv) == 0
    for name in ("epoch001.ckpt", "epoch002.ckpt", "model.avg.ckpt", "train_log.jsonl", EFFECTIVE_CONFIG):
        assert (run_dir / name).exists()

    hyps = tmp_path / "hyps.jsonl"
    argv = ["decode", "--preset", "orthros_cmlm_desk", "--checkpoint", str(run_dir / "model.avg.ckpt"),
            "--data", str(data / "eval.jsonl"), "--out", str(hyps), "--T", "2", "--l", "2"]
    assert run(argv) == 0
    records = list(read_json_lines(hyps))
    assert [r["id"] for r in records] == [s.id for s in load_dataset(data / "eval.jsonl")]
    assert all(r["algorithm"] == "mask_predict" for r in records)
    assert (tmp_path / f"hyps.{EFFECTIVE_CONFIG}").exists()

    argv = ["eval", "--hyps", str(hyps), "--data", str(data / "eval.jsonl"), "--out", str(tmp_path / "eval.json")]
    assert run(argv) == 0
    report = EvalReport.load(tmp_path / "eval.json")
    assert 0.0 <= report.corpus_bleu <= 100.0
    assert report.oracle_bleu is not None
