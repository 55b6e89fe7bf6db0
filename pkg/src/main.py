"""
This module serves as the command-line entry point. It exposes the full workflow as
sub-commands (gen-data, train, distill, decode, eval, bench, sweep), sets up logging,
merges presets, configuration files and flags into one validated run configuration, and
maps failures to exit codes: 0 on success, 1 on usage or configuration errors, 2 on
runtime errors.
"""

import os

# BLAS is pinned to one thread before numpy loads so timings are stable and reductions reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import multiprocessing  # noqa: E402
import sys  # noqa: E402
from logging.handlers import QueueListener  # noqa: E402
from pathlib import Path  # noqa: E402

from config import CONFIG_FILE, PRESETS, RunConfig  # noqa: E402
from decode import ALGORITHMS, DecodeConfig, decode_corpus  # noqa: E402
from errors import OrthrosError, UsageError  # noqa: E402
from eval_bench import SWEEPABLE, bench_decode, evaluate_decodes, rescore_overhead, sweep_decode  # noqa: E402
from logging_utils import (  # noqa: E402
    LOG_LEVEL_ENV,
    JsonLinesWriter,
    get_log_level,
    level_from_env,
    read_json_lines,
    setup_main_logging,
)
from model import load_model  # noqa: E402
from train import Trainer, seqkd_distill  # noqa: E402
from vocab_data import (  # noqa: E402
    Vocabulary,
    gen_corpus,
    load_dataset,
    save_dataset,
    save_vocab,
    split_corpus,
)

EFFECTIVE_CONFIG = "run_config.yaml"


class _ArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting so that bad arguments map to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named preset applied before --config")
    parser.add_argument(
        "--config",
        default=None,
        help=f"YAML configuration file (default: ./{CONFIG_FILE} if it exists)",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration value; repeatable",
    )


def _add_decode_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--algorithm", choices=ALGORITHMS, help="decoding algorithm (default: decode.algorithm)")
    parser.add_argument("--T", dest="iterations", type=int, help="Mask-Predict iterations")
    parser.add_argument("--l", dest="length_beam", type=int, help="length beam (Mask-Predict) or CTC beam width")
    parser.add_argument("--b", dest="beam_size", type=int, help="autoregressive beam width")
    parser.add_argument("--p-thres", dest="p_thres", type=float, help="CTC-CMLM masking threshold")
    parser.add_argument("--rescore", action=argparse.BooleanOptionalAction, default=None,
                        help="select candidates with the autoregressive decoder")
    parser.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None,
                        help="collapse repeated tokens of CMLM outputs")
    parser.add_argument("--update-all", dest="update_all", action=argparse.BooleanOptionalAction, default=None,
                        help="re-predict all positions every iteration")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="orthros", description="Desk-scale NAR speech translation toolkit.")
    parser.add_argument("--log-dir", default=None, help="also write logs to a timestamped file in this directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=2400, help="total number of samples")
    p.add_argument("--n-valid", type=int, default=200)
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--min-repeat", type=int, default=4)
    p.add_argument("--max-repeat", type=int, default=7)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--synonym-rate", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_config_args(p)
    p.add_argument("--data", required=True, help="directory with train.jsonl and valid.jsonl")
    p.add_argument("--out", required=True, help="run directory for checkpoints and the training log")
    p.add_argument("--seed", type=int, help="training seed (default: train.seed)")
    p.add_argument("--epochs", type=int, help="number of epochs (default: train.epochs)")

    p = sub.add_parser("distill", help="replace targets with an autoregressive teacher's beam outputs",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--data", required=True, help="dataset file to distill")
    p.add_argument("--out", required=True, help="distilled dataset file")
    p.add_argument("--beam", type=int, default=5)

    p = sub.add_parser("decode", help="decode a dataset", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_config_args(p)
    _add_decode_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="hypothesis JSON-lines file")
    p.add_argument("--workers", type=int, default=1, help="decode processes")

    p = sub.add_parser("eval", help="score decode output against references",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--hyps", required=True, help="hypothesis JSON-lines file")
    p.add_argument("--data", required=True, help="reference dataset file")
    p.add_argument("--out", required=True, help="EvalReport JSON file")
    p.add_argument("--csv", default=None, help="optional per-sentence CSV file")

    p = sub.add_parser("bench", help="time decoding against a baseline",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_config_args(p)
    _add_decode_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="BenchReport JSON file")
    p.add_argument("--baseline-checkpoint", default=None, help="checkpoint of the baseline (default: --checkpoint)")
    p.add_argument("--baseline-algorithm", choices=ALGORITHMS, default="ar_beam")
    p.add_argument("--baseline-b", dest="baseline_beam", type=int, default=4)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--limit", type=int, default=None, help="only time the first N utterances")
    p.add_argument("--rescore-overhead", action="store_true",
                   help="also compare one rescoring pass with one Mask-Predict iteration")

    p = sub.add_parser("sweep", help="sweep a decode parameter", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_config_args(p)
    _add_decode_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--param", choices=SWEEPABLE, required=True)
    p.add_argument("--values", type=int, nargs="+", required=True)
    p.add_argument("--out", required=True, help="CSV table")
    return parser


def _run_config(args: argparse.Namespace, extra: list[str] | None = None) -> RunConfig:
    path = args.config
    if path is None and Path(CONFIG_FILE).exists():
        path = CONFIG_FILE
    run_config = RunConfig.load(path, [*args.overrides, *(extra or [])], preset=args.preset)
    if LOG_LEVEL_ENV not in os.environ:
        logging.getLogger().setLevel(get_log_level(run_config.log_level))
    return run_config


def _decode_overrides(args: argparse.Namespace) -> list[str]:
    overrides = []
    for name in ("algorithm", "iterations", "length_beam", "beam_size", "p_thres", "rescore", "dedup", "update_all"):
        value = getattr(args, name, None)
        if value is not None:
            overrides.append(f"decode.{name}={str(value).lower() if isinstance(value, bool) else value}")
    return overrides


def _provenance_path(out: Path) -> Path:
    return out / EFFECTIVE_CONFIG if out.suffix == "" else out.with_name(f"{out.stem}.{EFFECTIVE_CONFIG}")


def cmd_gen_data(args: argparse.Namespace) -> None:
    samples = gen_corpus(
        seed=args.seed,
        n_samples=args.n,
        vocab_size=args.vocab_size,
        len_range=(args.min_len, args.max_len),
        repeat_range=(args.min_repeat, args.max_repeat),
        noise_std=args.noise_std,
        synonym_rate=args.synonym_rate,
    )
    train, valid, evaluation = split_corpus(samples, args.n_valid, args.n_eval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.jsonl")
    save_dataset(valid, out / "valid.jsonl")
    save_dataset(evaluation, out / "eval.jsonl")
    save_vocab(Vocabulary.build(args.vocab_size), out / "vocab.json")
    logging.info(f"Wrote {len(train)}/{len(valid)}/{len(evaluation)} train/valid/eval samples to {out}.")


def cmd_train(args: argparse.Namespace) -> None:
    extra = []
    if args.seed is not None:
        extra.append(f"train.seed={args.seed}")
    if args.epochs is not None:
        extra.append(f"train.epochs={args.epochs}")
    run_config = _run_config(args, extra)
    out = Path(args.out)
    run_config.dump(out / EFFECTIVE_CONFIG)
    data = Path(args.data)
    train = load_dataset(data / "train.jsonl")
    valid = load_dataset(data / "valid.jsonl") if (data / "valid.jsonl").exists() else []
    trainer = Trainer(run_config.model_config(), run_config.train_config(), run_config.loss_weights(), out)
    summary = trainer.fit(train, valid)
    logging.info(f"Best epochs {summary.best_epochs}; averaged model at {summary.averaged_checkpoint}.")


def cmd_distill(args: argparse.Namespace) -> None:
    params, model_config, meta = load_model(args.teacher)
    distilled = seqkd_distill(params, model_config, meta, load_dataset(args.data), beam=args.beam)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(distilled, args.out)
    logging.info(f"Wrote {len(distilled)} distilled samples to {args.out}.")


def cmd_decode(args: argparse.Namespace, log_queue: multiprocessing.Queue) -> None:
    run_config = _run_config(args, _decode_overrides(args))
    params, model_config, _ = load_model(args.checkpoint)
    samples = load_dataset(args.data)
    out = Path(args.out)
    run_config.dump(_provenance_path(out))
    records = decode_corpus(
        params, model_config, samples, run_config.decode_config(), workers=args.workers,
        log_queue=log_queue, log_level=logging.getLogger().level,
    )
    with JsonLinesWriter(out) as writer:
        for record in records:
            writer.write(record)
    logging.info(f"Wrote {len(records)} hypotheses to {out}.")


def cmd_eval(args: argparse.Namespace) -> None:
    report = evaluate_decodes(list(read_json_lines(args.hyps)), load_dataset(args.data))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.save(args.out)
    if args.csv:
        report.to_csv(args.csv)
    oracle = f", oracle {report.oracle_bleu:.2f}" if report.oracle_bleu is not None else ""
    logging.info(f"BLEU {report.corpus_bleu:.2f}, exact match {report.exact_match:.3f}{oracle}.")


def cmd_bench(args: argparse.Namespace) -> None:
    run_config = _run_config(args, _decode_overrides(args))
    params, model_config, _ = load_model(args.checkpoint)
    samples = load_dataset(args.data)[: args.limit]
    decode_config = run_config.decode_config()
    baseline = DecodeConfig(algorithm=args.baseline_algorithm, beam_size=args.baseline_beam)
    baseline_model = None
    if args.baseline_checkpoint:
        base_params, base_config, _ = load_model(args.baseline_checkpoint)
        baseline_model = (base_params, base_config)
    report = bench_decode(
        params, model_config, samples, decode_config, baseline, runs=args.runs, baseline_model=baseline_model
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_config.dump(_provenance_path(out))
    report.save(out)
    if args.rescore_overhead:
        overhead = rescore_overhead(params, model_config, samples, decode_config)
        logging.info(f"Rescoring costs {overhead['ratio']:.2%} of one Mask-Predict iteration.")


def cmd_sweep(args: argparse.Namespace) -> None:
    run_config = _run_config(args, _decode_overrides(args))
    params, model_config, _ = load_model(args.checkpoint)
    table = sweep_decode(params, model_config, load_dataset(args.data), run_config.decode_config(), args.param,
                         args.values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_config.dump(_provenance_path(out))
    table.to_csv(out, index=False)
    logging.info(f"Wrote sweep over {args.param} to {out}.")


def run(argv: list[str] | None = None) -> int:
    """
    Parses `argv`, runs the selected command and returns its exit code.
    """
    log_level = level_from_env()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        logging.error(f"Usage error: {e}")
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    log_queue = setup_main_logging(log_level, args.log_dir)
    # Create a listener for logs from decode worker processes.
    log_listener = QueueListener(log_queue, *logging.getLogger().handlers)
    log_listener.start()
    try:
        if args.command == "gen-data":
            cmd_gen_data(args)
        elif args.command == "train":
            cmd_train(args)
        elif args.command == "distill":
            cmd_distill(args)
        elif args.command == "decode":
            cmd_decode(args, log_queue)
        elif args.command == "eval":
            cmd_eval(args)
        elif args.command == "bench":
            cmd_bench(args)
        elif args.command == "sweep":
            cmd_sweep(args)
        return 0
    except UsageError as e:
        logging.error(f"{type(e).__name__}: {e}")
        return 1
    except (OrthrosError, OSError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return 2
    finally:
        log_listener.stop()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    multiprocessing.freeze_support()
    main()
