"""Command-line entry point for training, prediction and evaluation."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from proctrack.checkpoint import load_checkpoint
from proctrack.config import TrainConfig, canonical_ablation, load_config
from proctrack.constants import DATASETS, DEFAULT_SEED, SPLITS, TASKS
from proctrack.data import (
    load_location_vocab,
    load_npn_cooking,
    load_propara,
    read_dump,
    write_dump,
    write_text_atomic,
)
from proctrack.encoding import Document
from proctrack.errors import CheckpointMismatch, ConfigError, ProcTrackError
from proctrack.evaluation import (
    evaluate_task,
    format_report,
    gold_grids,
    grids_from_dump,
    headline,
    metric_values,
)
from proctrack.inference import track_documents
from proctrack.instrumentation import TrainingSnapshot
from proctrack.manifest import RunManifest
from proctrack.training import ABLATION_SUITE, fit, run_ablation_suite

logger = logging.getLogger("proctrack")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ABLATION_FIELDS = ["variant", "flag", "best_epoch", "metric", "best_dev"]


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML config file")
    parser.add_argument("--seed", type=int, help=f"Random seed (default {DEFAULT_SEED})")
    parser.add_argument("--encoder", choices=("pretrained", "tiny"), help="Encoder backend")
    parser.add_argument("--dataset", choices=DATASETS, help="Corpus")
    parser.add_argument("--task", choices=TASKS, help="Evaluation task used for model selection")
    parser.add_argument("--data-dir", type=Path, help="Directory holding the dataset splits")
    parser.add_argument("--output-dir", type=Path, help="Run directory")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--sample-size", type=int, help="npn-Cooking training recipes to sample")
    parser.add_argument(
        "--ablate",
        action="append",
        default=[],
        metavar="FLAG",
        help="Ablation flag (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Procedural text entity state tracker")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    subparsers = parser.add_subparsers(dest="command", required=True)

    train_parser = subparsers.add_parser("train", help="Train a tracker and keep the best dev checkpoint")
    _add_run_flags(train_parser)

    suite_parser = subparsers.add_parser("ablate-suite", help="Train every ablation variant and tabulate dev scores")
    _add_run_flags(suite_parser)

    predict_parser = subparsers.add_parser("predict", help="Decode a split with a trained checkpoint")
    predict_parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file (best.pt)")
    predict_parser.add_argument("--split", choices=SPLITS, default="dev", help="Split to decode")
    predict_parser.add_argument("--dataset", choices=DATASETS, help="Must match the checkpoint's dataset")
    predict_parser.add_argument("--task", choices=TASKS, help="Decoding task (default: the checkpoint's)")
    predict_parser.add_argument("--data-dir", type=Path, help="Dataset directory (default: the checkpoint's)")
    predict_parser.add_argument("--out", type=Path, help="Output directory")

    eval_parser = subparsers.add_parser("evaluate", help="Score a prediction dump against gold")
    eval_parser.add_argument("--pred", type=Path, required=True, help="Prediction dump TSV")
    gold = eval_parser.add_mutually_exclusive_group(required=True)
    gold.add_argument("--gold", type=Path, help="Gold dump TSV")
    gold.add_argument("--data-dir", type=Path, help="Dataset directory to read gold grids from")
    eval_parser.add_argument("--dataset", choices=DATASETS, default="propara", help="Corpus of --data-dir")
    eval_parser.add_argument("--split", choices=SPLITS, default="dev", help="Split of --data-dir")
    eval_parser.add_argument("--task", choices=TASKS, help="Scoring task (default follows the dataset)")
    eval_parser.add_argument("--out", type=Path, required=True, help="Output directory")

    return parser


def _default_task(dataset: str) -> str:
    return "cooking-location" if dataset == "npn-cooking" else "document-level"


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    overrides: dict[str, Any] = {
        "seed": args.seed,
        "encoder": args.encoder,
        "dataset": args.dataset,
        "task": args.task,
        "data_dir": args.data_dir,
        "output_dir": args.output_dir,
        "epochs": args.epochs,
        "sample_size": args.sample_size,
    }
    if args.dataset is not None and args.task is None:
        overrides["task"] = _default_task(args.dataset)
    return load_config(args.config, overrides, args.ablate)


def _ablation_records(names: Sequence[str]) -> list[dict[str, str]]:
    return [{"given": name, "canonical": canonical_ablation(name)} for name in names]


def load_documents(
    dataset: str,
    data_dir: str | Path,
    split: str,
    sample_size: int | None = None,
    seed: int = DEFAULT_SEED,
) -> list[Document]:
    if dataset == "propara":
        return load_propara(data_dir, split)
    load_location_vocab(data_dir)
    return load_npn_cooking(data_dir, split, sample_size, seed)


def _log_snapshot(snapshot: TrainingSnapshot) -> None:
    logger.info("%s", snapshot.describe())


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    manifest = RunManifest(
        command="train",
        config=config.model_dump(mode="json"),
        seed=config.seed,
        ablations=_ablation_records(args.ablate),
    )
    train_docs = load_documents(config.dataset, config.data_dir, "train", config.sample_size, config.seed)
    dev_docs = load_documents(config.dataset, config.data_dir, "dev", config.sample_size, config.seed)
    manifest.add_input(config.data_dir)

    result = fit(config, train_docs, dev_docs, on_snapshot=_log_snapshot)
    manifest.add_output(result.checkpoint)
    manifest.add_output(result.metrics_path)
    manifest.finish(config.output_dir)
    best = f"{result.best_value:.4f}" if result.best_value is not None else "n/a"
    print(f"best_epoch={result.best_epoch} best_dev={best} checkpoint={result.checkpoint}")
    return 0


def cmd_ablate_suite(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    manifest = RunManifest(
        command="ablate-suite",
        config=config.model_dump(mode="json"),
        seed=config.seed,
        ablations=_ablation_records(args.ablate),
    )
    train_docs = load_documents(config.dataset, config.data_dir, "train", config.sample_size, config.seed)
    dev_docs = load_documents(config.dataset, config.data_dir, "dev", config.sample_size, config.seed)
    manifest.add_input(config.data_dir)

    results = run_ablation_suite(config, train_docs, dev_docs, ABLATION_SUITE, on_snapshot=_log_snapshot)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=ABLATION_FIELDS, lineterminator="\n")
    writer.writeheader()
    for result in results:
        writer.writerow(
            {
                "variant": result.variant,
                "flag": result.flag or "",
                "best_epoch": result.best_epoch,
                "metric": result.metric or "",
                "best_dev": "" if result.best_value is None else round(result.best_value, 6),
            }
        )
        manifest.add_output(result.output_dir)
    table = Path(config.output_dir) / "ablations.csv"
    write_text_atomic(table, buffer.getvalue())
    manifest.add_output(table)
    manifest.finish(config.output_dir)
    print(buffer.getvalue(), end="")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    config = model.config
    if args.dataset is not None and args.dataset != config.dataset:
        raise CheckpointMismatch(f"{args.checkpoint} was trained on {config.dataset}, not {args.dataset}")
    task = args.task or config.task
    if (task == "cooking-location") != (config.dataset == "npn-cooking"):
        raise ConfigError(f"task {task!r} does not apply to dataset {config.dataset!r}")

    data_dir = args.data_dir or config.data_dir
    docs = load_documents(config.dataset, data_dir, args.split, config.sample_size, config.seed)
    manifest = RunManifest(command="predict", config=config.model_dump(mode="json"), seed=config.seed)
    manifest.add_input(args.checkpoint)
    manifest.add_input(data_dir)

    predictions = track_documents(model, docs, task)
    out_dir = args.out or Path(config.output_dir) / f"predict-{args.split}"
    dump = Path(out_dir) / f"predictions.{args.split}.tsv"
    write_dump([row for prediction in predictions for row in prediction.rows], dump)
    manifest.add_output(dump)
    manifest.finish(out_dir)
    print(f"wrote {dump}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    task = args.task or _default_task(args.dataset)
    pred = grids_from_dump(read_dump(args.pred))
    manifest = RunManifest(command="evaluate", config={"task": task, "dataset": args.dataset, "split": args.split})
    manifest.add_input(args.pred)
    if args.gold is not None:
        gold = grids_from_dump(read_dump(args.gold))
        manifest.add_input(args.gold)
    else:
        gold = gold_grids(load_documents(args.dataset, args.data_dir, args.split))
        manifest.add_input(args.data_dir)

    report = evaluate_task(task, pred, gold)
    text = format_report(report, f"{task} ({len(gold)} processes)")
    out_dir = Path(args.out)
    write_text_atomic(out_dir / "report.txt", text)
    lines = [
        json.dumps({"split": args.split, "task": task, "metric": name, "value": value}, sort_keys=True)
        for name, value in metric_values(report).items()
    ]
    write_text_atomic(out_dir / "metrics.jsonl", "\n".join(lines) + "\n")
    manifest.add_output(out_dir / "report.txt")
    manifest.add_output(out_dir / "metrics.jsonl")
    manifest.finish(out_dir)

    name, value = headline(report)
    print(text, end="")
    print(f"{name}={value:.4f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "ablate-suite": cmd_ablate_suite,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ProcTrackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(run())
