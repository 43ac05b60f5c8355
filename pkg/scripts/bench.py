#!/usr/bin/env python3
"""Measure tracking throughput of the tiny backend and write a CSV."""

from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
import sys

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from proctrack.config import TrainConfig
from proctrack.data import load_propara
from proctrack.inference import track_documents
from proctrack.model import ProcessTracker
from proctrack.training import set_seed


@dataclass(frozen=True)
class BenchCase:
    name: str
    task: str
    ablation: str | None = None


CASES = [
    BenchCase("full", "document-level"),
    BenchCase("full", "sentence-level"),
    BenchCase("no_transition_head", "document-level", "no_transition_head"),
    BenchCase("no_seq_class", "document-level", "no_seq_class"),
    BenchCase("full_context_input", "document-level", "full_context_input"),
]


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict[str, object]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def run_track_bench(data_dir: Path, split: str, repeats: int, seed: int) -> list[dict[str, object]]:
    docs = load_propara(data_dir, split)
    contexts = sum(len(doc.entities) * doc.num_steps for doc in docs)
    rows: list[dict[str, object]] = []
    for case in CASES:
        config = TrainConfig(encoder="tiny", task=case.task, data_dir=data_dir, seed=seed)
        if case.ablation is not None:
            config = config.with_ablation(case.ablation)
        set_seed(seed)
        model = ProcessTracker.build(config, docs)
        # Warm-up pass.
        track_documents(model, docs, case.task)
        start = perf_counter()
        for _ in range(repeats):
            track_documents(model, docs, case.task)
        elapsed = perf_counter() - start
        per_run = elapsed / repeats
        rows.append(
            {
                "variant": case.name,
                "task": case.task,
                "processes": len(docs),
                "contexts": contexts,
                "elapsed_ms": round(per_run * 1000.0, 3),
                "contexts_per_s": round(contexts / max(per_run, 1e-9), 1),
                "processes_per_s": round(len(docs) / max(per_run, 1e-9), 2),
            }
        )
    return rows


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Benchmark tracking throughput")
    parser.add_argument(
        "--data-dir",
        default=str(ROOT / "tests" / "fixtures" / "propara"),
        help="ProPara grid directory",
    )
    parser.add_argument("--split", default="train", help="Split to track")
    parser.add_argument("--repeats", type=int, default=5, help="Timed passes per variant")
    parser.add_argument("--seed", type=int, default=13, help="Model initialisation seed")
    parser.add_argument(
        "--metrics-dir",
        default=str(ROOT / "docs" / "metrics"),
        help="Output directory for CSV metrics",
    )
    return parser.parse_args()


def main() -> None:
    args = parse_args()
    rows = run_track_bench(Path(args.data_dir), args.split, args.repeats, args.seed)
    path = Path(args.metrics_dir) / "track_metrics.csv"
    _write_csv(
        path,
        fieldnames=["variant", "task", "processes", "contexts", "elapsed_ms", "contexts_per_s", "processes_per_s"],
        rows=rows,
    )
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
