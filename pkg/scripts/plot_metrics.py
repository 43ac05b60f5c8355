#!/usr/bin/env python3
"""Render training curves and the ablation table from run metrics into SVG."""

from __future__ import annotations

import argparse
import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

ROOT = Path(__file__).resolve().parents[1]

PALETTE = {
    "bg": "#161616",
    "panel": "#1e1e1e",
    "grid": "#2b2b2b",
    "text": "#e6e2d8",
    "muted": "#bdb8ad",
    "gold": "#c6a25a",
    "red": "#7d2a2a",
    "green": "#4e7d49",
}


def _load_jsonl(path: Path) -> list[dict]:
    with path.open("r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def _load_csv(path: Path) -> list[dict[str, str]]:
    with path.open("r", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Plot training metrics")
    parser.add_argument("--run-dir", required=True, help="Run directory with metrics.jsonl (and ablations.csv)")
    parser.add_argument(
        "--output",
        default=str(ROOT / "docs" / "visuals" / "training-charts.svg"),
        help="Output SVG path",
    )
    return parser.parse_args()


def plot(records: list[dict], ablations: list[dict[str, str]], output: Path) -> None:
    plt.rcParams.update(
        {
            "font.family": "DejaVu Sans",
            "axes.facecolor": PALETTE["panel"],
            "figure.facecolor": PALETTE["bg"],
            "axes.edgecolor": PALETTE["grid"],
            "axes.labelcolor": PALETTE["text"],
            "xtick.color": PALETTE["muted"],
            "ytick.color": PALETTE["muted"],
            "text.color": PALETTE["text"],
            "axes.titlecolor": PALETTE["text"],
            "grid.color": PALETTE["grid"],
        }
    )

    panels = 2 if ablations else 1
    fig, axes = plt.subplots(1, panels, figsize=(8 * panels, 6), dpi=150, squeeze=False)
    fig.suptitle("Entity Tracker Training", fontsize=18, fontweight="bold", color=PALETTE["text"])

    series: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for record in records:
        if record["split"] == "train" and record["metric"] not in ("loss", "transition_accuracy"):
            continue
        series[f"{record['split']} {record['metric']}"].append((int(record["epoch"]), float(record["value"])))

    ax0 = axes[0][0]
    colors = [PALETTE["gold"], PALETTE["red"], PALETTE["green"], PALETTE["muted"]]
    for idx, (label, data) in enumerate(sorted(series.items())):
        data.sort(key=lambda x: x[0])
        ax0.plot([e for e, _ in data], [v for _, v in data], marker="o", linewidth=2.5, color=colors[idx % len(colors)], label=label)
    ax0.set_title("Loss and Dev Score by Epoch")
    ax0.set_xlabel("Epoch")
    ax0.grid(True, alpha=0.6)
    ax0.legend(frameon=False)

    if ablations:
        ax1 = axes[0][1]
        rows = [row for row in ablations if row["best_dev"]]
        names = [row["variant"] for row in rows]
        values = [float(row["best_dev"]) for row in rows]
        bar_colors = [PALETTE["gold"] if name == "full" else PALETTE["red"] for name in names]
        ax1.barh(names, values, color=bar_colors)
        ax1.invert_yaxis()
        ax1.set_title("Best Dev Score per Ablation")
        ax1.set_xlabel(rows[0]["metric"] if rows else "score")
        ax1.grid(True, axis="x", alpha=0.6)

    output.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    fig.savefig(output, format="svg")
    plt.close(fig)


def main() -> None:
    args = parse_args()
    run_dir = Path(args.run_dir)
    output = Path(args.output)

    records = _load_jsonl(run_dir / "metrics.jsonl") if (run_dir / "metrics.jsonl").is_file() else []
    # ablate-suite writes the table one level above each variant's run dir.
    tables = [path for path in (run_dir / "ablations.csv", run_dir.parent / "ablations.csv") if path.is_file()]
    ablations = _load_csv(tables[0]) if tables else []
    plot(records, ablations, output)
    print(f"wrote {output}")


if __name__ == "__main__":
    main()
