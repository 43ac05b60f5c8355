import pytest

pytest.importorskip("matplotlib")

from scripts.plot_metrics import ROOT, plot  # noqa: E402


def test_charts_are_written_with_their_directory(tmp_path) -> None:
    records = [
        {"epoch": 1, "split": "train", "metric": "loss", "value": 2.0},
        {"epoch": 2, "split": "train", "metric": "loss", "value": 1.0},
        {"epoch": 1, "split": "dev", "metric": "doc_f1", "value": 0.4},
    ]
    ablations = [
        {"variant": "full", "flag": "", "best_epoch": "2", "metric": "doc_f1", "best_dev": "0.5"},
        {"variant": "no_class_prediction", "flag": "no_class_prediction", "best_epoch": "1", "metric": "doc_f1", "best_dev": "0.3"},
    ]
    output = tmp_path / "docs" / "visuals" / "training-charts.svg"

    plot(records, ablations, output)

    assert output.read_text(encoding="utf-8").lstrip().startswith("<?xml")
    assert (ROOT / "scripts" / "plot_metrics.py").is_file()
