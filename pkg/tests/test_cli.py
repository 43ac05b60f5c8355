import csv
import json

import yaml

from conftest import COOKING_FIXTURES, PROPARA_FIXTURES
from main import build_parser, run
from proctrack.data import gold_dump_rows, load_propara, read_dump, write_dump
from proctrack.evaluation import grids_from_dump
from proctrack.manifest import read_manifest

TINY = {
    "encoder": "tiny",
    "tiny_hidden": 16,
    "tiny_layers": 1,
    "tiny_heads": 2,
    "tiny_dropout": 0.0,
    "class_hidden": 8,
    "transition_hidden": 8,
    "batch_size": 4,
    "epochs": 1,
    "warmup_ratio": 0.0,
}


def _config_file(tmp_path, **extra) -> str:
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump({**TINY, **extra}), encoding="utf-8")
    return str(path)


def _train(tmp_path, *extra: str) -> int:
    return run(
        [
            "--log-level",
            "WARNING",
            "train",
            "--config",
            _config_file(tmp_path),
            "--data-dir",
            str(PROPARA_FIXTURES),
            "--output-dir",
            str(tmp_path / "run"),
            *extra,
        ]
    )


def test_parser_knows_every_command() -> None:
    parser = build_parser()
    args = parser.parse_args(["train", "--ablate", "no_seq_class", "--ablate", "full_context_input"])
    assert args.ablate == ["no_seq_class", "full_context_input"]
    args = parser.parse_args(["evaluate", "--pred", "p.tsv", "--gold", "g.tsv", "--out", "o"])
    assert args.dataset == "propara"


def test_train_writes_checkpoint_and_manifest(tmp_path, capsys) -> None:
    assert _train(tmp_path, "--seed", "3", "--ablate", "no_transition_prediction") == 0

    run_dir = tmp_path / "run"
    assert (run_dir / "best.pt").is_file()
    manifest = read_manifest(run_dir / "manifest.json")
    assert manifest.command == "train"
    assert manifest.seed == 3
    assert manifest.ablations == [{"given": "no_transition_prediction", "canonical": "no_transition_head"}]
    assert manifest.config["ablations"]["no_transition_head"] is True
    assert str(run_dir / "best.pt") in manifest.outputs
    assert manifest.wall_clock_s is not None
    assert "checkpoint=" in capsys.readouterr().out


def test_missing_data_exits_one_without_outputs(tmp_path, capsys) -> None:
    code = run(
        ["train", "--config", _config_file(tmp_path), "--data-dir", str(tmp_path / "absent"), "--output-dir", str(tmp_path / "run")]
    )
    assert code == 1
    assert not (tmp_path / "run").exists()
    assert "error:" in capsys.readouterr().err


def test_unknown_ablation_is_a_config_error(tmp_path, capsys) -> None:
    assert _train(tmp_path, "--ablate", "no_everything") == 2
    assert "Unknown ablation" in capsys.readouterr().err


def test_invalid_dataset_task_pair_is_a_config_error(tmp_path) -> None:
    assert _train(tmp_path, "--dataset", "npn-cooking", "--task", "document-level") == 2


def test_predict_dump_covers_every_entity_step(tmp_path) -> None:
    assert _train(tmp_path) == 0
    out = tmp_path / "pred"

    code = run(["predict", "--checkpoint", str(tmp_path / "run" / "best.pt"), "--split", "dev", "--out", str(out)])

    assert code == 0
    rows = read_dump(out / "predictions.dev.tsv")
    docs = load_propara(PROPARA_FIXTURES, "dev")
    assert len(rows) == sum(len(doc.entities) * doc.num_steps for doc in docs)
    assert set(grids_from_dump(rows)) == {doc.process_id for doc in docs}
    assert read_manifest(out / "manifest.json").command == "predict"


def test_predict_rejects_a_foreign_dataset(tmp_path) -> None:
    assert _train(tmp_path) == 0
    code = run(
        ["predict", "--checkpoint", str(tmp_path / "run" / "best.pt"), "--dataset", "npn-cooking", "--out", str(tmp_path / "p")]
    )
    assert code == 1


def test_predict_on_a_corrupt_checkpoint_exits_one(tmp_path, capsys) -> None:
    broken = tmp_path / "best.pt"
    broken.write_bytes(b"PK\x03\x04 truncated")

    code = run(["predict", "--checkpoint", str(broken), "--out", str(tmp_path / "p")])

    assert code == 1
    assert "not a readable checkpoint" in capsys.readouterr().err
    assert not (tmp_path / "p").exists()


def test_evaluate_gold_against_itself(tmp_path, capsys) -> None:
    gold = tmp_path / "gold.tsv"
    write_dump(gold_dump_rows(load_propara(PROPARA_FIXTURES, "dev")), gold)

    code = run(
        ["evaluate", "--pred", str(gold), "--data-dir", str(PROPARA_FIXTURES), "--split", "dev", "--out", str(tmp_path / "eval")]
    )

    assert code == 0
    assert "doc_f1=1.0000" in capsys.readouterr().out
    records = [json.loads(line) for line in (tmp_path / "eval" / "metrics.jsonl").read_text().splitlines()]
    assert {r["metric"]: r["value"] for r in records}["f1"] == 1.0
    assert "conversions" in (tmp_path / "eval" / "report.txt").read_text()


def test_evaluate_sentence_level_against_a_gold_dump(tmp_path, capsys) -> None:
    gold = tmp_path / "gold.tsv"
    write_dump(gold_dump_rows(load_propara(PROPARA_FIXTURES, "train")), gold)

    code = run(["evaluate", "--pred", str(gold), "--gold", str(gold), "--task", "sentence-level", "--out", str(tmp_path / "e")])

    assert code == 0
    assert "sent_macro=1.0000" in capsys.readouterr().out


def test_evaluate_reports_coverage_gaps(tmp_path, capsys) -> None:
    rows = gold_dump_rows(load_propara(PROPARA_FIXTURES, "dev"))
    pred = tmp_path / "pred.tsv"
    write_dump([row for row in rows if row.entity != "oxygen"], pred)

    code = run(["evaluate", "--pred", str(pred), "--data-dir", str(PROPARA_FIXTURES), "--out", str(tmp_path / "e")])

    assert code == 1
    assert "d2/oxygen" in capsys.readouterr().err


def test_ablate_suite_tabulates_variants(tmp_path, monkeypatch) -> None:
    monkeypatch.setattr("main.ABLATION_SUITE", [("full", None), ("no_sequential_class", "no_sequential_class")])

    code = run(
        ["ablate-suite", "--config", _config_file(tmp_path), "--data-dir", str(PROPARA_FIXTURES), "--output-dir", str(tmp_path / "suite")]
    )

    assert code == 0
    with (tmp_path / "suite" / "ablations.csv").open(newline="") as handle:
        table = list(csv.DictReader(handle))
    assert [row["variant"] for row in table] == ["full", "no_sequential_class"]
    assert table[1]["metric"] == "doc_f1"


def test_cooking_training_needs_a_sample_size(tmp_path, capsys) -> None:
    code = run(
        ["train", "--config", _config_file(tmp_path), "--dataset", "npn-cooking", "--data-dir", str(COOKING_FIXTURES), "--output-dir", str(tmp_path / "c")]
    )
    assert code == 2
    assert "sample_size" in capsys.readouterr().err
