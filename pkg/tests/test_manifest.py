import json

from proctrack import __version__
from proctrack.manifest import MANIFEST_NAME, RunManifest, read_manifest


def test_manifest_records_run_and_round_trips(tmp_path) -> None:
    manifest = RunManifest(
        command="train",
        config={"seed": 5},
        seed=5,
        ablations=[{"given": "no_sequential_class", "canonical": "no_seq_class"}],
    )
    manifest.add_input(tmp_path / "data")
    manifest.add_output(tmp_path / "best.pt")

    path = manifest.finish(tmp_path / "run")

    assert path == tmp_path / "run" / MANIFEST_NAME
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert raw["code_version"] == __version__
    assert raw["inputs"] == [str(tmp_path / "data")]
    assert raw["wall_clock_s"] >= 0.0
    assert raw["finished_at"] >= raw["started_at"]
    assert "_clock" not in raw
    assert read_manifest(path).model_dump() == raw
