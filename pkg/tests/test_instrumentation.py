from proctrack.instrumentation import SnapshotThrottle, TrainingSnapshot


def _snapshot(step: int) -> TrainingSnapshot:
    return TrainingSnapshot(epoch=1, step=step, total_steps=4, loss=0.5, terms={"transition": 0.25})


def test_snapshot_progress_and_description() -> None:
    snapshot = _snapshot(1)
    assert snapshot.progress == 0.25
    assert snapshot.to_dict()["terms"] == {"transition": 0.25}
    assert "transition=0.2500" in snapshot.describe()
    assert TrainingSnapshot(epoch=1, step=0, total_steps=0, loss=0.0).progress == 0.0


def test_throttle_limits_emission_rate_but_honours_force() -> None:
    received: list[TrainingSnapshot] = []
    throttle = SnapshotThrottle(60_000, received.append)

    assert throttle.emit(_snapshot(1))
    assert not throttle.emit(_snapshot(2))
    assert throttle.emit(_snapshot(3), force=True)
    assert [snapshot.step for snapshot in received] == [1, 3]


def test_throttle_without_callback_is_silent() -> None:
    assert not SnapshotThrottle(10, None).emit(_snapshot(1), force=True)
