"""Training progress snapshots and throttled emission."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from time import perf_counter
from typing import Callable


@dataclass(slots=True)
class TrainingSnapshot:
    epoch: int
    step: int
    total_steps: int
    loss: float
    terms: dict[str, float] = field(default_factory=dict)
    learning_rate: float = 0.0
    instances_per_s: float = 0.0
    elapsed_s: float = 0.0

    @property
    def progress(self) -> float:
        return self.step / self.total_steps if self.total_steps else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def describe(self) -> str:
        terms = " ".join(f"{name}={value:.4f}" for name, value in self.terms.items())
        return (
            f"epoch {self.epoch} step {self.step}/{self.total_steps} loss {self.loss:.4f} "
            f"{terms} lr {self.learning_rate:.2e} ({self.instances_per_s:.1f} inst/s)"
        ).replace("  ", " ")


class SnapshotThrottle:
    """Emit snapshots at a bounded rate; forced emissions always go through."""

    def __init__(self, interval_ms: int, callback: Callable[[TrainingSnapshot], None] | None) -> None:
        self.interval = max(1, interval_ms) / 1000.0
        self.callback = callback
        self._next_emit_at = 0.0

    def emit(self, snapshot: TrainingSnapshot, force: bool = False) -> bool:
        if self.callback is None:
            return False

        now = perf_counter()
        if force or now >= self._next_emit_at:
            self.callback(snapshot)
            self._next_emit_at = now + self.interval
            return True
        return False
