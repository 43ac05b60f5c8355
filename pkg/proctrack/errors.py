"""Exception hierarchy shared by every tracker module."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable


class ProcTrackError(Exception):
    """Base class for all library errors."""


class InconsistentTransition(ProcTrackError, ValueError):
    pass


class ShapeMismatch(ProcTrackError, ValueError):
    pass


class ParseError(ProcTrackError, ValueError):
    def __init__(self, path: str | Path, line: int, reason: str) -> None:
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


class MissingSplit(ProcTrackError, FileNotFoundError):
    pass


class EmptyAfterFilter(ProcTrackError, ValueError):
    pass


class UngroundableSpan(ProcTrackError, ValueError):
    pass


class ContextOverflow(ProcTrackError, ValueError):
    pass


class EncoderFailure(ProcTrackError, RuntimeError):
    pass


class ModelNumericsError(ProcTrackError, ArithmeticError):
    pass


class MaskMismatch(ProcTrackError, ValueError):
    pass


class EmptySequence(ProcTrackError, ValueError):
    pass


class TargetMismatch(ProcTrackError, ValueError):
    pass


class DivergenceError(ProcTrackError, ArithmeticError):
    def __init__(self, message: str, checkpoint: Path | None = None) -> None:
        self.checkpoint = checkpoint
        super().__init__(message if checkpoint is None else f"{message} (last good checkpoint: {checkpoint})")


class NoValidSpan(ProcTrackError, ValueError):
    pass


class CoverageMismatch(ProcTrackError, ValueError):
    def __init__(self, missing: Iterable[object] = (), extra: Iterable[object] = ()) -> None:
        self.missing = sorted(str(item) for item in missing)
        self.extra = sorted(str(item) for item in extra)
        parts = []
        if self.missing:
            parts.append("missing from predictions: " + ", ".join(self.missing))
        if self.extra:
            parts.append("not in gold: " + ", ".join(self.extra))
        super().__init__("; ".join(parts) or "coverage mismatch")


class UnknownClassId(ProcTrackError, ValueError):
    pass


class CheckpointMismatch(ProcTrackError, ValueError):
    pass


class ConfigError(ProcTrackError, ValueError):
    pass
