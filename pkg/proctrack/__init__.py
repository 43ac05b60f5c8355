"""Entity state tracking over procedural text."""

__version__ = "0.1.0"
