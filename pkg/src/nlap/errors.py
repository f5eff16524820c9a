"""Exception types shared across the toolkit.

Each CLI-facing failure mode gets its own class so the command layer can
map it to a stable exit code without string matching.
"""

from __future__ import annotations


class NlapError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NlapError):
    """Invalid configuration value, flag combination, or config file."""


class IngestError(NlapError):
    """Frame sequence or detection input is missing, malformed, or inconsistent."""


class EmptyCropError(NlapError):
    """A detection box degenerates to less than one pixel after clamping."""


class EmptyDatasetError(NlapError):
    """Training was requested on a dataset that yields zero triplets."""


class CheckpointError(NlapError):
    """Checkpoint file is corrupt, truncated, or has an unsupported version."""


class EvalMismatchError(NlapError):
    """Score and label series disagree on video ids or lengths."""


class TrainingDivergedError(NlapError):
    """A non-finite loss value was produced during optimization."""
