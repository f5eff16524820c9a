"""Object-centric video anomaly detection by next-local-appearance prediction.

A generator learns to predict how each detected object will look a few
frames ahead; regions whose future appearance it cannot predict are scored
as anomalous.  The package covers the full loop: frame/detection ingest,
appearance-triplet extraction, adversarial training, scoring, frame-level
ROC evaluation, and a deterministic synthetic benchmark.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    EmptyCropError,
    EmptyDatasetError,
    EvalMismatchError,
    IngestError,
    NlapError,
    TrainingDivergedError,
)

__all__ = [
    "__version__",
    "NlapError",
    "ConfigError",
    "IngestError",
    "EmptyCropError",
    "EmptyDatasetError",
    "CheckpointError",
    "EvalMismatchError",
    "TrainingDivergedError",
]
