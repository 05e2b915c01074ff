"""Input coercion shared by the estimator layer."""

from __future__ import annotations

from .data import DrawingRecord, ProcessedRecord
from .errors import ConfigError
from .splines import SplineStroke


def as_drawings(X) -> list:
    """Coerce a sequence of processed records or bare stroke lists into
    spline drawings."""
    drawings = []
    for i, item in enumerate(X):
        if isinstance(item, ProcessedRecord):
            drawings.append(item.strokes)
        elif isinstance(item, (list, tuple)) and all(isinstance(s, SplineStroke) for s in item):
            drawings.append(list(item))
        else:
            raise ConfigError(
                f"item {i} is {type(item).__name__}, expected ProcessedRecord or a list of SplineStroke"
            )
    return drawings


def as_records(X) -> list[DrawingRecord]:
    records = []
    for i, item in enumerate(X):
        if not isinstance(item, DrawingRecord):
            raise ConfigError(f"item {i} is {type(item).__name__}, expected DrawingRecord")
        records.append(item)
    return records
