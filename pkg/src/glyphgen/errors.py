"""Shared exception types.

Every error raised on a documented contract violation derives from
``GlyphgenError`` so callers (and the CLI) can map failures to a single
machine-readable category line.
"""

from __future__ import annotations


class GlyphgenError(Exception):
    """Base class for all package-specific failures."""

    category = "runtime"


class DimensionError(GlyphgenError):
    """Array shapes do not satisfy an operation's contract."""

    category = "shape"


class GradModeError(GlyphgenError):
    """Backward pass requested on a graph that cannot provide it."""

    category = "autodiff"


class DegenerateStrokeError(GlyphgenError):
    """Stroke has fewer than two distinct points, no curve exists."""

    category = "degenerate"


class EmptyDrawingError(GlyphgenError):
    """Every stroke of a drawing was filtered out during preprocessing."""

    category = "degenerate"


class CorpusFormatError(GlyphgenError):
    """A corpus file violates the NDJSON schema.

    Carries the 1-based line number of the offending record.
    """

    category = "schema"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(GlyphgenError):
    """A configuration value violates its documented range or type."""

    category = "config"


class CheckpointError(GlyphgenError):
    """Checkpoint file is malformed, truncated, or incompatible."""

    category = "checkpoint"


class ConfigMismatchError(CheckpointError):
    """Checkpoint was produced by a different model configuration."""

    category = "checkpoint"


class DegenerateDataError(GlyphgenError):
    """Statistical routine received data with no usable signal."""

    category = "degenerate"


class TrainingDivergedError(GlyphgenError):
    """Loss became non-finite; training stopped at the last good state."""

    category = "training"
