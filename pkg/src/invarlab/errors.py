"""Exception hierarchy for invarlab.

Every error carries an ``error_code`` (stable string used in reports and the
audit trail) and an ``exit_code`` used by the CLI.
"""

from typing import Any


class InvarlabError(Exception):
    """Base class for all invarlab errors."""

    error_code = "INVARLAB_ERROR"
    exit_code = 1

    def to_dict(self) -> dict[str, Any]:
        return {"status": "error", "error_code": self.error_code, "message": str(self)}


# Configuration (exit 2)

class ConfigError(InvarlabError):
    """Raised when a config value is missing, unknown, mistyped or out of range."""

    error_code = "CONFIG_INVALID"
    exit_code = 2

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key

    def to_dict(self) -> dict[str, Any]:
        data = super().to_dict()
        data["key"] = self.key
        return data


# Input and geometry (exit 3)

class ParseError(InvarlabError):
    """Raised when a file or spec string cannot be parsed."""

    error_code = "PARSE_ERROR"
    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BoundsError(InvarlabError):
    """Raised when a crop rectangle leaves the image."""

    error_code = "OUT_OF_BOUNDS"
    exit_code = 3


class GeometryError(InvarlabError):
    """Raised when a crop policy cannot produce a valid crop even after fallback."""

    error_code = "IMPOSSIBLE_GEOMETRY"
    exit_code = 3


class ShapeError(InvarlabError):
    """Raised when an image or vector does not have the expected shape."""

    error_code = "SHAPE_MISMATCH"
    exit_code = 3


class MissingEmbedding(InvarlabError):
    """Raised when a file-backed store has no vector for a sample id."""

    error_code = "MISSING_EMBEDDING"
    exit_code = 3

    def __init__(self, sample_id: str):
        super().__init__(f"No stored embedding for id {sample_id!r}")
        self.sample_id = sample_id


class DuplicateId(InvarlabError):
    """Raised when an embedding store lists the same id twice."""

    error_code = "DUPLICATE_ID"
    exit_code = 3


class UnknownClass(InvarlabError):
    """Raised when a class is not a leaf of the taxonomy."""

    error_code = "UNKNOWN_CLASS"
    exit_code = 3


class CatalogMismatch(InvarlabError):
    """Raised when two result sets do not cover the same transform catalog."""

    error_code = "CATALOG_MISMATCH"
    exit_code = 3


class IncompleteGrid(InvarlabError):
    """Raised when (class, transform) cells are missing from an aggregation."""

    error_code = "INCOMPLETE_GRID"
    exit_code = 3

    def __init__(self, message: str, gaps: list | None = None):
        super().__init__(message)
        self.gaps = gaps or []


class InsufficientSamples(InvarlabError):
    """Raised when a metric gets fewer samples than it needs."""

    error_code = "INSUFFICIENT_SAMPLES"
    exit_code = 3


class EmptyUnion(InvarlabError):
    """Raised when the IoU of two empty lists is requested."""

    error_code = "EMPTY_UNION"
    exit_code = 3


# Numerics (exit 4)

class NumericError(InvarlabError):
    """Raised on non-finite inputs or results."""

    error_code = "NUMERIC_ERROR"
    exit_code = 4


class SingularTransform(NumericError):
    """Raised when a warp matrix cannot be inverted."""

    error_code = "SINGULAR_TRANSFORM"


class DegenerateEmbedding(NumericError):
    """Raised when an embedding has zero norm."""

    error_code = "DEGENERATE_EMBEDDING"

    def __init__(self, sample_id: str):
        super().__init__(f"Embedding of {sample_id!r} has zero norm")
        self.sample_id = sample_id


class DegenerateBaseline(NumericError):
    """Raised when the random-pair baseline distance is too small to normalize by."""

    error_code = "DEGENERATE_BASELINE"


class TrainingDiverged(NumericError):
    """Raised when the training loss becomes non-finite."""

    error_code = "TRAINING_DIVERGED"

    def __init__(self, message: str, snapshot: dict[str, Any]):
        super().__init__(message)
        self.snapshot = snapshot


# Capabilities (exit 5)

class CapabilityError(InvarlabError):
    """Raised when a provider lacks a requested capability (e.g. a classifier head)."""

    error_code = "CAPABILITY_MISSING"
    exit_code = 5
