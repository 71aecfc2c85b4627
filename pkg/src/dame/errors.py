"""Exception types shared across the package."""


class DameError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVectorError(DameError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class NonFiniteError(DameError):
    """A computation produced or encountered NaN/Inf."""


class ShapeMismatchError(DameError):
    """Array shapes are inconsistent with the configured dimensions."""


class InvalidPrefixError(DameError):
    """A prefix dimension is not part of the active nesting dimension set."""


class LabelOutOfRangeError(DameError):
    """A class label lies outside [0, C)."""


class InvalidShapeError(DameError):
    """Invalid (J, K) combination for band construction."""


class SchemeShapeMismatchError(DameError):
    """A weighting scheme was requested with an incompatible (J, K)."""


class DegenerateDurationsError(DameError):
    """J = 1 with alpha != 1: the non-longest-chunk term is undefined."""


class InvalidDurationError(DameError):
    """A chunk duration of less than one frame was requested."""


class InsufficientUtterancesError(DameError):
    """A speaker does not have enough distinct utterances to build an instance."""


class ConfigError(DameError):
    """Invalid or unparseable run configuration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonFiniteLossError(DameError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        msg = f"non-finite loss at epoch {epoch}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class CheckpointError(DameError):
    """Checkpoint file is missing, truncated, or has a bad magic string."""
