"""Exception types raised by the package.

Every error raised on purpose derives from CoffarError so callers can
catch the package's failures with a single except clause.
"""


class CoffarError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CoffarError):
    """An array argument has the wrong rank, size, or is empty."""


class KernelError(CoffarError):
    """A correlation kernel violates its contract (even dimension, too large)."""


class ValueCheckError(CoffarError):
    """A numeric argument is out of range, non-finite, or not a distribution."""


class ConfigError(CoffarError):
    """A model or run configuration is malformed."""


class CheckpointError(CoffarError):
    """A checkpoint file is missing, malformed, or inconsistent."""


class GalleryError(CoffarError):
    """A gallery directory is missing, unreadable, or empty."""


class GenerationError(CoffarError):
    """The gallery cannot supply the requested kind of pair."""


class ManifestError(CoffarError):
    """A pair manifest line is malformed or references unknown images."""


class MetricError(CoffarError):
    """A metric is undefined for the given inputs (e.g. a one-class score set)."""


class TrainingDiverged(CoffarError):
    """The training loss became non-finite."""
