"""Exception types shared across the package."""


class LeicaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(LeicaError, ValueError):
    """Array dimensions do not agree with what an operation requires."""


class VocabularyMismatchError(LeicaError, ValueError):
    """Code grid, backend, prior or codebook come from different vocabularies."""


class FileFormatError(LeicaError, ValueError):
    """A binary model file has a bad magic, truncated body or failed hash check."""


class UndefinedStatisticError(LeicaError, ValueError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class InvalidSpecError(LeicaError, ValueError):
    """A distortion or perturbation request is out of range."""


class DataError(LeicaError):
    """Input data (manifest, captions, images) is unusable."""
