"""Exception taxonomy shared across the package.

Every error raised by this package derives from :class:`EnsdefError`, so
callers (including the CLI) can distinguish library failures from bugs.
"""


class EnsdefError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EnsdefError, ValueError):
    """A spec, hyperparameter, or configuration value is invalid."""


class InputValidationError(EnsdefError, ValueError):
    """An input array violates a documented precondition (range, dtype)."""


class InputShapeError(InputValidationError):
    """An input array has the wrong shape or dimension."""


class NumericOverflowError(EnsdefError, ArithmeticError):
    """A forward or gradient computation produced a non-finite value."""


class TrainingDivergedError(NumericOverflowError):
    """Training loss became non-finite. Carries the offending epoch."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}: loss is non-finite")


class UndefinedMetricError(EnsdefError, ValueError):
    """A metric is undefined for the given inputs (e.g. empty batch)."""


class UndefinedKappaError(UndefinedMetricError):
    """Kappa is undefined: empty qualified set or degenerate marginals."""


class NoEligibleTeamError(EnsdefError, LookupError):
    """Team selection was asked to draw from an empty pool."""


class DataFormatError(EnsdefError, ValueError):
    """A persisted artifact or input file does not match its format."""


class BadMagicError(DataFormatError):
    """An IDX file starts with an unexpected magic number."""


class TruncatedFileError(DataFormatError):
    """An IDX file ends before the byte count implied by its header."""


class CountMismatchError(DataFormatError):
    """Image and label files disagree on the number of examples."""


class MissingArtifactError(EnsdefError, FileNotFoundError):
    """A required artifact is absent. Names the subcommand that produces it."""

    def __init__(self, path, producer: str):
        self.path = str(path)
        self.producer = producer
        super().__init__(f"missing artifact {path!s}: run '{producer}' first")
