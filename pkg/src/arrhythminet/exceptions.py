"""Exception hierarchy shared by every subpackage.

The CLI maps the three families (configuration, data, numeric) onto
distinct exit codes.
"""


class ArrhythmiNetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ArrhythmiNetError, ValueError):
    """Invalid user-supplied configuration or argument."""


class ShapeError(ConfigError):
    """A tensor or parameter has an incompatible dimension."""


class DataError(ArrhythmiNetError):
    """Input files are missing, malformed or inconsistent."""


class HeaderParseError(DataError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class UnsupportedFormatError(DataError):
    """WFDB signal stored in a format other than 212."""


class TruncatedStreamError(DataError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ModelFileError(DataError):
    """Base class for model file load failures."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class SpecHashMismatchError(ModelFileError):
    pass


class TruncatedModelFileError(ModelFileError):
    pass


class NumericError(ArrhythmiNetError, ArithmeticError):
    """Non-finite value encountered during optimisation or training."""


class TrainingDivergedError(NumericError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
