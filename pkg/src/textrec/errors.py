"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes violate an operation's contract."""


class DataError(ValueError):
    """Bad input data: unsupported characters, malformed files, broken contracts."""


class InfeasibleLabelError(DataError):
    """Label cannot be transcribed within the available number of timesteps."""


class DataFormatError(DataError):
    """A serialized file (dataset image, checkpoint, PGM) is malformed."""


class NumericError(ArithmeticError):
    """Training produced a non-finite loss; the run is aborted."""
