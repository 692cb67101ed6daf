"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GraphStateError(RuntimeError):
    """A graph operation was requested in the wrong state."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class LossUndefinedError(ValueError):
    """The loss has no value for this batch (e.g. no positive scores)."""


class LayoutError(ValueError):
    """A batch does not follow the layout a loss requires."""


class CalibrationError(ValueError):
    """Threshold calibration is impossible on the given data."""


class MetricError(ValueError):
    """A metric is undefined on the given input."""


class FeatureFileError(ValueError):
    """Malformed feature file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(ValueError):
    """Checkpoint cannot be read or does not match the expected model."""


class NonFiniteGradientError(ArithmeticError):
    """An optimizer received a NaN or infinite gradient."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss.

    The last parameters known to be finite are attached as ``last_good``.
    """

    def __init__(self, message, last_good=None, log=None):
        super().__init__(message)
        self.last_good = last_good
        self.log = log or []
