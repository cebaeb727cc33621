"""Error types shared by every stage of the lab."""


class LabError(Exception):
    """Base class for all errors raised by the lab."""


class DimensionError(LabError, ValueError):
    pass


class MissingLeafError(LabError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "leaf not on tape"


class StepError(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class PreconditionError(LabError, ValueError):
    pass


class TrainingDivergedError(LabError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericError(LabError, FloatingPointError):
    """NaN/inf gradient met during an attack; `step` is the iteration index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SampleSizeError(LabError, ValueError):
    pass


class ModeError(LabError, ValueError):
    pass


class DatasetFormatError(LabError, ValueError):
    pass


class TruncatedFileError(LabError, EOFError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class CheckpointError(LabError, ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class HashMismatchError(CheckpointError):
    pass
