"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class KRIError(Exception):
    exit_code = 4


class ConfigError(KRIError, ValueError):
    exit_code = 2


class DataError(KRIError):
    exit_code = 3


class FormatError(DataError):
    """A binary or JSON file failed validation."""


class ModelError(DataError):
    pass


class BlackBoxModelError(ModelError):
    """The model cannot provide input gradients."""


class TransportError(KRIError):
    pass


class NumericError(KRIError):
    pass


class IncompleteTensorError(NumericError):
    pass


class NonConvergenceError(NumericError):
    pass


class TrainingError(NumericError):
    pass
