"""Exception types. Each carries a machine-parseable ``category`` used by the CLI."""


class EdfaTwinError(Exception):
    category = "ERROR"


class SpectrumError(EdfaTwinError, ValueError):
    category = "INVALID_SPECTRUM"


class GridMismatchError(EdfaTwinError, ValueError):
    category = "GRID_MISMATCH"


class ConfigError(EdfaTwinError, ValueError):
    category = "INVALID_CONFIG"


class IntegrationError(EdfaTwinError, RuntimeError):
    category = "INTEGRATION_FAILED"


class SetpointUnreachableError(EdfaTwinError, RuntimeError):
    category = "SETPOINT_UNREACHABLE"

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class FitError(EdfaTwinError, ValueError):
    category = "FIT_FAILED"


class InsufficientSamplesError(FitError):
    category = "FIT_INSUFFICIENT_SAMPLES"


class NonMonotoneFamilyError(FitError):
    category = "FIT_NON_MONOTONE"

    def __init__(self, message, channels=()):
        super().__init__(message)
        self.channels = tuple(channels)


class SolveError(EdfaTwinError, RuntimeError):
    category = "SOLVE_OUT_OF_BRACKET"

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class SchemaError(EdfaTwinError, ValueError):
    category = "SCHEMA_MISMATCH"


class DataFormatError(EdfaTwinError, ValueError):
    category = "DATA_FORMAT"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class AseSubtractionError(EdfaTwinError, ValueError):
    category = "ASE_INCONSISTENT"

    def __init__(self, message, channels=()):
        super().__init__(message)
        self.channels = tuple(channels)


class SplitError(EdfaTwinError, ValueError):
    category = "SPLIT_EMPTY"


class TrainingError(EdfaTwinError, RuntimeError):
    category = "TRAINING_DIVERGED"


class ExperimentError(EdfaTwinError, ValueError):
    category = "EXPERIMENT_INFEASIBLE"
