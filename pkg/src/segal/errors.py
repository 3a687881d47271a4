"""Error taxonomy shared across the package; exit codes map to CLI error classes."""


class SegalError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(SegalError, ValueError):
    exit_code = 2


class DuplicateAcquisitionError(SegalError):
    exit_code = 3


class EmptyPoolError(SegalError):
    exit_code = 4


class EmptyBufferError(SegalError):
    exit_code = 4


class CannotTrainError(SegalError):
    exit_code = 5


class ConfigConflictError(SegalError):
    exit_code = 6


class UndefinedMetricError(SegalError):
    exit_code = 7


class IncompleteRunError(SegalError):
    exit_code = 8


class RunLockedError(SegalError):
    exit_code = 9
