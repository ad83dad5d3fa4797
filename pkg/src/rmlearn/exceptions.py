"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: validation problems
(bad input, bad config) exit with 2, inference failures with 3 and file
system problems with 4.
"""


class RmlearnError(Exception):
    exit_code = 1


# -- validation (exit 2) ------------------------------------------------------

class ValidationError(RmlearnError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ExtractorKindError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# -- inference / runtime (exit 3) ---------------------------------------------

class InferenceError(RmlearnError):
    exit_code = 3


class NoClustersError(InferenceError):
    pass


class InitialStateError(InferenceError):
    pass


class SeparationError(InferenceError):
    pass


class UnknownPropositionError(InferenceError):
    pass


class InconsistentGoalError(InferenceError):
    pass


class DegenerateTaskError(InferenceError):
    pass


class UnreachableGoalError(InferenceError):
    pass


# ConstructionError is the general name used for RM construction failures.
ConstructionError = InferenceError


class AmbiguousLabelError(InferenceError):
    pass


class StateIndexError(InferenceError, IndexError):
    pass


class ReplayMismatchError(InferenceError):
    pass


# -- I/O (exit 4) -------------------------------------------------------------

class IoError(RmlearnError, OSError):
    exit_code = 4
