"""Exception hierarchy.

Every error carries a short machine-readable ``category`` which the CLI
prints and maps to a nonzero exit code.
"""


class BrdpError(Exception):
    category = "error"
    exit_code = 1


class DomainError(BrdpError, ValueError):
    category = "domain"
    exit_code = 2


class CalibrationError(BrdpError):
    category = "calibration"
    exit_code = 3


class AccuracyError(BrdpError):
    category = "accuracy"
    exit_code = 3


class ResolutionError(BrdpError):
    category = "resolution"
    exit_code = 3


class BracketError(BrdpError):
    category = "bracket"
    exit_code = 3


class NonTerminationError(BrdpError):
    category = "nontermination"
    exit_code = 4


class InfeasibleError(BrdpError):
    category = "infeasible"
    exit_code = 5


class UnsupportedKernelError(BrdpError):
    category = "unsupported-kernel"
    exit_code = 2


class SchemaError(BrdpError):
    category = "schema"
    exit_code = 6


class EmptyDatasetError(BrdpError):
    category = "empty-dataset"
    exit_code = 6
