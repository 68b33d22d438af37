"""Exception hierarchy. The CLI maps these onto process exit codes."""


class H2XLDAError(Exception):
    """Base class for every error raised by h2xlda."""

    exit_code = 1


class ConfigError(H2XLDAError, ValueError):
    exit_code = 2


class MeshError(H2XLDAError, ValueError):
    """Invalid mesh geometry or a refinement request that cannot be honoured."""

    exit_code = 4


class SolverError(H2XLDAError):
    """A linear solve failed. `report` is the SolveReport of the failed solve."""

    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(H2XLDAError):
    """An outer iteration (SCF, eigen-solver) did not converge."""

    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StateError(H2XLDAError, ValueError):
    """An orbital state does not meet the preconditions of an operation."""

    exit_code = 4
