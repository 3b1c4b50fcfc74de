"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class MfrbsdeError(Exception):
    exit_code = 1


class ConfigError(MfrbsdeError):
    """Malformed or inconsistent problem data (missing keys, bad constants, incompatible terminal)."""

    exit_code = 4


class ContractError(MfrbsdeError, ValueError):
    """Array shapes or arguments that violate an operation's preconditions."""

    exit_code = 4


class ParameterError(MfrbsdeError, ValueError):
    exit_code = 4


class GateError(MfrbsdeError):
    """An analytic well-posedness condition rejected the problem."""

    exit_code = 2


class StepSizeError(MfrbsdeError):
    exit_code = 4


class NumericError(MfrbsdeError, ArithmeticError):
    exit_code = 3


class ConvergenceError(MfrbsdeError):
    """An iteration hit its budget. ``report`` holds the diagnostics gathered so far."""

    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
