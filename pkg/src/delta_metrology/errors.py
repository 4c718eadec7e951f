"""Exception hierarchy.

Every error class carries the process exit code the CLI reports for it.
"""


class DeltaMetrologyError(Exception):
    exit_code = 1


class ParseError(DeltaMetrologyError, ValueError):
    exit_code = 2

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class InsufficientDataError(ParseError):
    pass


class FitError(DeltaMetrologyError, RuntimeError):
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class DegeneracyError(FitError):
    """Design matrix is rank deficient (e.g. two templates with identical lines)."""

    def __init__(self, message, names=()):
        self.names = tuple(names)
        super().__init__(message, {"colliding": list(self.names)})


class HallSignError(FitError):
    pass


class CalibrationError(DeltaMetrologyError):
    exit_code = 4


class ConfigError(DeltaMetrologyError, ValueError):
    exit_code = 5


class DomainError(DeltaMetrologyError, ValueError):
    exit_code = 6


class RangeError(DeltaMetrologyError, IndexError):
    exit_code = 6


class DegenerateTraceError(DomainError):
    pass


EXIT_CODES = {
    "ok": 0,
    "parse": ParseError.exit_code,
    "fit": FitError.exit_code,
    "calibration": CalibrationError.exit_code,
    "config": ConfigError.exit_code,
    "domain": DomainError.exit_code,
}
