"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems (2), data
problems (3), numerical problems (4).
"""


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


class ParseError(ValueError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyDatasetError(ValueError):
    """No interactions survived loading/binarization."""


class FormatError(ValueError):
    """Structurally invalid data file (e.g. inconsistent vector widths)."""


class CapacityError(RuntimeError):
    """A dense intermediate would exceed the configured memory budget."""


class SingularMatrixError(RuntimeError):
    """Linear system is singular to working precision.

    ``pivot`` is the 0-based index of the offending pivot.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverError(RuntimeError):
    """A model fit failed; ``columns`` lists failing columns when per-column."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else None


class StageError(RuntimeError):
    """Pipeline stage failure wrapper; original error is ``__cause__``."""

    def __init__(self, stage, config_path, cause):
        super().__init__(f"stage '{stage}' failed ({config_path}): {cause}")
        self.stage = stage
        self.config_path = str(config_path)
