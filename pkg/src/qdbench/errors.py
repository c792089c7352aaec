"""Exception types shared across the suite."""


class BenchError(Exception):
    """Base class for all qdbench errors."""


class ParameterError(BenchError, ValueError):
    """Invalid parameter value or violated precondition."""


class DataError(BenchError, ValueError):
    """Malformed data: bad shapes, out-of-range labels, broken dataset files."""


class ConfigError(BenchError):
    """Invalid experiment configuration. Carries the full list of violations."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class TrainingError(BenchError):
    """Training aborted (non-finite loss or similar)."""
