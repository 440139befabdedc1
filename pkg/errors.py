"""Exception hierarchy shared by the toolkit. Each error knows its CLI exit code."""

from pathlib import Path


class ZeroShotError(Exception):
    """Base class for every error the toolkit raises on purpose."""

    exit_code = 1


class ConfigError(ZeroShotError, ValueError):
    """Invalid configuration value or malformed config file."""

    exit_code = 2


class DataError(ZeroShotError, ValueError):
    """Missing, malformed or inconsistent input data."""

    exit_code = 3


class EmbeddingFormatError(DataError):
    """A text file could not be parsed; points at the offending line."""

    def __init__(self, message: str, path: Path | str | None = None, line_number: int | None = None):
        self.path = None if path is None else Path(path)
        self.line_number = line_number
        location = ""
        if self.path is not None:
            location = f"{self.path}"
            if line_number is not None:
                location += f":{line_number}"
            location += ": "
        elif line_number is not None:
            location = f"line {line_number}: "
        super().__init__(f"{location}{message}")


class NumericError(ZeroShotError, ArithmeticError):
    """Numerically undefined operation (zero-norm cosine, non-finite values)."""

    exit_code = 4


class DivergenceError(NumericError):
    """Training produced a non-finite objective or gradient."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class ExperimentError(ZeroShotError):
    """A repeated-seed run failed; keeps the seed and the cause's exit code."""

    def __init__(self, message: str, seed: int, cause: ZeroShotError | None = None):
        self.seed = seed
        self.cause = cause
        if cause is not None:
            self.exit_code = cause.exit_code
        super().__init__(f"seed {seed}: {message}")
