"""Exception hierarchy shared across the package."""

from __future__ import annotations


class StamError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(StamError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(StamError, ValueError):
    """A precondition of an operation was violated."""


class DivergedError(StamError, FloatingPointError):
    """A forward pass or training run produced non-finite values."""


class ConfigError(StamError, ValueError):
    """An experiment, model or training configuration is invalid."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(StamError, ValueError):
    """Input data cannot be parsed or does not fit the requested layout."""


class WeightFileError(StamError):
    """Base class for weight-file problems."""


class CorruptFileError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class ConfigMismatchError(WeightFileError):
    pass
