from __future__ import annotations

from typing import Optional


class CfmLabError(Exception):
    """Base class for every error raised by cfmlab. ``exit_code`` is what the CLI exits with."""

    exit_code = 3


class ConfigError(CfmLabError):
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class ShapeError(CfmLabError, ValueError):
    pass


class DomainError(CfmLabError, ValueError):
    pass


class NumericError(CfmLabError, ArithmeticError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, message: str, violation: float) -> None:
        self.violation = violation
        super().__init__(f"{message} (marginal violation {violation:.3e})")


class DegenerateDensityError(NumericError):
    pass


class DegenerateWeightsError(NumericError):
    pass


class InitializationError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message: str, time: float) -> None:
        self.time = time
        super().__init__(f"{message} at t={time:.6g}")


class StiffnessError(NumericError):
    pass


class TrainingError(CfmLabError):
    pass


class DataError(CfmLabError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, message: str, row: int, column: str) -> None:
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class CheckpointError(DataError):
    pass
