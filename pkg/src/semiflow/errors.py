"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or non-matrix shapes."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of the operation."""


class UnsupportedOperatorError(TypeError):
    """The operator lacks structure the operation requires (e.g. SPD)."""


class SelfCheckError(RuntimeError):
    """An internal algebraic identity failed beyond rounding tolerance."""


class OracleValidationError(RuntimeError):
    """A reference solution failed cross-validation against an independent oracle."""


class ConfigError(ValueError):
    """A config file could not be parsed or validated.

    ``line`` is the 1-based line number of the offending entry when known.
    """

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        base = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {base}"
        return base
