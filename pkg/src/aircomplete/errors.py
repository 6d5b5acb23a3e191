"""Exception types shared across the toolkit."""


class InvalidInput(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericOverflow(ArithmeticError):
    """Raised when an elementwise exponential would overflow float64."""


class ParseError(ValueError):
    """Malformed PGM input. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DivergenceError(ArithmeticError):
    """Raised when training produces NaN or Inf. Names the iteration."""

    def __init__(self, iteration: int, what: str = "parameters"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class ImputeError(ValueError):
    """Raised when an imputation baseline cannot fill a missing entry."""
