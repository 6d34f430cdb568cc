"""Exception types shared across the package.

The CLI maps them onto exit codes: validation problems exit with 3 and
numerical failures with 4.
"""


class GameValidationError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid game: " + "; ".join(self.problems))


class GameParseError(GameValidationError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__([message])


class PolicyError(ValueError):
    """A policy is infeasible: wrong shape, negative mass, or rows off the simplex."""


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A linear solve, estimate, or iterate went non-finite or failed its residual check."""


class ConvergenceWarning(UserWarning):
    pass
