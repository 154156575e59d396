"""Exception hierarchy shared by all modules."""


class EhrenfestError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(EhrenfestError, ValueError):
    """Invalid input: bad domain, shape, or configuration."""


class DomainError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class DegeneratePathError(DomainError):
    """Path density vanishes identically, so the control field is undefined."""


class NumericalError(EhrenfestError, ArithmeticError):
    pass


class NumericalDegeneracyError(NumericalError):
    pass


class ConfigError(ValidationError):
    """Configuration failed validation; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
