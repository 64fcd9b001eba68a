"""Exception hierarchy shared by all modules."""


class BallDiffError(Exception):
    """Base class. ``step`` is filled in when raised from inside a simulation loop."""

    step = None


class DimensionError(BallDiffError, ValueError):
    pass


class DegenerateInputError(BallDiffError, ValueError):
    pass


class DomainError(BallDiffError, ValueError):
    pass


class ConfigurationError(BallDiffError, ValueError):
    pass


class SingularityError(BallDiffError, ArithmeticError):
    pass


class HorizonError(BallDiffError, IndexError):
    """Requested time lies beyond the simulated horizon; extend the path."""


class AccuracyError(BallDiffError, ArithmeticError):
    """An iterative evaluation hit its iteration cap before converging."""
