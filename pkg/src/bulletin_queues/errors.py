"""Exception types shared across the package."""


class BulletinQueuesError(Exception):
    """Base class for all package errors."""


class NonpositiveRate(BulletinQueuesError, ValueError):
    pass


class UnstableQueue(BulletinQueuesError, ValueError):
    """Raised when an arrival rate is not strictly below its service rate."""


class IncompatibleGrids(BulletinQueuesError, ValueError):
    pass


class QuadratureFailure(BulletinQueuesError, ArithmeticError):
    pass


class NoFeasiblePoint(BulletinQueuesError, ValueError):
    pass


class StepUnderflow(BulletinQueuesError, ValueError):
    """The finite-difference stencil would leave the feasible region."""


class InvalidConfig(BulletinQueuesError, ValueError):
    pass


class ParseError(InvalidConfig):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ValidationError(InvalidConfig):
    pass


class MissingInput(BulletinQueuesError, FileNotFoundError):
    pass
