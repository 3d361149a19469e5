"""Exception types shared across the package."""


class ConvexPGError(Exception):
    pass


class MdpFormatError(ConvexPGError, ValueError):
    """Raised when an MDP document cannot be parsed or violates an invariant."""


class SolverFailure(ConvexPGError, RuntimeError):
    pass


class SizeExceeded(ConvexPGError, ValueError):
    pass


class MissingField(ConvexPGError, ValueError):
    pass


class InvalidSpec(ConvexPGError, ValueError):
    pass


class NonFiniteUpdate(ConvexPGError, FloatingPointError):
    """A learner produced a non-finite parameter; ``step`` is the offending step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite parameter update at step {step}")
