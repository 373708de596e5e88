"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Two evaders coincide, so the repulsive core of ``g`` is undefined.

    ``step`` is the time-step index at which the collision was detected,
    or ``None`` when raised outside of a time loop.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidParameterError(ValueError):
    pass


class ScheduleMismatchError(ValueError):
    """A batch schedule does not fit the grid or the trajectory it is paired with."""


class OptimizationError(RuntimeError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class ConfigError(ValueError):
    """Invalid experiment configuration; ``fields`` names the offending keys."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)
