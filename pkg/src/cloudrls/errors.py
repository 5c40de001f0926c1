"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, penalties or scenario settings."""


class WarmUpError(ValueError):
    """Not enough signal history to build a regressor."""


class ConditioningError(ArithmeticError):
    """A matrix that must be inverted is numerically singular.

    ``agent``, ``t`` and ``k`` locate the failure when known.
    """

    def __init__(self, message, *, agent=None, t=None, k=None):
        self.agent = agent
        self.t = t
        self.k = k
        where = [f"{name}={val}" for name, val in (("agent", agent), ("t", t), ("k", k)) if val is not None]
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)

    def locate(self, *, agent=None, t=None, k=None):
        """Return a copy of the error with extra location context filled in."""
        base = str(self.args[0]).split(" (agent=")[0].split(" (t=")[0].split(" (k=")[0]
        return ConditioningError(
            base,
            agent=self.agent if agent is None else agent,
            t=self.t if t is None else t,
            k=self.k if k is None else k,
        )
