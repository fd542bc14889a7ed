class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class UsageError(RuntimeError):
    """An operation was called outside its contract."""


class NumericFault(ArithmeticError):
    """A non-finite value appeared where a finite one is required.

    ``where`` locates the fault (layer index, parameter block, or
    iteration/minibatch coordinates).
    """

    def __init__(self, where, message="non-finite value"):
        super().__init__(f"{message} at {where}")
        self.where = where
