"""Exception hierarchy shared by every module."""


class LadderError(Exception):
    """Base class for all errors raised by ladderpoly."""


class ShapeError(LadderError, ValueError):
    pass


class NumericError(LadderError, ArithmeticError):
    pass


class StateError(LadderError, RuntimeError):
    """Operation requested in a mode the object cannot support (e.g. batch-norm
    training statistics for a single sample)."""


class ConfigError(LadderError, ValueError):
    pass


class PreconditionError(LadderError, ValueError):
    """The network is not in the form an analysis requires (for instance it
    still carries intercepts or batch-norm layers)."""


class DataError(LadderError, ValueError):
    pass
