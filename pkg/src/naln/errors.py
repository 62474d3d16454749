"""Exception types shared across the toolkit."""


class NalnError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(NalnError, ValueError):
    pass


class ParameterError(NalnError, ValueError):
    pass


class DegenerateInputError(NalnError, ValueError):
    pass


class ContractError(NalnError, RuntimeError):
    pass


class RangeError(NalnError, IndexError):
    """Raised when an epoch window falls outside a recording.

    ``offenders`` holds the indices of the events whose windows do not fit.
    """

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class NumericalError(NalnError, ArithmeticError):
    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class ConfigError(NalnError, ValueError):
    pass


class CapabilityError(NalnError, TypeError):
    pass


class TrainingError(NalnError, RuntimeError):
    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class DataError(NalnError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class StatisticsError(NalnError, ArithmeticError):
    pass


class FormatError(NalnError, ValueError):
    pass
