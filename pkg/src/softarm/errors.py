"""Exception hierarchy shared by all modules."""


class SoftArmError(Exception):
    """Base class for package errors."""


class InvalidInputError(SoftArmError, ValueError):
    pass


class SimulationDivergedError(SoftArmError, FloatingPointError):
    pass


class SpectralLeakageError(SoftArmError, ValueError):
    """Signal does not cover an integer number of excitation periods."""


class FitFailedError(SoftArmError, ArithmeticError):
    def __init__(self, message, condition=float("nan")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class StructureMismatchError(SoftArmError, ValueError):
    pass


class ConditioningError(SoftArmError, ArithmeticError):
    def __init__(self, message, condition=float("nan")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConfigError(SoftArmError, ValueError):
    pass
