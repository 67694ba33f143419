"""Exception hierarchy shared by every qbalance module."""


class QBalanceError(Exception):
    """Base class for all toolkit errors."""


class NegativeState(QBalanceError):
    """A jump would drive a queue length below zero (a model bug)."""


class SimultaneityViolation(QBalanceError):
    """An external arrival and a service completion share one epoch."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InvalidParameter(QBalanceError, ValueError):
    pass


class NonConvergent(QBalanceError):
    pass


class EmptyLog(QBalanceError):
    pass


class MissingEstimate(QBalanceError):
    pass


class InapplicableAssumption(QBalanceError):
    pass


class SingularPoint(QBalanceError, ArithmeticError):
    pass


class ConfigError(QBalanceError, ValueError):
    """Scenario file failed validation; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
