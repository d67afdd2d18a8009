"""Exception hierarchy shared by every stage of the pipeline."""


class DpvError(Exception):
    """Base class for all errors raised by :mod:`dpvlearn`."""


class MissingColumn(DpvError):
    pass


class UnparsableRow(DpvError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class EmptyArm(DpvError):
    pass


class NonFiniteMetric(DpvError):
    pass


class EmptySplit(DpvError):
    pass


class InsufficientData(DpvError):
    pass


class DomainError(DpvError, ValueError):
    pass


class ZeroProjectedGradient(DpvError):
    pass


class RankDeficient(DpvError):
    pass


class InitializationFailed(DpvError):
    pass


class DimensionMismatch(DpvError):
    pass


class TooFewInstances(DpvError):
    pass


class ConfigInvalid(DpvError, ValueError):
    """Raised for invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateFeatureWarning(UserWarning):
    """A constant feature was asked to be split into more than one bin."""
