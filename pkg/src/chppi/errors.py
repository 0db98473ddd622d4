"""Exception hierarchy shared by all pipeline stages."""


class ChppiError(Exception):
    """Base class for every error raised by the package."""


# geometry
class EmptySites(ChppiError):
    pass


class DuplicateSite(ChppiError):
    pass


class InvalidGeometry(ChppiError):
    pass


class EmptyIndex(ChppiError):
    pass


# affinity
class MissingQuartile(ChppiError):
    pass


# housing
class RankDeficient(ChppiError):
    pass


class TooFewAntennas(ChppiError):
    pass


class ConstantVariableWarning(UserWarning):
    pass


# socio-economic index
class OutOfRangeCategory(ChppiError):
    pass


class NonFiniteLoss(ChppiError):
    pass


class EmptyBlock(ChppiError):
    pass


# statistics
class DegenerateMatrix(ChppiError):
    pass


class ZeroVariance(ChppiError):
    pass


class DomainError(ChppiError, ValueError):
    pass


class FitFailure(ChppiError):
    pass


# index assembly
class DegenerateInputs(ChppiError):
    pass


class AllZeroAffinity(ChppiError):
    pass


# harness
class ScaleTooSmall(ChppiError):
    pass


class ValidationError(ChppiError):
    pass


class StageError(ChppiError):
    def __init__(self, stage, message, rows=None):
        self.stage = stage
        self.rows = list(rows or [])
        detail = f" (rows: {self.rows[:10]})" if self.rows else ""
        super().__init__(f"[{stage}] {message}{detail}")
