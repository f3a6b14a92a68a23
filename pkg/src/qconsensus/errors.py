"""Exception hierarchy for the quantized consensus toolkit."""


class QConsensusError(Exception):
    """Base class for every error raised by this package."""


class EmptyNeighborhood(QConsensusError, ValueError):
    pass


class AssumptionViolated(QConsensusError, ValueError):
    """The weight matrix does not satisfy the dominant-diagonal weight assumption."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ConnectivityFailure(QConsensusError, RuntimeError):
    def __init__(self, message, attempts):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ParameterOutOfRange(QConsensusError, ValueError):
    pass


class UnsupportedReduction(QConsensusError, ValueError):
    pass


class InternalInconsistency(QConsensusError, RuntimeError):
    pass


class NotConverged(QConsensusError, RuntimeError):
    """Raised when an operation needs a terminal verdict but the run was undecided."""


class InvariantViolation(QConsensusError, AssertionError):
    pass
