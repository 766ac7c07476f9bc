"""Exception hierarchy.

Every error raised deliberately by the library derives from
:class:`RisError`; most also derive from ``ValueError`` so that callers
treating bad input generically keep working.
"""


class RisError(Exception):
    """Base class for all library errors."""


class ColumnMismatch(RisError, ValueError):
    pass


class SizeMismatch(RisError, ValueError):
    pass


class LengthMismatch(RisError, ValueError):
    pass


class NegativeVariance(RisError, ValueError):
    pass


class NotHPD(RisError, ValueError):
    pass


class NoConvergence(RisError, RuntimeError):
    pass


class AllZeroGains(RisError, ValueError):
    pass


class NonPositiveDistance(RisError, ValueError):
    pass


class NonPositiveSpeed(RisError, ValueError):
    pass


class BadRange(RisError, ValueError):
    pass


class SingularPsi(RisError, ValueError):
    pass


class RankDeficientPilot(RisError, ValueError):
    pass


class ZeroTruth(RisError, ValueError):
    pass


class NoFeasibleCandidate(RisError, ValueError):
    pass


class ZeroChannel(RisError, ValueError):
    pass


class RankTooHigh(RisError, ValueError):
    pass


class OutOfRange(RisError, ValueError):
    pass


class InfeasibleRegion(RisError, ValueError):
    pass


class InfeasibleAllocation(RisError, ValueError):
    """Allocation violates a P1 constraint; ``violations`` names which."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("infeasible allocation: " + "; ".join(map(str, self.violations)))


class SurrogateInfeasible(RisError, ValueError):
    pass


class QoSInfeasible(RisError, RuntimeError):
    pass


class TooLarge(RisError, ValueError):
    pass


class ConfigError(RisError, ValueError):
    pass


class NumericalFailure(RisError, RuntimeError):
    pass
