"""Shared exception types.

Everything raised on bad input derives from ValueError so callers can
catch broadly; the distinct names exist because tests and the CLI report
them individually.
"""


class DimensionMismatch(ValueError):
    """Input vector length does not match what the receiver expects."""


class TooLargeForExact(ValueError):
    """Exact enumeration was requested beyond the supported size."""


class EmptyIndexSet(ValueError):
    """An index set that must be nonempty is empty."""


class UnsupportedGate(ValueError):
    """Gate outside the set supported by the requested construction."""


class IndexOutOfRange(ValueError):
    """Layer or position index outside the circuit or vector."""


class PreconditionViolated(ValueError):
    """A stated precondition on parameters does not hold."""


class ScaleTooLarge(ValueError):
    """Initialization scale above the admissible bound."""


class EmptyBatch(ValueError):
    """A batch or sample that must be nonempty is empty."""


class LcaViolated(ValueError):
    """A correlation needed for a sign decision is exactly zero."""


class InvalidRange(ValueError):
    """A numeric parameter is outside its admissible range."""


class NonFiniteLoss(ValueError):
    """Loss or gradient became non-finite."""


class InvalidDistribution(ValueError):
    """Probability masses are negative or do not sum to one."""
