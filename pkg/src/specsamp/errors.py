"""Exception hierarchy for specsamp."""

from __future__ import annotations


class SpecSampError(Exception):
    """Base class for all specsamp errors."""


class AllZeroError(SpecSampError, ValueError):
    """Every weight passed to normalize was zero."""


class NegativeWeightError(SpecSampError, ValueError):
    pass


class InvalidDistributionError(SpecSampError, ValueError):
    pass


class LengthMismatchError(SpecSampError, ValueError):
    pass


class TokenOutOfRangeError(SpecSampError, ValueError):
    pass


class CorpusTooShortError(SpecSampError, ValueError):
    pass


class BadOrderError(SpecSampError, ValueError):
    pass


class BadParamError(SpecSampError, ValueError):
    """A decoding-method parameter is out of range."""


class DraftZeroProbError(SpecSampError, ArithmeticError):
    """The draft model sampled a token it assigns zero probability."""


class ZeroResidualError(SpecSampError, ArithmeticError):
    """Residual mass of (q - p)+ is numerically zero."""


class InstanceTooLargeError(SpecSampError, ValueError):
    pass


class TooFewSamplesError(SpecSampError, ValueError):
    pass


class NonPositiveError(SpecSampError, ValueError):
    pass


class EmptyStatsError(SpecSampError, ValueError):
    pass


class ConfigInvalidError(SpecSampError, ValueError):
    pass
