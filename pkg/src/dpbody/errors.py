"""Exception types shared across the package.

Every error raised by the library derives from :class:`DPBodyError` so callers
can catch the whole family at once.  Errors carry enough payload (points,
reports, step indices) to diagnose a failed run without re-executing it.
"""

from __future__ import annotations


class DPBodyError(Exception):
    """Base class for all library errors."""


class UnboundedError(DPBodyError):
    """A linear program (or a support/Chebyshev query) is unbounded."""


class InfeasibleError(DPBodyError):
    """A linear program has an empty feasible region."""


class EmptySampleError(DPBodyError):
    """An operation received a sample with zero rows."""


class EmptyBodyError(DPBodyError):
    """The empirical floating body has no interior point."""


class QOutOfRangeError(DPBodyError):
    """Quantile level must lie strictly inside (0, 1)."""


class DimensionMismatchError(DPBodyError):
    """Operands live in different ambient dimensions."""


class EmptyNetError(DPBodyError):
    """A direction net with no directions was supplied."""


class DeterministicNetUnsupportedError(DPBodyError):
    """Deterministic sphere nets are only constructed for d <= 3."""


class InvalidIntervalError(DPBodyError):
    """Integration endpoints must satisfy 0 < a < b."""


class RejectionStallError(DPBodyError):
    """Rejection sampling acceptance rate collapsed below the stall floor."""


class EmptyHError(DPBodyError):
    """An enumerable instance has no typical members to extend from."""


class InvalidProbeError(DPBodyError):
    """An audit probe does not live on the instance's value grid."""


class AlphaTooLargeError(DPBodyError):
    """Target accuracy exceeds the window the accuracy theorem supports."""


class KTooSmallError(DPBodyError):
    """Noisy-oracle calibration requires at least d steps."""


class TypicalityGateError(DPBodyError):
    """A private operation refused to run on a non-typical input.

    Carries the offending :class:`~dpbody.typical.TypicalSetReport` as
    ``report`` and, when raised inside the batched pipeline, the batch index.
    """

    def __init__(self, message: str, report=None, batch=None):
        super().__init__(message)
        self.report = report
        self.batch = batch


class InsufficientRowsError(DPBodyError):
    """Not enough rows to split into the requested disjoint batches."""


class SizeMismatchError(DPBodyError):
    """Empirical transport distance needs point sets of equal size."""


class TooLargeError(DPBodyError):
    """Input exceeds the supported size for an exact computation."""


class OracleFailureError(DPBodyError):
    """A user-supplied oracle raised inside the noisy Langevin loop."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigError(DPBodyError):
    """An experiment configuration failed validation."""
