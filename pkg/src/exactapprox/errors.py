"""Shared exception types.

Every failure mode that callers are expected to branch on gets its own
class; audits never raise on a failed property (they report it), so these
cover malformed inputs, resource caps, and genuine invariant breakage.
"""


class ExactApproxError(Exception):
    """Base class for all library errors."""


class NotInSystem(ExactApproxError):
    """A point was passed that is not a member of the point system."""


class ResourceLimit(ExactApproxError):
    """A band or scan would exceed the configured candidate cap."""


class PrecisionExhausted(ExactApproxError):
    """Certified refinement hit the precision ceiling without deciding."""


class HypothesisViolated(ExactApproxError):
    """Parameters lie in a regime where the convergence hypothesis fails."""


class DistributionFailure(ExactApproxError):
    """Band enumeration produced fewer points than the required floor."""


class CountFailure(ExactApproxError):
    """An annulus produced fewer children than its required floor."""


class InternalInvariant(ExactApproxError):
    """An exact check that should be impossible to fail, failed."""


class DegenerateRegion(ExactApproxError):
    """A region of zero measure where positive measure is required."""


class IllPosedInput(ExactApproxError):
    """Estimator input outside the domain of the formula."""


class EmptyInput(ExactApproxError):
    """An operation was handed an empty collection."""


class ConfigError(ExactApproxError):
    """Unparseable or invalid run configuration."""
