"""Exception types shared across the toolkit."""


class SliceLabError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SliceLabError, ValueError):
    """Invalid or inconsistent configuration (bad preset, empty table, ...)."""


class AddressRangeError(SliceLabError, ValueError):
    """Physical address outside the range covered by the slice function."""


class NotLinearError(SliceLabError):
    """Oracle behaviour is inconsistent with a linear XOR slice function."""


class RecoveryError(SliceLabError):
    """Slice-function recovery could not find a consistent description."""


class AmbiguousCompareSetError(SliceLabError):
    """Pairwise comparisons did not single out a mapping with enough confidence."""


class ClassificationError(SliceLabError):
    """Decision-tree classification ran out of retries."""


class MissingMappingError(SliceLabError, KeyError):
    """A page has no predicted slice mapping."""


class PoolExhaustedError(SliceLabError):
    """The candidate pool cannot supply enough congruent addresses."""


class ReductionError(SliceLabError):
    """Group testing could not reduce the pool to a minimal eviction set."""


class IterationBudgetError(ReductionError):
    """Group testing exceeded its iteration budget (usually due to noise)."""
