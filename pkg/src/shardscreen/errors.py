"""Exception hierarchy shared by all shardscreen modules.

Every domain error derives from :class:`ShardScreenError` so callers (and the
command-line front end) can distinguish statistical/validation failures from
programming errors.
"""


class ShardScreenError(Exception):
    """Base class for all shardscreen domain errors."""


class InsufficientSamples(ShardScreenError):
    """Fewer observations than the operation requires."""


class NonFiniteInput(ShardScreenError):
    """Input contains NaN or infinity."""


class CountOverflow(ShardScreenError):
    """Merged sample count would exceed the supported 64-bit range."""


class DegenerateVariance(ShardScreenError):
    """A variable's variance is below the working floor."""


class CollinearWithCondition(ShardScreenError):
    """Partial-correlation denominator underflow: a variable is (numerically)
    collinear with the conditioning variable."""


class TooManyShards(ShardScreenError):
    """Requested shard count leaves shards with fewer than 3 rows."""


class InvalidRule(ShardScreenError):
    """Selection rule parameter out of range."""


class ConstantColumn(ShardScreenError):
    """A design column has zero variance and cannot be scaled."""


class InsufficientRows(ShardScreenError):
    """Knockoff construction needs at least twice as many rows as columns."""


class NearSingularGram(ShardScreenError):
    """Scaled Gram matrix is numerically singular."""


class SplitTooSmall(ShardScreenError):
    """Two-stage split sizes violate the n2 > 2d requirement."""


class ModelRequiresMoreFeatures(ShardScreenError):
    """Synthetic response model needs more feature columns than provided."""


class ColumnNotFound(ShardScreenError):
    """Named column missing from an ingested table."""
