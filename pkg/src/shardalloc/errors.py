"""Exception hierarchy shared by all shardalloc modules."""


class ShardAllocError(Exception):
    """Base class for every error raised by this package."""


class InvariantViolation(ShardAllocError, ValueError):
    """A domain invariant does not hold (negative score, probability out of range, ...)."""


class MalformedFileError(ShardAllocError):
    """An input file does not follow the documented schema."""


class GenerationFailure(ShardAllocError):
    """Instance generation could not satisfy the requested score statistics."""


class DegenerateShardError(ShardAllocError):
    """A shard column carries no score mass where a positive total is required."""


class EmptyShardError(ShardAllocError):
    """Leader election was attempted over a shard with no positive score."""


class NumericalFailure(ShardAllocError):
    """A linear solve did not reach the required residual tolerance."""


class InstanceTooLargeError(ShardAllocError):
    """Exhaustive enumeration was requested beyond its guard rails."""


class UsageError(ShardAllocError):
    """Invalid command-line usage."""
