"""Shared exception types.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific one that applies.
"""


class SigseekError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(SigseekError):
    """An operation was invoked outside its guaranteed regime."""


class DataFormatError(SigseekError):
    """A serialized artifact (shard, index, volume, checkpoint) is malformed."""
