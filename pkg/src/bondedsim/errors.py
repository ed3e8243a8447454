"""Exception types shared across the package.

The CLI maps these onto process exit codes: config errors exit 1, data
errors exit 2, and internal invariant violations exit 3.
"""


class ConfigError(Exception):
    """Invalid experiment configuration (bad key, missing file, out-of-range value)."""


class DataError(Exception):
    """Malformed external data, e.g. a block CSV that fails to parse."""


class InternalInvariantError(Exception):
    """A state the code promises can never happen happened."""


class InsufficientDataError(Exception):
    """A validity test was asked to run on fewer blocks than its window.

    Deliberately not a ValueError: callers must decide what an unfilled
    window means; it is never an implicit pass or fail.
    """


class UnsupportedHashRateError(ValueError):
    """Committed hash-rate fraction below the smallest supported tier."""


class ProtocolViolationError(Exception):
    """An event was applied to a miner account whose bond state forbids it."""
