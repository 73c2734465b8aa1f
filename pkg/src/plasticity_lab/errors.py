"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid specification, configuration, or mismatched state."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity reached a computation that forbids it."""


class ParseError(ValueError):
    """Malformed input file; the message carries the byte offset or line."""


class StreamExhausted(RuntimeError):
    """A class-partitioned task stream ran out of unused classes."""
