"""Exception types shared across modules."""


class FormatError(ValueError):
    """Malformed or truncated file."""


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the offending field path."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""
