"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract
    (shape mismatch, out-of-range parameter, misuse of state)."""


class DatasetFormatError(IOError):
    """Base class for dataset/checkpoint file parse failures."""


class MagicError(DatasetFormatError):
    """File does not start with the expected magic bytes."""


class TruncationError(DatasetFormatError):
    """File ended before the declared payload was read."""


class ShapeError(DatasetFormatError):
    """Declared shapes in the file header are inconsistent with the payload."""


class ConfigError(ValueError):
    """Invalid experiment configuration (bad TOML, bad field values)."""
