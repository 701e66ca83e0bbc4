"""Exception hierarchy shared by every getd module."""


class GetdError(Exception):
    """Base class for all library errors."""


class DimensionError(GetdError, ValueError):
    """Tensor or vector shapes are incompatible."""


class CapacityError(GetdError, MemoryError):
    """A dense materialization would exceed the configured element cap."""


class VocabError(GetdError, IndexError):
    """An entity or relation id is outside the model vocabulary."""


class ConfigurationError(GetdError, ValueError):
    """Model, training or experiment settings are inconsistent."""


class DataError(GetdError, ValueError):
    """Malformed or inconsistent knowledge-base data."""


class DomainError(GetdError, ValueError):
    """Input outside the mathematical domain of a construction (e.g. non-binary)."""


class InfeasibleError(ConfigurationError):
    """Requested sizes admit no valid construction (reshape, synthetic counts)."""
