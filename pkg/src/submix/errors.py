"""Exception hierarchy shared by all submix modules."""


class SubmixError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SubmixError):
    """Vectors or models with mismatched vocabulary sizes were combined."""


class ParameterError(SubmixError):
    """A numeric parameter is outside its documented domain."""


class CapacityError(SubmixError):
    """A request exceeds what the data can support (too few users, etc.)."""


class ConfigError(SubmixError):
    """Inconsistent or incomplete run configuration."""


class ModelFormatError(SubmixError):
    """A model file is corrupt or has an unsupported format version."""
