"""Exception hierarchy shared by all modules."""


class ModeshapError(Exception):
    """Base class for every error raised by the package."""


class InputError(ModeshapError, ValueError):
    """Rejected input, e.g. non-finite samples or too-short signals."""


class StructuralError(ModeshapError, ValueError):
    """Inconsistent shapes or lengths between related objects."""


class DegenerateSpectrumError(ModeshapError, ValueError):
    """A spectrum without energy was passed where energy is required."""


class ParameterError(ModeshapError, ValueError):
    """A parameter is outside its admissible range."""


class SizeError(ModeshapError, ValueError):
    """A problem is too large for the requested algorithm."""


class WindowingError(ModeshapError, ValueError):
    """Not enough history to build a feature window."""


class ConfigError(ModeshapError, ValueError):
    """Invalid run configuration."""


class IngestionError(ModeshapError, ValueError):
    """Malformed input file. The message names the offending line."""
