"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateVarianceError(ValueError):
    """Batch statistics cannot be computed from a single element per channel."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (e.g. backward on a non-scalar)."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``line`` is the 1-based line number in the config file when known and
    ``key`` the offending field path.
    """

    def __init__(self, message, line=None, key=None):
        self.message = message
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)


class DataFormatError(ValueError):
    """Dataset file does not follow the expected on-disk layout."""


class NumericalError(FloatingPointError):
    """A loss or activation became non-finite during training."""
