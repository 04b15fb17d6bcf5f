"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration or precondition on inputs."""


class ShapeError(ValueError):
    """Tensor shape incompatible with a layer; the message names the layer."""


class UsageError(RuntimeError):
    """API called out of order (e.g. backward before forward)."""


class DataFormatError(ValueError):
    """Malformed or truncated data file."""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} (byte offset {offset}): {message}")
