"""Exception hierarchy shared by every module."""


class DaugError(Exception):
    """Base class for all package errors."""


class DataIntegrityError(DaugError):
    """Input data is malformed: non-finite values, missing poses, bad records."""


class FormatError(DataIntegrityError):
    """A binary file does not follow the record layout."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(DataIntegrityError):
    """A JSON document is missing a field or carries an invalid value."""


class InvalidBoxError(DaugError, ValueError):
    """Box has a non-positive size component."""


class FrameMismatchError(DaugError, ValueError):
    """Point cloud carries the wrong coordinate-frame tag for the operation."""


class InvalidBoundsError(DaugError, ValueError):
    pass


class OutOfMapError(DaugError, ValueError):
    pass


class OutOfCropError(DaugError, ValueError):
    pass


class EmptyObjectError(DaugError):
    """No cloud points fall inside the box being extracted."""


class GroundingError(DaugError):
    pass


class ConfigError(DaugError, ValueError):
    """Invalid configuration or precondition violation."""


class SpecError(ConfigError):
    """Synthetic-scene spec is inconsistent (e.g. overlapping actors)."""
