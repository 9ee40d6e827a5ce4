"""Exception hierarchy.  Everything raised deliberately by the library derives from :class:`LamamlError`."""


class LamamlError(Exception):
    """Base class for library errors."""


class ShapeError(LamamlError, ValueError):
    """Array or parameter-vector shapes do not agree."""


class NonFiniteError(LamamlError, FloatingPointError):
    """A NaN or infinity appeared in parameters, inputs, losses or gradients."""


class LabelError(LamamlError, ValueError):
    """Class index outside ``[0, n_classes)``."""


class ConfigError(LamamlError, ValueError):
    """Invalid experiment or trainer configuration.

    ``path`` names the offending field, e.g. ``"trainer.k"``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(LamamlError, ValueError):
    """Dataset too small for the requested stream, or unreadable."""


class IdxFormatError(DataError):
    """Malformed IDX file."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class MetricError(LamamlError, ValueError):
    """Metric requested on a record that cannot support it."""
