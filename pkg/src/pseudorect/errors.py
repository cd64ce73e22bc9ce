"""Exception hierarchy shared by all modules."""


class PseudoRectError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PseudoRectError, ValueError):
    """A value violates a domain-type invariant."""


class MissingAnchor(PseudoRectError):
    """The anchor metric was asked to compare a detection without an anchor id."""


class GeometryMismatch(PseudoRectError):
    """Geometry variant does not fit the requested metric, or sets mix variants."""


class Unsupported3D(PseudoRectError):
    """Operation only defined for 2D boxes."""


class ShapeMismatch(PseudoRectError):
    """Parameter arrays of incompatible shapes."""


class ConfigError(PseudoRectError):
    """Inconsistent or invalid configuration."""


class ParseError(PseudoRectError):
    """A dump file line is not valid JSON."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(PseudoRectError):
    """A dump record is missing a field or violates an invariant."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IncompatibleDumps(PseudoRectError):
    """Detection and ground-truth dumps cover different image ids."""


class IoError(PseudoRectError):
    """Input or output file could not be read or written."""
