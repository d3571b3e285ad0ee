class EcgError(Exception):
    """Base class for all errors raised by the toolkit."""


class InvalidRecord(EcgError, ValueError):
    pass


class ShapeError(EcgError, ValueError):
    pass


class CorruptCheckpoint(EcgError):
    pass


class UnsupportedVersion(EcgError):
    pass


class InvalidSplit(EcgError, ValueError):
    pass


class InputError(EcgError, ValueError):
    """Malformed user-supplied file or argument (maps to CLI exit code 2)."""
