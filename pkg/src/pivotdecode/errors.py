"""Exception hierarchy shared by every module of the package."""


class PivotDecodeError(Exception):
    """Base class for all errors raised by pivotdecode."""


class RangeError(PivotDecodeError, ValueError):
    """A numeric argument or config field is outside its allowed range."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class LengthMismatch(PivotDecodeError, ValueError):
    pass


class IndexOutOfRange(PivotDecodeError, IndexError):
    pass


class NonFiniteError(PivotDecodeError, ValueError):
    pass


class ConfigError(PivotDecodeError, ValueError):
    pass


class VocabMismatch(PivotDecodeError, ValueError):
    pass


class ModelError(PivotDecodeError):
    pass


class TransportError(ModelError):
    pass


class ProtocolError(ModelError):
    pass


class AllMasked(PivotDecodeError):
    pass


class UnresolvedPivot(PivotDecodeError, KeyError):
    pass


class OverlapError(PivotDecodeError, ValueError):
    pass


class AlreadyWrapped(PivotDecodeError, ValueError):
    pass


class NoCandidate(PivotDecodeError, LookupError):
    pass


class ClientError(PivotDecodeError):
    pass


class ValidationError(PivotDecodeError, ValueError):
    pass


class ArityError(PivotDecodeError, ValueError):
    pass


class CorpusError(PivotDecodeError, ValueError):
    pass
