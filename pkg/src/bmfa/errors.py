"""Exception sinks for the two CLI exit classes: validation (1) and runtime (2)."""


class BmfaError(Exception):
    """Base class for all package errors."""


class ValidationError(BmfaError):
    """Bad inputs, bad configuration, malformed files: exit code 1."""


class ShapeError(ValidationError):
    """Tensor or parameter shapes violate an operation's contract."""


class FormatError(ValidationError):
    """On-disk artifact has a bad magic, version, or structure."""


class EmptyAfterVadError(ValidationError):
    """Voice activity detection removed every frame of an utterance."""


class NumericError(BmfaError):
    """Non-finite values where finite ones are required: exit code 2."""
