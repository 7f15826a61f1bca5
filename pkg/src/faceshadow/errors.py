"""Exception taxonomy shared across the package."""


class FaceShadowError(Exception):
    """Base class for all package errors."""


class DimensionError(FaceShadowError, ValueError):
    """Array shapes do not match the declared contract."""


class NumericError(FaceShadowError, ValueError):
    """Non-finite or out-of-domain numeric input."""


class ValidationError(FaceShadowError, ValueError):
    """A value violates its declared range or invariant."""


class ConfigError(FaceShadowError, ValueError):
    """Inconsistent or out-of-range configuration."""


class SessionStateError(FaceShadowError, RuntimeError):
    """Operation called in the wrong session phase (e.g. before warmup)."""


class MotionExtractionError(FaceShadowError):
    """A frame carries no recoverable motion parameters; the frame is skippable."""


class FrameDecodeError(FaceShadowError):
    """Frame payload could not be decoded into a grid."""


class TrainingDivergedError(FaceShadowError):
    """Non-finite gradient encountered; training aborted."""


class WireError(FaceShadowError):
    """Base class for wire-protocol errors."""


class ProtocolError(WireError):
    """Bad magic or an invariant violation inside a decoded message."""


class IncompleteMessageError(WireError):
    """Byte stream ends before the declared message length."""


class CorruptFrameError(WireError):
    """Declared sizes are inconsistent or exceed hard caps."""
