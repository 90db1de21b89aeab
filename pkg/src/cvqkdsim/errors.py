"""Exception hierarchy shared by all subsystems."""


class CvqkdError(Exception):
    """Base class for all package errors."""


class ConfigError(CvqkdError):
    """Invalid or inconsistent configuration."""


class DspError(CvqkdError):
    """Receiver DSP failure; frames raising this are flagged invalid."""


class PreambleNotFoundError(DspError):
    """No energy rise resembling a synchronization preamble was found."""


class PilotNotFoundError(DspError):
    """Fewer than two pilot tones above the detection threshold."""


class ClockRecoveryError(DspError):
    """Estimated clock ratio outside the plausible range."""


class SyncError(DspError):
    """Fine synchronization correlation peak below threshold."""


class CalibrationError(CvqkdError):
    """Degenerate or non-physical calibration data."""


class EstimationError(CvqkdError):
    """Parameter estimation failed (bad moments or missing records)."""


class ProtocolError(CvqkdError):
    """Classical-channel protocol failure."""


class MessageFormatError(ProtocolError):
    """Malformed wire message (bad magic or field layout)."""


class MessageTruncatedError(ProtocolError):
    """Message shorter than its declared lengths."""


class AuthenticationError(ProtocolError):
    """Authentication tag rejected."""


class StateMachineError(ProtocolError):
    """Message arrived in a session state where it is not legal."""
