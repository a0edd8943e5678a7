class InversorError(Exception):
    """Base class for all package errors."""


class ConfigurationError(InversorError):
    """A run was configured with missing or inconsistent parts."""


class ContractViolation(InversorError, ValueError):
    """An operation was called outside its precondition."""


class CapabilityError(InversorError):
    """The backend does not offer the requested capability."""


class BackendError(InversorError):
    """A transient backend failure (network, timeout, 5xx).

    Kept distinct from a legitimate negative-infinity score so callers can
    retry or mark the trial failed.
    """

    retryable = True


class ProtocolError(InversorError):
    """A remote peer sent a body that does not follow the wire format."""

    retryable = False
