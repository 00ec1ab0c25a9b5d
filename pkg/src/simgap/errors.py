"""Exception types shared across the pipeline."""


class SimGapError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SimGapError, ValueError):
    """An argument violates a documented precondition."""


class SimulatorIOError(SimGapError):
    """Communication with an external simulator failed.

    The offending payload (raw line or partial message) is attached so the
    caller can log exactly what the child process produced.
    """

    def __init__(self, message, payload=None, location=None):
        super().__init__(message)
        self.payload = payload
        self.location = location


class UnsupportedOperationError(SimGapError):
    """The backend cannot perform the requested operation."""


class ResourceLimitError(SimGapError):
    """A configurable resource cap would be exceeded.

    ``required`` carries the size the request would have needed.
    """

    def __init__(self, message, required=None, cap=None):
        super().__init__(message)
        self.required = required
        self.cap = cap


class CorruptDatasetError(SimGapError):
    """A persisted dataset fails schema or integrity checks."""


class MissingArtifactError(SimGapError):
    """A pipeline stage requires an artifact a prior stage has not produced."""


class ConfigError(SimGapError):
    """Configuration file is invalid; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


class InfeasibleError(SimGapError):
    """The scenario LP admits no feasible point; names a violated row."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UnboundedError(SimGapError):
    """The scenario LP objective is unbounded below; carries a descent direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction
