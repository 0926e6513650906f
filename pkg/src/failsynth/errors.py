"""Exception hierarchy shared across the pipeline.

The CLI maps these onto distinct exit codes: schema errors (2), transport
errors (3), validation failures (4).
"""


class FailSynthError(Exception):
    """Base class for all package errors."""


class SchemaError(FailSynthError, ValueError):
    """Malformed record, label, or config content."""


class TransportError(FailSynthError):
    """A remote verifier/judge could not be reached or answered garbage.

    Rollouts hit by this are quarantined, not counted as rejected.
    """


class ValidationError(FailSynthError, ValueError):
    """A precondition or invariant check failed."""


class SceneError(ValidationError):
    """Scene geometry is unreachable or inconsistent."""


class CameraError(ValidationError):
    """Projection is undefined (point at or behind the camera plane)."""


class InsufficientTrackingError(ValidationError):
    """Too few reliably visible tracks to score temporal coherence."""
