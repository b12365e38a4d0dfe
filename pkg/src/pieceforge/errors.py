"""Exception taxonomy shared across the package.

Domain outcomes (a test failing, a loop exhausting its budget, a fault being
found) are values, not exceptions. Exceptions are reserved for broken
preconditions, broken configuration, and broken infrastructure.
"""

from __future__ import annotations


class PieceForgeError(Exception):
    """Base class for all package errors."""


class PreconditionError(PieceForgeError):
    """An operation was called in a state its contract forbids."""


class ValidationError(PieceForgeError):
    """A value failed structural validation (bad config, bad payload)."""


class EncodingError(PieceForgeError):
    """A value cannot be canonically encoded (non-finite number, bad type)."""


class BackendError(PieceForgeError):
    """Base class for generative-backend failures."""


class BackendProtocolError(BackendError):
    """The backend answered, but never produced a usable reply."""


class BackendUnreachableError(BackendError):
    """The backend could not be reached after all retries."""


class SpawnError(PieceForgeError):
    """A child process could not be started: a configuration problem,
    never a test failure."""


class StoreError(PieceForgeError):
    """Base class for project-store failures."""


class NotFoundError(StoreError):
    """A referenced artifact does not exist in the project."""


class ConflictError(StoreError):
    """An operation collided with existing state (open session, held lock,
    non-empty directory, write to an immutable artifact)."""


class CorruptionError(StoreError):
    """Persisted state violates its own invariants (seq gap, torn line)."""
