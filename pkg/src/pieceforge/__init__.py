"""Expert-steered production of tested software pieces.

Experts describe small pieces of behavior in structured natural language;
a generative backend drafts executable test suites and candidate code.
Tests are refined with the expert in the loop until approved, code is
repaired automatically against the approved suite, and approved pieces
compose into dataflow graphs with integration checks and trace-based
fault localization. Every state change lands in an append-only audit log.
"""

from .errors import (
    BackendError,
    BackendProtocolError,
    BackendUnreachableError,
    ConflictError,
    CorruptionError,
    EncodingError,
    NotFoundError,
    PieceForgeError,
    PreconditionError,
    SpawnError,
    ValidationError,
)
from .model import (
    ComparisonMode,
    PieceSpec,
    SuiteState,
    TestCase,
    TestSuite,
    canonicalize_value,
    compare_outputs,
    content_hash,
    parse_canonical,
    validate_spec,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BackendProtocolError",
    "BackendUnreachableError",
    "ComparisonMode",
    "ConflictError",
    "CorruptionError",
    "EncodingError",
    "NotFoundError",
    "PieceForgeError",
    "PieceSpec",
    "PreconditionError",
    "SpawnError",
    "SuiteState",
    "TestCase",
    "TestSuite",
    "ValidationError",
    "canonicalize_value",
    "compare_outputs",
    "content_hash",
    "parse_canonical",
    "validate_spec",
    "__version__",
]
