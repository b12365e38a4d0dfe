"""Shared domain types, canonical value encoding, and output comparison.

Everything exchanged with pieces is a JSON-representable value. The canonical
text form defined here is the bit-exact encoding used for content hashes,
golden files, harness stdin, and the audit log: object keys sorted by code
point, no insignificant whitespace, integer-valued numbers rendered without a
trailing ".0", UTF-8 text.

All types are immutable values and all operations are pure functions.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional

from .errors import EncodingError, ValidationError

JSONValue = Any  # None | bool | int | float | str | list | dict

SLUG_RE = re.compile(r"^[a-z0-9-]{1,64}$")


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

def canonicalize_value(value: JSONValue) -> str:
    """Encode a JSON-representable value as deterministic canonical text."""
    parts: list[str] = []
    _encode(value, parts)
    return "".join(parts)


def _encode(value: JSONValue, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(_encode_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value.keys())):
            if not isinstance(key, str):
                raise EncodingError(f"object key {key!r} is not a string")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    else:
        raise EncodingError(f"value of type {type(value).__name__} is not JSON-representable")


def _encode_float(value: float) -> str:
    if math.isnan(value) or math.isinf(value):
        raise EncodingError(f"non-finite number {value!r} cannot be encoded")
    if value == 0.0:
        return "0"  # also normalizes -0.0
    text = repr(value)
    # integer-valued floats lose the ".0" so 3.0 and 3 share one encoding
    if "e" not in text and "E" not in text and text.endswith(".0"):
        return text[:-2]
    return text


def parse_canonical(text: str) -> JSONValue:
    """Inverse of canonicalize_value (accepts any JSON text)."""
    return json.loads(text)


def content_hash(data: bytes | str) -> str:
    """Hex digest identifying a byte string; the identity of code candidates."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def value_digest(value: JSONValue) -> str:
    """Hash of the canonical encoding of a value."""
    return content_hash(canonicalize_value(value))


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

class ComparisonKind(str, Enum):
    EXACT_CANONICAL = "exact_canonical"
    NUMERIC_TOLERANCE = "numeric_tolerance"
    REGEX_MATCH = "regex_match"


@dataclass(frozen=True)
class ComparisonMode:
    kind: ComparisonKind = ComparisonKind.EXACT_CANONICAL
    abs_eps: float = 1e-9
    rel_eps: float = 1e-9
    pattern: str = ""

    def validate(self) -> None:
        if self.kind is ComparisonKind.NUMERIC_TOLERANCE:
            if self.abs_eps < 0 or self.rel_eps < 0:
                raise ValidationError("numeric_tolerance requires abs_eps >= 0 and rel_eps >= 0")
            if not (math.isfinite(self.abs_eps) and math.isfinite(self.rel_eps)):
                raise ValidationError("tolerances must be finite")
        elif self.kind is ComparisonKind.REGEX_MATCH:
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise ValidationError(f"regex_match pattern does not compile: {exc}") from exc

    def to_json_value(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.kind is ComparisonKind.NUMERIC_TOLERANCE:
            out["abs_eps"] = self.abs_eps
            out["rel_eps"] = self.rel_eps
        elif self.kind is ComparisonKind.REGEX_MATCH:
            out["pattern"] = self.pattern
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "ComparisonMode":
        try:
            kind = ComparisonKind(data.get("kind", "exact_canonical"))
        except ValueError as exc:
            raise ValidationError(f"unknown comparison kind {data.get('kind')!r}") from exc
        mode = cls(
            kind=kind,
            abs_eps=float(data.get("abs_eps", 1e-9)),
            rel_eps=float(data.get("rel_eps", 1e-9)),
            pattern=data.get("pattern", ""),
        )
        mode.validate()
        return mode


EXACT = ComparisonMode(kind=ComparisonKind.EXACT_CANONICAL)


@dataclass(frozen=True)
class MatchReport:
    matched: bool
    detail: str = ""

    def __post_init__(self) -> None:
        if self.matched and self.detail:
            raise ValidationError("a matched report carries no detail")


def compare_outputs(expected: JSONValue, actual: JSONValue, mode: ComparisonMode = EXACT) -> MatchReport:
    """Decide whether an actual piece output satisfies the expected value."""
    mode.validate()
    if mode.kind is ComparisonKind.EXACT_CANONICAL:
        return _compare_exact(expected, actual)
    if mode.kind is ComparisonKind.NUMERIC_TOLERANCE:
        detail = _compare_numeric(expected, actual, mode.abs_eps, mode.rel_eps, path="$")
        return MatchReport(True) if detail is None else MatchReport(False, detail)
    # regex_match
    if not isinstance(actual, str):
        return MatchReport(False, f"type: regex_match requires a string actual, got {_type_name(actual)}")
    if re.fullmatch(mode.pattern, actual) is not None:
        return MatchReport(True)
    return MatchReport(False, f"pattern {mode.pattern!r} does not match {_excerpt(actual)}")


def _compare_exact(expected: JSONValue, actual: JSONValue) -> MatchReport:
    exp_text = canonicalize_value(expected)
    act_text = canonicalize_value(actual)
    if exp_text == act_text:
        return MatchReport(True)
    idx = next(
        (i for i, (a, b) in enumerate(zip(exp_text, act_text)) if a != b),
        min(len(exp_text), len(act_text)),
    )
    return MatchReport(
        False,
        f"first difference at byte {idx}: expected {_excerpt(exp_text, idx)} != actual {_excerpt(act_text, idx)}",
    )


def _compare_numeric(expected: JSONValue, actual: JSONValue, abs_eps: float, rel_eps: float, path: str) -> Optional[str]:
    """None when congruent within tolerance, else a mismatch location."""
    if _is_number(expected) and _is_number(actual):
        if abs(actual - expected) <= abs_eps + rel_eps * abs(expected):
            return None
        return f"{path}: |{actual!r} - {expected!r}| exceeds tolerance"
    if isinstance(expected, dict) and isinstance(actual, dict):
        if set(expected) != set(actual):
            missing = sorted(set(expected) - set(actual))
            extra = sorted(set(actual) - set(expected))
            return f"{path}: key sets differ (missing {missing}, extra {extra})"
        for key in sorted(expected):
            detail = _compare_numeric(expected[key], actual[key], abs_eps, rel_eps, f"{path}.{key}")
            if detail is not None:
                return detail
        return None
    if isinstance(expected, (list, tuple)) and isinstance(actual, (list, tuple)):
        if len(expected) != len(actual):
            return f"{path}: length {len(actual)} != {len(expected)}"
        for i, (e, a) in enumerate(zip(expected, actual)):
            detail = _compare_numeric(e, a, abs_eps, rel_eps, f"{path}[{i}]")
            if detail is not None:
                return detail
        return None
    if type(expected) is type(actual) and expected == actual:
        return None
    return f"{path}: {_type_name(actual)} {_excerpt(canonicalize_value(actual))} != {_type_name(expected)} {_excerpt(canonicalize_value(expected))}"


def _is_number(value: JSONValue) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _type_name(value: JSONValue) -> str:
    return {type(None): "null", bool: "bool", int: "number", float: "number",
            str: "string", list: "array", dict: "object"}.get(type(value), type(value).__name__)


def _excerpt(text: str, around: int = 0, width: int = 40) -> str:
    start = max(0, around - width // 2)
    snippet = text[start:start + width]
    prefix = "…" if start > 0 else ""
    suffix = "…" if start + width < len(text) else ""
    return f"{prefix}{snippet}{suffix}"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PieceSpec:
    """The expert's natural-language specification of one piece."""

    id: str
    title: str
    description: str
    hints: tuple[str, ...] = ()
    input_shape: str = ""
    output_shape: str = ""
    runner_profile: str = "default"
    version: int = 1

    def to_json_value(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "hints": list(self.hints),
            "input_shape": self.input_shape,
            "output_shape": self.output_shape,
            "runner_profile": self.runner_profile,
            "version": self.version,
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "PieceSpec":
        try:
            return cls(
                id=data["id"],
                title=data.get("title", ""),
                description=data.get("description", ""),
                hints=tuple(data.get("hints", []) or []),
                input_shape=data.get("input_shape", ""),
                output_shape=data.get("output_shape", ""),
                runner_profile=data.get("runner_profile", "default"),
                version=int(data.get("version", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"spec document malformed: missing or bad {exc}") from exc


@dataclass(frozen=True)
class Violation:
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}"


def validate_spec(spec: PieceSpec) -> list[Violation]:
    """Empty list when every PieceSpec invariant holds."""
    violations: list[Violation] = []
    if not isinstance(spec.id, str) or not SLUG_RE.fullmatch(spec.id or ""):
        if not spec.id:
            violations.append(Violation("id", "empty"))
        elif len(spec.id) > 64:
            violations.append(Violation("id", "longer than 64 characters"))
        else:
            violations.append(Violation("id", "illegal characters (want [a-z0-9-]{1,64})"))
    if not spec.description or not spec.description.strip():
        violations.append(Violation("description", "empty"))
    if not isinstance(spec.version, int) or isinstance(spec.version, bool) or spec.version < 1:
        violations.append(Violation("version", "must be an integer >= 1"))
    if not spec.runner_profile:
        violations.append(Violation("runner_profile", "empty"))
    if any(not isinstance(h, str) for h in spec.hints):
        violations.append(Violation("hints", "every hint must be text"))
    return violations


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    case_id: str
    name: str
    input: JSONValue
    expected: JSONValue
    comparison: ComparisonMode = EXACT
    rationale: str = ""

    def to_json_value(self) -> dict:
        return {
            "case_id": self.case_id,
            "name": self.name,
            "input": self.input,
            "expected": self.expected,
            "comparison": self.comparison.to_json_value(),
            "rationale": self.rationale,
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "TestCase":
        if "input" not in data or "expected" not in data:
            raise ValidationError("a test case needs both input and expected")
        return cls(
            case_id=data.get("case_id", ""),
            name=data.get("name", ""),
            input=data["input"],
            expected=data["expected"],
            comparison=ComparisonMode.from_json_value(data.get("comparison") or {}),
            rationale=data.get("rationale", ""),
        )


class SuiteState(str, Enum):
    DRAFT = "Draft"
    UNDER_REVIEW = "UnderReview"
    APPROVED = "Approved"


# legal state transitions for a testsuite under review
SUITE_TRANSITIONS: dict[SuiteState, tuple[SuiteState, ...]] = {
    SuiteState.DRAFT: (SuiteState.UNDER_REVIEW,),
    SuiteState.UNDER_REVIEW: (SuiteState.UNDER_REVIEW, SuiteState.APPROVED),
    SuiteState.APPROVED: (),
}


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # not a pytest class

    piece_id: str
    suite_version: int
    cases: tuple[TestCase, ...]
    state: SuiteState = SuiteState.DRAFT
    approved_by: Optional[str] = None
    approved_at: Optional[str] = None

    def __post_init__(self) -> None:
        if self.suite_version < 1:
            raise ValidationError("suite_version must be >= 1")
        if self.state is not SuiteState.DRAFT and not self.cases:
            raise ValidationError(f"a {self.state.value} suite cannot be empty")
        seen: set[str] = set()
        for case in self.cases:
            if case.case_id in seen:
                raise ValidationError(f"duplicate case_id {case.case_id!r}")
            seen.add(case.case_id)

    def case_ids(self) -> tuple[str, ...]:
        return tuple(case.case_id for case in self.cases)

    def with_state(self, state: SuiteState, approved_by: Optional[str] = None,
                   approved_at: Optional[str] = None) -> "TestSuite":
        if state not in SUITE_TRANSITIONS[self.state]:
            raise ValidationError(f"illegal suite transition {self.state.value} -> {state.value}")
        return replace(self, state=state, approved_by=approved_by, approved_at=approved_at)

    def to_json_value(self) -> dict:
        out: dict = {
            "piece_id": self.piece_id,
            "suite_version": self.suite_version,
            "cases": [case.to_json_value() for case in self.cases],
            "state": self.state.value,
        }
        if self.approved_by is not None:
            out["approved_by"] = self.approved_by
        if self.approved_at is not None:
            out["approved_at"] = self.approved_at
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "TestSuite":
        return cls(
            piece_id=data["piece_id"],
            suite_version=int(data["suite_version"]),
            cases=tuple(TestCase.from_json_value(c) for c in data.get("cases", [])),
            state=SuiteState(data.get("state", "Draft")),
            approved_by=data.get("approved_by"),
            approved_at=data.get("approved_at"),
        )

    def digest(self) -> str:
        return value_digest(self.to_json_value())


@dataclass(frozen=True)
class CodeCandidate:
    candidate_id: str
    source: str
    runner_profile: str
    produced_at: str
    origin_iteration: int
    backend_id: str

    def __post_init__(self) -> None:
        if self.candidate_id != content_hash(self.source):
            raise ValidationError("candidate_id must be the content hash of the source")
        if self.origin_iteration < 1:
            raise ValidationError("origin_iteration must be >= 1")

    @classmethod
    def from_source(cls, source: str, runner_profile: str, produced_at: str,
                    origin_iteration: int, backend_id: str) -> "CodeCandidate":
        return cls(
            candidate_id=content_hash(source),
            source=source,
            runner_profile=runner_profile,
            produced_at=produced_at,
            origin_iteration=origin_iteration,
            backend_id=backend_id,
        )

    def to_json_value(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "runner_profile": self.runner_profile,
            "produced_at": self.produced_at,
            "origin_iteration": self.origin_iteration,
            "backend_id": self.backend_id,
        }
