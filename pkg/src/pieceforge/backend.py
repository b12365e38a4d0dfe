"""Generative backend: request kinds, prompt templates, reply parsing.

Two interchangeable implementations answer the same request kinds: an HTTP
backend speaking the OpenAI-compatible chat-completion wire format, and a
deterministic scripted backend that plays back canned replies for offline
runs and tests.

Reply contract: testsuites and explanations come back as a single JSON
document inside one fenced block; code comes back as one fenced block.
Replies that violate the contract are retried with a correction preamble,
up to the configured retry budget.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Optional

import requests

from .errors import (
    BackendProtocolError,
    BackendUnreachableError,
    PreconditionError,
    ValidationError,
)
from .model import (
    CodeCandidate,
    ComparisonMode,
    PieceSpec,
    SuiteState,
    TestCase,
    TestSuite,
    canonicalize_value,
    content_hash,
    validate_spec,
)

API_KEY_ENV = "PIECEFORGE_API_KEY"

PLACEHOLDERS = ("spec", "suite", "failures", "feedback", "code")
_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


class RequestKind(str, Enum):
    GENERATE_TESTS = "generate_tests"
    EXPLAIN_TESTS = "explain_tests"
    REVISE_TESTS = "revise_tests"
    GENERATE_CODE = "generate_code"
    REPAIR_CODE = "repair_code"
    SUMMARIZE_FAILURE = "summarize_failure"


class FailureOutcome(str, Enum):
    WRONG_OUTPUT = "wrong_output"
    NONZERO_EXIT = "nonzero_exit"
    TIMEOUT = "timeout"
    MALFORMED_OUTPUT = "malformed_output"


TRUNCATION_MARKER = "…[truncated]"
EXCERPT_LIMIT = 2048


def truncate_excerpt(raw: bytes | str, limit: int = EXCERPT_LIMIT) -> str:
    """Cut text to at most `limit` UTF-8 bytes, marker included when cut."""
    data = raw.encode("utf-8", errors="replace") if isinstance(raw, str) else raw
    if len(data) <= limit:
        return data.decode("utf-8", errors="replace")
    marker_bytes = TRUNCATION_MARKER.encode("utf-8")
    keep = data[: limit - len(marker_bytes)]
    return keep.decode("utf-8", errors="ignore") + TRUNCATION_MARKER


# ---------------------------------------------------------------------------
# Configuration and templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    kind: str  # "http_chat" | "scripted"
    endpoint_url: str = ""
    model_name: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    request_timeout: float = 60.0
    script_path: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("http_chat", "scripted"):
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http_chat" and not self.endpoint_url:
            raise ValidationError("http_chat backend requires endpoint_url")
        if self.kind == "scripted" and not self.script_path:
            raise ValidationError("scripted backend requires script_path")
        if not math.isfinite(self.temperature) or not (0.0 <= self.temperature <= 2.0):
            raise ValidationError("temperature must be finite and within [0, 2]")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValidationError("request_timeout must be positive")

    def to_json_value(self) -> dict:
        out: dict = {
            "backend_id": self.backend_id,
            "kind": self.kind,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "request_timeout": self.request_timeout,
        }
        if self.kind == "http_chat":
            out["endpoint_url"] = self.endpoint_url
        else:
            out["script_path"] = self.script_path
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "BackendConfig":
        return cls(
            backend_id=data["backend_id"],
            kind=data["kind"],
            endpoint_url=data.get("endpoint_url", ""),
            model_name=data.get("model_name", ""),
            temperature=float(data.get("temperature", 0.0)),
            max_retries=int(data.get("max_retries", 3)),
            request_timeout=float(data.get("request_timeout", 60.0)),
            script_path=data.get("script_path", ""),
        )


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def __post_init__(self) -> None:
        for token in _PLACEHOLDER_RE.findall(self.body):
            if token not in PLACEHOLDERS:
                raise ValidationError(f"template {self.name!r} uses unknown placeholder {{{token}}}")

    def render(self, **values: str) -> str:
        text = self.body
        for name in PLACEHOLDERS:
            if f"{{{name}}}" in text:
                text = text.replace(f"{{{name}}}", values.get(name, ""))
        return text


DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    "generate_tests": PromptTemplate(
        "generate_tests",
        "You write input/output test cases for a small program.\n"
        "Piece specification:\n{spec}\n\n"
        "Reply with exactly one fenced code block containing a JSON document of the form\n"
        '{"cases": [{"name": ..., "input": ..., "expected": ..., "rationale": ...}]}\n'
        "Inputs and expected outputs must be JSON values.",
    ),
    "explain_tests": PromptTemplate(
        "explain_tests",
        "Explain every test case below so a domain expert can judge it without reading code.\n"
        "Piece specification:\n{spec}\n\nTest suite:\n{suite}\n\n"
        "Reply with one fenced block containing a JSON document of the form\n"
        '{"per_case": [{"case_id": ..., "restated_input": ..., "restated_expected": ..., "reasoning": ...}],'
        ' "coverage_notes": ...}\n'
        "Cover every case exactly once.",
    ),
    "revise_tests": PromptTemplate(
        "revise_tests",
        "Revise the test suite below according to the expert's feedback.\n"
        "Piece specification:\n{spec}\n\nCurrent suite:\n{suite}\n\nFeedback:\n{feedback}\n\n"
        "Reply with one fenced block containing a JSON document of the form\n"
        '{"cases": [...]} holding only cases to add or replace.',
    ),
    "generate_code": PromptTemplate(
        "generate_code",
        "Write the program described below. It must read one line of JSON from stdin,\n"
        "write one line of JSON to stdout, and exit 0.\n"
        "Piece specification:\n{spec}\n\nIt must pass this approved test suite:\n{suite}\n\n"
        "Reply with exactly one fenced code block containing only the program source.",
    ),
    "repair_code": PromptTemplate(
        "repair_code",
        "The program below fails some of its tests. Produce a corrected version.\n"
        "Piece specification:\n{spec}\n\nTest suite:\n{suite}\n\n"
        "Current source:\n{code}\n\nObserved failures:\n{failures}\n\n"
        "Reply with exactly one fenced code block containing only the corrected source.",
    ),
    "summarize_failure": PromptTemplate(
        "summarize_failure",
        "Summarize what went wrong in this run of a composed system, per component:\n{failures}\n"
        "Reply with a short plain-text summary.",
    ),
}


def load_templates(overrides: dict[str, str] | None = None) -> dict[str, PromptTemplate]:
    """Default templates with project-level body overrides applied."""
    templates = dict(DEFAULT_TEMPLATES)
    for name, body in (overrides or {}).items():
        templates[name] = PromptTemplate(name, body)
    return templates


# ---------------------------------------------------------------------------
# Explanations and failure digests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExplainedCase:
    case_id: str
    restated_input: str
    restated_expected: str
    reasoning: str

    def to_json_value(self) -> dict:
        return {
            "case_id": self.case_id,
            "restated_input": self.restated_input,
            "restated_expected": self.restated_expected,
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "ExplainedCase":
        return cls(
            case_id=data["case_id"],
            restated_input=data.get("restated_input", ""),
            restated_expected=data.get("restated_expected", ""),
            reasoning=data.get("reasoning", ""),
        )


@dataclass(frozen=True)
class SuiteExplanation:
    piece_id: str
    per_case: tuple[ExplainedCase, ...]
    coverage_notes: str = ""

    def covers_exactly(self, case_ids: tuple[str, ...]) -> bool:
        explained = [entry.case_id for entry in self.per_case]
        return sorted(explained) == sorted(case_ids) and len(set(explained)) == len(explained)

    def to_json_value(self) -> dict:
        return {
            "piece_id": self.piece_id,
            "per_case": [entry.to_json_value() for entry in self.per_case],
            "coverage_notes": self.coverage_notes,
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "SuiteExplanation":
        return cls(
            piece_id=data["piece_id"],
            per_case=tuple(ExplainedCase.from_json_value(e) for e in data.get("per_case", [])),
            coverage_notes=data.get("coverage_notes", ""),
        )


@dataclass(frozen=True)
class FailureEntry:
    case_id: str
    outcome: FailureOutcome
    actual: Optional[str]  # canonical text of the wrong output, when there was one
    stderr_excerpt: str = ""

    def to_json_value(self) -> dict:
        out: dict = {"case_id": self.case_id, "outcome": self.outcome.value,
                     "stderr_excerpt": self.stderr_excerpt}
        if self.actual is not None:
            out["actual"] = self.actual
        return out


@dataclass(frozen=True)
class FailureDigest:
    entries: tuple[FailureEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValidationError("a failure digest cannot be empty")

    def render(self) -> str:
        lines = []
        for entry in self.entries:
            line = f"- case {entry.case_id}: {entry.outcome.value}"
            if entry.actual is not None:
                line += f", actual output {entry.actual}"
            if entry.stderr_excerpt:
                line += f"\n  stderr: {entry.stderr_excerpt}"
            lines.append(line)
        return "\n".join(lines)

    def to_json_value(self) -> dict:
        return {"entries": [entry.to_json_value() for entry in self.entries]}


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class Backend:
    """One backend instance answers one request at a time."""

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.transcript: list[tuple[str, str]] = []  # (kind, prompt digest)
        self.prompts: list[str] = []  # raw prompts, in-memory only
        self._lock = threading.Lock()

    @property
    def backend_id(self) -> str:
        return self.cfg.backend_id

    def complete(self, kind: RequestKind, prompt: str) -> str:
        with self._lock:
            self.transcript.append((kind.value, content_hash(prompt)))
            self.prompts.append(prompt)
            return self._complete(kind, prompt)

    def _complete(self, kind: RequestKind, prompt: str) -> str:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Plays back canned replies per request kind, in order.

    Fully deterministic: the same script and the same request sequence yield
    byte-identical replies. Playback position is backend state.
    """

    def __init__(self, cfg: BackendConfig, script: dict | None = None):
        super().__init__(cfg)
        if script is None:
            with open(cfg.script_path, encoding="utf-8") as fh:
                script = json.load(fh)
        replies = script.get("replies")
        if not isinstance(replies, dict):
            raise ValidationError('script must be a JSON object {"replies": {...}}')
        self._replies: dict[str, list[str]] = {}
        for kind, entries in replies.items():
            try:
                RequestKind(kind)
            except ValueError:
                raise ValidationError(f"script contains unknown request kind {kind!r}") from None
            if not all(isinstance(e, str) for e in entries):
                raise ValidationError(f"script replies for {kind!r} must be strings")
            self._replies[kind] = list(entries)
        self._positions: dict[str, int] = {}

    def _complete(self, kind: RequestKind, prompt: str) -> str:
        entries = self._replies.get(kind.value, [])
        pos = self._positions.get(kind.value, 0)
        if pos >= len(entries):
            raise BackendProtocolError(
                f"scripted backend {self.backend_id!r} exhausted replies for {kind.value}"
            )
        self._positions[kind.value] = pos + 1
        return entries[pos]


class HttpChatBackend(Backend):
    """OpenAI-compatible chat-completion client.

    Network attempts are bounded by request_timeout and retried at most
    max_retries times with exponential backoff (base 1 s, factor 2, full
    jitter). The bearer token comes from the environment and is never
    persisted anywhere.
    """

    def __init__(self, cfg: BackendConfig, *,
                 session: Optional[requests.Session] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 rng: Optional[random.Random] = None):
        super().__init__(cfg)
        self._session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _complete(self, kind: RequestKind, prompt: str) -> str:
        body = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(self._rng.uniform(0.0, 1.0 * 2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    self.cfg.endpoint_url, json=body, headers=headers,
                    timeout=self.cfg.request_timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = BackendUnreachableError(
                    f"backend {self.backend_id!r} answered HTTP {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise BackendProtocolError(
                    f"backend {self.backend_id!r} answered HTTP {response.status_code}"
                )
            try:
                payload = response.json()
                return payload["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendProtocolError(
                    f"backend {self.backend_id!r} reply is not chat-completion shaped: {exc}"
                ) from exc
        raise BackendUnreachableError(
            f"backend {self.backend_id!r} unreachable after {self.cfg.max_retries + 1} attempts: {last_error}"
        )


def make_backend(cfg: BackendConfig, script: dict | None = None) -> Backend:
    if cfg.kind == "scripted":
        return ScriptedBackend(cfg, script=script)
    return HttpChatBackend(cfg)


def scripted_backend(replies: dict[str, list[str]], backend_id: str = "scripted",
                     max_retries: int = 3) -> ScriptedBackend:
    """In-memory scripted backend, the workhorse of offline tests."""
    cfg = BackendConfig(backend_id=backend_id, kind="scripted",
                        script_path="<memory>", max_retries=max_retries)
    return ScriptedBackend(cfg, script={"replies": replies})


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_fenced_block(reply: str) -> Optional[str]:
    """The first fenced block's content; None when the reply has none."""
    match = _FENCE_RE.search(reply)
    if match is None:
        return None
    return match.group(1)


def _parse_json_reply(reply: str) -> dict:
    block = extract_fenced_block(reply)
    text = block if block is not None else reply
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("reply document is not a JSON object")
    return doc


def _parse_case_list(doc: dict, start_index: int) -> list[TestCase]:
    raw_cases = doc.get("cases")
    if not isinstance(raw_cases, list) or not raw_cases:
        raise ValueError('reply document carries no "cases" list')
    cases = []
    for offset, raw in enumerate(raw_cases):
        if not isinstance(raw, dict) or "input" not in raw or "expected" not in raw:
            raise ValueError(f"case block {offset} lacks input/expected")
        n = start_index + offset
        cases.append(TestCase(
            case_id=raw.get("case_id") or f"case-{n}",
            name=raw.get("name") or f"case {n}",
            input=raw["input"],
            expected=raw["expected"],
            comparison=ComparisonMode.from_json_value(raw.get("comparison") or {}),
            rationale=raw.get("rationale", ""),
        ))
    return cases


def render_spec_text(spec: PieceSpec) -> str:
    lines = [f"{spec.title} ({spec.id})", spec.description]
    if spec.input_shape:
        lines.append(f"Input shape: {spec.input_shape}")
    if spec.output_shape:
        lines.append(f"Output shape: {spec.output_shape}")
    for hint in spec.hints:
        lines.append(f"Hint: {hint}")
    return "\n".join(lines)


def render_suite_text(suite: TestSuite) -> str:
    return canonicalize_value({"cases": [case.to_json_value() for case in suite.cases]})


_CORRECTION_PREAMBLE = (
    "Your previous reply could not be used ({reason}). "
    "Follow the required reply format exactly.\n\n"
)


def _retry_prompts(base_prompt: str, max_retries: int):
    """Yield the base prompt, then correction prompts for each retry."""
    yield base_prompt
    for _ in range(max_retries):
        yield _CORRECTION_PREAMBLE.format(reason="it did not follow the reply format") + base_prompt


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def generate_tests(spec: PieceSpec, template: PromptTemplate, backend: Backend,
                   suite_version: int = 1) -> TestSuite:
    """Ask the backend for a draft test suite for a piece."""
    violations = validate_spec(spec)
    if violations:
        raise PreconditionError(f"spec invalid: {'; '.join(map(str, violations))}")
    prompt_base = template.render(spec=render_spec_text(spec))
    last_reason = ""
    for prompt in _retry_prompts(prompt_base, backend.cfg.max_retries):
        reply = backend.complete(RequestKind.GENERATE_TESTS, prompt)
        try:
            cases = _parse_case_list(_parse_json_reply(reply), start_index=1)
        except ValueError as exc:
            last_reason = str(exc)
            continue
        return TestSuite(piece_id=spec.id, suite_version=suite_version,
                         cases=tuple(cases), state=SuiteState.DRAFT)
    raise BackendProtocolError(f"no usable testsuite reply after retries: {last_reason}")


def explain_tests(spec: PieceSpec, suite: TestSuite, template: PromptTemplate,
                  backend: Backend) -> SuiteExplanation:
    """Ask the backend to restate every case for expert review."""
    if not suite.cases:
        raise PreconditionError("cannot explain an empty suite")
    prompt_base = template.render(spec=render_spec_text(spec), suite=render_suite_text(suite))
    last_reason = ""
    for prompt in _retry_prompts(prompt_base, backend.cfg.max_retries):
        reply = backend.complete(RequestKind.EXPLAIN_TESTS, prompt)
        try:
            doc = _parse_json_reply(reply)
            per_case = tuple(ExplainedCase.from_json_value(e) for e in doc.get("per_case", []))
        except (ValueError, KeyError) as exc:
            last_reason = str(exc)
            continue
        explanation = SuiteExplanation(
            piece_id=suite.piece_id, per_case=per_case,
            coverage_notes=doc.get("coverage_notes", ""),
        )
        if explanation.covers_exactly(suite.case_ids()):
            return explanation
        last_reason = "explanation does not cover every case exactly once"
    raise BackendProtocolError(f"no covering explanation after retries: {last_reason}")


def apply_structural_feedback(suite: TestSuite, feedback: list) -> tuple[TestSuite, list[str]]:
    """Apply add/remove/modify items locally; returns (suite, changed case ids).

    Deterministic by construction: the backend is never consulted.
    """
    from .review import FeedbackItem, FeedbackKind  # local import to avoid a cycle

    cases = list(suite.cases)
    changed: list[str] = []
    for item in feedback:
        if item.kind is FeedbackKind.FREE_TEXT:
            continue
        if item.kind is FeedbackKind.ADD_CASE:
            new_case = item.build_case(default_index=len(cases) + 1)
            if any(c.case_id == new_case.case_id for c in cases):
                raise PreconditionError(f"case {new_case.case_id!r} already exists")
            cases.append(new_case)
            changed.append(new_case.case_id)
            continue
        idx = next((i for i, c in enumerate(cases) if c.case_id == item.case_id), None)
        if idx is None:
            raise PreconditionError(f"unknown case_id {item.case_id!r}")
        if item.kind is FeedbackKind.REMOVE_CASE:
            del cases[idx]
        else:  # MODIFY_CASE
            cases[idx] = item.merge_into(cases[idx])
            changed.append(item.case_id)
    if not cases:
        raise PreconditionError("feedback would leave the suite empty")
    return (
        TestSuite(piece_id=suite.piece_id, suite_version=suite.suite_version,
                  cases=tuple(cases), state=suite.state),
        changed,
    )


def revise_tests(spec: PieceSpec, suite: TestSuite, feedback: list,
                 template: PromptTemplate, backend: Backend) -> tuple[TestSuite, list[str]]:
    """One revision round; returns (Draft suite at version+1, changed case ids).

    Structured feedback is applied locally; only free-text feedback goes to
    the backend, whose returned cases are merged (replace by case_id, else
    append).
    """
    from .review import FeedbackKind  # local import to avoid a cycle

    if suite.state is not SuiteState.UNDER_REVIEW:
        raise PreconditionError("only a suite under review can be revised")
    if not feedback:
        raise PreconditionError("feedback must be non-empty")

    revised, changed = apply_structural_feedback(suite, feedback)
    free_texts = [item.text for item in feedback if item.kind is FeedbackKind.FREE_TEXT]
    cases = list(revised.cases)

    if free_texts:
        prompt_base = template.render(
            spec=render_spec_text(spec),
            suite=render_suite_text(revised),
            feedback="\n".join(f"- {text}" for text in free_texts),
        )
        last_reason = ""
        merged = None
        for prompt in _retry_prompts(prompt_base, backend.cfg.max_retries):
            reply = backend.complete(RequestKind.REVISE_TESTS, prompt)
            try:
                merged = _parse_case_list(_parse_json_reply(reply), start_index=len(cases) + 1)
                break
            except ValueError as exc:
                last_reason = str(exc)
        if merged is None:
            raise BackendProtocolError(f"no usable revision reply after retries: {last_reason}")
        for new_case in merged:
            idx = next((i for i, c in enumerate(cases) if c.case_id == new_case.case_id), None)
            if idx is None:
                cases.append(new_case)
            else:
                cases[idx] = new_case
            changed.append(new_case.case_id)

    return (
        TestSuite(piece_id=suite.piece_id, suite_version=suite.suite_version + 1,
                  cases=tuple(cases), state=SuiteState.DRAFT),
        changed,
    )


def _extract_code(reply: str) -> Optional[str]:
    block = extract_fenced_block(reply)
    if block is None:
        return None
    return block


def generate_code(spec: PieceSpec, suite: TestSuite, template: PromptTemplate,
                  backend: Backend, origin_iteration: int = 1) -> CodeCandidate:
    """Ask the backend for an implementation of an approved suite."""
    if suite.state is not SuiteState.APPROVED:
        raise PreconditionError("code generation requires an approved suite")
    prompt_base = template.render(spec=render_spec_text(spec), suite=render_suite_text(suite))
    return _complete_code(backend, RequestKind.GENERATE_CODE, prompt_base, spec, origin_iteration)


def repair_code(spec: PieceSpec, suite: TestSuite, prev: CodeCandidate,
                failures: FailureDigest, template: PromptTemplate, backend: Backend,
                origin_iteration: int) -> CodeCandidate:
    """Feed failures back to the backend for a corrected candidate."""
    prompt_base = template.render(
        spec=render_spec_text(spec),
        suite=render_suite_text(suite),
        code=prev.source,
        failures=failures.render(),
    )
    return _complete_code(backend, RequestKind.REPAIR_CODE, prompt_base, spec, origin_iteration)


def _complete_code(backend: Backend, kind: RequestKind, prompt_base: str,
                   spec: PieceSpec, origin_iteration: int) -> CodeCandidate:
    for prompt in _retry_prompts(prompt_base, backend.cfg.max_retries):
        reply = backend.complete(kind, prompt)
        source = _extract_code(reply)
        if source is not None:
            return CodeCandidate.from_source(
                source=source,
                runner_profile=spec.runner_profile,
                produced_at=utc_now(),
                origin_iteration=origin_iteration,
                backend_id=backend.backend_id,
            )
    raise BackendProtocolError("no fenced code block in any reply")
