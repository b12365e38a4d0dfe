"""Expert review of generated testsuites.

The expert never reads code. The backend restates every case in plain
language; the expert answers with feedback items, structured (add, remove,
modify a case) or free text. Structured feedback is applied locally and
deterministically; free text goes back to the backend for a revision.
Each round produces a new suite version, and only an expert can approve.

A piece has at most one open review session. Approval freezes the suite:
its stored bytes, and so its digest, never change afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from . import backend as backend_ops
from .backend import (
    Backend,
    SuiteExplanation,
    load_templates,
    utc_now,
)
from .errors import ConflictError, PreconditionError, ValidationError
from .model import SuiteState, TestCase, TestSuite
from .store import (
    EXPLANATION_ATTACHED,
    FEEDBACK_APPLIED,
    SUITE_APPROVED,
    SUITE_DRAFTED,
    ProjectStore,
    backend_actor,
    expert_actor,
)


class FeedbackKind(str, Enum):
    ADD_CASE = "add_case"
    REMOVE_CASE = "remove_case"
    MODIFY_CASE = "modify_case"
    FREE_TEXT = "free_text"


@dataclass(frozen=True)
class FeedbackItem:
    kind: FeedbackKind
    case_id: str = ""
    case: Optional[dict] = None
    text: str = ""

    def __post_init__(self) -> None:
        if self.kind is FeedbackKind.ADD_CASE:
            if not isinstance(self.case, dict) or "input" not in self.case \
                    or "expected" not in self.case:
                raise ValidationError("add_case feedback needs a case with input and expected")
        elif self.kind is FeedbackKind.REMOVE_CASE:
            if not self.case_id:
                raise ValidationError("remove_case feedback needs a case_id")
        elif self.kind is FeedbackKind.MODIFY_CASE:
            if not self.case_id or not isinstance(self.case, dict) or not self.case:
                raise ValidationError("modify_case feedback needs a case_id and changed fields")
        else:  # FREE_TEXT
            if not self.text.strip():
                raise ValidationError("free_text feedback needs non-empty text")

    def build_case(self, default_index: int) -> TestCase:
        assert self.kind is FeedbackKind.ADD_CASE and self.case is not None
        data = dict(self.case)
        data.setdefault("case_id", self.case_id or f"case-{default_index}")
        data.setdefault("name", f"case {default_index}")
        return TestCase.from_json_value(data)

    def merge_into(self, existing: TestCase) -> TestCase:
        assert self.kind is FeedbackKind.MODIFY_CASE and self.case is not None
        data = existing.to_json_value()
        for key in ("name", "input", "expected", "comparison", "rationale"):
            if key in self.case:
                data[key] = self.case[key]
        data["case_id"] = existing.case_id  # ids are stable; replace via remove+add
        return TestCase.from_json_value(data)

    def to_json_value(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.case_id:
            out["case_id"] = self.case_id
        if self.case is not None:
            out["case"] = self.case
        if self.text:
            out["text"] = self.text
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "FeedbackItem":
        return cls(
            kind=FeedbackKind(data["kind"]),
            case_id=data.get("case_id", ""),
            case=data.get("case"),
            text=data.get("text", ""),
        )


@dataclass(frozen=True)
class ReviewRound:
    round: int
    suite_version: int
    explanation: SuiteExplanation
    feedback: tuple[FeedbackItem, ...]

    def to_json_value(self) -> dict:
        return {
            "round": self.round,
            "suite_version": self.suite_version,
            "explanation": self.explanation.to_json_value(),
            "feedback": [item.to_json_value() for item in self.feedback],
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "ReviewRound":
        return cls(
            round=int(data["round"]),
            suite_version=int(data["suite_version"]),
            explanation=SuiteExplanation.from_json_value(data["explanation"]),
            feedback=tuple(FeedbackItem.from_json_value(i) for i in data.get("feedback", [])),
        )


@dataclass(frozen=True)
class ReviewSession:
    """One expert review of one piece's testsuite, across revision rounds.

    Invariant: len(history) == round - 1 while the session is open; each
    past round recorded what the expert saw and what they answered.
    """

    piece_id: str
    round: int
    suite_version: int
    explanation: SuiteExplanation
    open: bool = True
    started_at: str = ""
    history: tuple[ReviewRound, ...] = ()

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValidationError("review round must be >= 1")
        if len(self.history) != self.round - 1:
            raise ValidationError("review history must hold exactly round-1 entries")

    def to_json_value(self) -> dict:
        return {
            "piece_id": self.piece_id,
            "round": self.round,
            "suite_version": self.suite_version,
            "explanation": self.explanation.to_json_value(),
            "open": self.open,
            "started_at": self.started_at,
            "history": [entry.to_json_value() for entry in self.history],
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "ReviewSession":
        return cls(
            piece_id=data["piece_id"],
            round=int(data["round"]),
            suite_version=int(data["suite_version"]),
            explanation=SuiteExplanation.from_json_value(data["explanation"]),
            open=bool(data.get("open", True)),
            started_at=data.get("started_at", ""),
            history=tuple(ReviewRound.from_json_value(e) for e in data.get("history", [])),
        )


def _templates(store: ProjectStore) -> dict:
    return load_templates(store.load_config().templates)


def _suite_ref(piece_id: str, version: int) -> str:
    return f"suite:{piece_id}@{version}"


def draft_tests(store: ProjectStore, piece_id: str, backend: Backend) -> TestSuite:
    """Generate a fresh draft suite as the next suite version."""
    spec = store.load_spec(piece_id)
    version = store.latest_suite_version(piece_id) + 1
    suite = backend_ops.generate_tests(spec, _templates(store)["generate_tests"],
                                       backend, suite_version=version)
    store.save_suite(suite)
    store.append_event(backend_actor(backend.backend_id), SUITE_DRAFTED,
                       [_suite_ref(piece_id, version)], payload=suite.to_json_value())
    return suite


def current_session(store: ProjectStore, piece_id: str) -> Optional[ReviewSession]:
    data = store.load_review(piece_id)
    return ReviewSession.from_json_value(data) if data is not None else None


def start_review(store: ProjectStore, piece_id: str, backend: Backend) -> ReviewSession:
    """Open a review: draft a suite if needed, explain it, round 1.

    An existing draft (from an earlier generation step) is reviewed rather
    than thrown away; otherwise a fresh draft is generated first. Nothing is
    persisted until both backend calls have succeeded, so a backend failure
    leaves no half-open session behind.
    """
    session = current_session(store, piece_id)
    if session is not None and session.open:
        raise ConflictError(f"piece {piece_id!r} already has an open review session")
    spec = store.load_spec(piece_id)
    templates = _templates(store)

    version = store.latest_suite_version(piece_id)
    suite = store.load_suite(piece_id, version) if version else None
    if suite is None or suite.state is not SuiteState.DRAFT:
        suite = backend_ops.generate_tests(spec, templates["generate_tests"], backend,
                                           suite_version=version + 1)
        drafted = True
    else:
        drafted = False
    explanation = backend_ops.explain_tests(spec, suite, templates["explain_tests"],
                                            backend)

    if drafted:
        store.save_suite(suite)
        store.append_event(backend_actor(backend.backend_id), SUITE_DRAFTED,
                           [_suite_ref(piece_id, suite.suite_version)],
                           payload=suite.to_json_value())
    under_review = suite.with_state(SuiteState.UNDER_REVIEW)
    store.save_suite(under_review)
    store.save_explanation(piece_id, suite.suite_version, explanation.to_json_value())
    session = ReviewSession(
        piece_id=piece_id,
        round=1,
        suite_version=suite.suite_version,
        explanation=explanation,
        started_at=utc_now(),
    )
    store.save_review(piece_id, session.to_json_value())
    store.append_event(backend_actor(backend.backend_id), EXPLANATION_ATTACHED,
                       [_suite_ref(piece_id, suite.suite_version)],
                       payload=explanation.to_json_value())
    return session


def apply_feedback(store: ProjectStore, piece_id: str, feedback: list[FeedbackItem],
                   backend: Backend, expert: str) -> ReviewSession:
    """One review round: revise the suite, re-explain what changed."""
    session = current_session(store, piece_id)
    if session is None or not session.open:
        raise PreconditionError(f"piece {piece_id!r} has no open review session")
    if not feedback:
        raise PreconditionError("feedback must be non-empty")
    spec = store.load_spec(piece_id)
    suite = store.load_suite(piece_id, session.suite_version)
    templates = _templates(store)

    revised, changed_ids = backend_ops.revise_tests(
        spec, suite, feedback, templates["revise_tests"], backend)
    if not revised.cases:
        raise PreconditionError("feedback would leave the suite empty")
    revised = replace(revised, state=SuiteState.UNDER_REVIEW)
    store.save_suite(revised)

    # explanations are regenerated only for cases that changed; the rest carry over
    changed = tuple(c for c in revised.cases if c.case_id in set(changed_ids))
    fresh: dict[str, object] = {}
    if changed:
        sub_suite = TestSuite(piece_id=piece_id, suite_version=revised.suite_version,
                              cases=changed, state=SuiteState.DRAFT)
        sub_expl = backend_ops.explain_tests(spec, sub_suite, templates["explain_tests"],
                                             backend)
        fresh = {entry.case_id: entry for entry in sub_expl.per_case}
    carried = {entry.case_id: entry for entry in session.explanation.per_case}
    per_case = tuple(
        fresh.get(case.case_id) or carried[case.case_id] for case in revised.cases
    )
    explanation = SuiteExplanation(piece_id=piece_id, per_case=per_case,
                                   coverage_notes=session.explanation.coverage_notes)
    store.save_explanation(piece_id, revised.suite_version, explanation.to_json_value())

    session = ReviewSession(
        piece_id=piece_id,
        round=session.round + 1,
        suite_version=revised.suite_version,
        explanation=explanation,
        started_at=session.started_at,
        history=session.history + (
            ReviewRound(round=session.round, suite_version=session.suite_version,
                        explanation=session.explanation, feedback=tuple(feedback)),
        ),
    )
    store.save_review(piece_id, session.to_json_value())
    store.append_event(expert_actor(expert), FEEDBACK_APPLIED,
                       [_suite_ref(piece_id, suite.suite_version),
                        _suite_ref(piece_id, revised.suite_version)],
                       payload=[item.to_json_value() for item in feedback])
    return session


def approve_suite(store: ProjectStore, piece_id: str, expert: str) -> TestSuite:
    """Expert sign-off; the suite becomes the approved contract for code."""
    session = current_session(store, piece_id)
    if session is None or not session.open:
        raise PreconditionError(f"piece {piece_id!r} has no open review session")
    suite = store.load_suite(piece_id, session.suite_version)
    approved = suite.with_state(SuiteState.APPROVED, approved_by=expert,
                                approved_at=utc_now())
    store.save_suite(approved)
    store.save_review(piece_id, replace(session, open=False).to_json_value())
    store.append_event(expert_actor(expert), SUITE_APPROVED,
                       [_suite_ref(piece_id, suite.suite_version)],
                       payload=approved.to_json_value())
    return approved
