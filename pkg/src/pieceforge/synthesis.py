"""Automated code production against an approved testsuite.

The loop needs no human: generate a candidate, run the suite, feed the
failures back for a repair, repeat. It stops on the first candidate that
passes everything, or with a budget exhaustion, a stagnation (the backend
resubmitted a candidate it already tried), or a backend error. Every
candidate and every iteration is persisted, so a run can be audited after
the fact.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from . import backend as backend_ops
from .backend import (
    Backend,
    FailureDigest,
    FailureEntry,
    FailureOutcome,
    load_templates,
    truncate_excerpt,
    utc_now,
)
from .errors import BackendError, PreconditionError, SpawnError, ValidationError
from .model import (
    CodeCandidate,
    PieceSpec,
    SuiteState,
    TestSuite,
    canonicalize_value,
    compare_outputs,
)
from .runner import ExecStatus, RunnerProfile, execute_piece
from .store import (
    CANDIDATE_PRODUCED,
    RUN_COMPLETED,
    SYSTEM_ACTOR,
    ProjectStore,
    backend_actor,
)


@dataclass(frozen=True)
class LoopBudget:
    max_iterations: int = 8
    wall_clock_limit: float = 600.0
    parallel_tests: int = 4

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.wall_clock_limit <= 0:
            raise ValidationError("wall_clock_limit must be positive")
        if self.parallel_tests < 1:
            raise ValidationError("parallel_tests must be >= 1")

    @classmethod
    def from_json_value(cls, data: dict) -> "LoopBudget":
        return cls(
            max_iterations=int(data.get("max_iterations", 8)),
            wall_clock_limit=float(data.get("wall_clock_limit", 600.0)),
            parallel_tests=int(data.get("parallel_tests", 4)),
        )

    def to_json_value(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "wall_clock_limit": self.wall_clock_limit,
            "parallel_tests": self.parallel_tests,
        }


# ---------------------------------------------------------------------------
# Suite execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseResult:
    case_id: str
    passed: bool
    outcome: str  # "pass" or a FailureOutcome value
    detail: str = ""
    actual: Optional[str] = None  # canonical text of the produced output
    stderr_excerpt: str = ""
    duration: float = 0.0

    def to_json_value(self) -> dict:
        out: dict = {"case_id": self.case_id, "passed": self.passed,
                     "outcome": self.outcome, "duration": self.duration}
        if self.detail:
            out["detail"] = self.detail
        if self.actual is not None:
            out["actual"] = self.actual
        if self.stderr_excerpt:
            out["stderr_excerpt"] = self.stderr_excerpt
        return out


@dataclass(frozen=True)
class SuiteRunReport:
    candidate_id: str
    suite_version: int
    results: tuple[CaseResult, ...]

    @property
    def passed_all(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def passed_count(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def failing_case_ids(self) -> tuple[str, ...]:
        return tuple(r.case_id for r in self.results if not r.passed)

    def failure_digest(self) -> FailureDigest:
        entries = tuple(
            FailureEntry(case_id=r.case_id, outcome=FailureOutcome(r.outcome),
                         actual=r.actual, stderr_excerpt=r.stderr_excerpt)
            for r in self.results if not r.passed
        )
        return FailureDigest(entries=entries)

    def to_json_value(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "suite_version": self.suite_version,
            "results": [r.to_json_value() for r in self.results],
        }


def _run_case(source: str, profile: RunnerProfile, case) -> CaseResult:
    execution = execute_piece(source, profile, case.input)
    stderr_excerpt = truncate_excerpt(execution.stderr) if execution.stderr else ""
    if execution.status is ExecStatus.SPAWN_ERROR:
        raise SpawnError(f"case {case.case_id!r}: {execution.detail}")
    if execution.status is not ExecStatus.OK:
        return CaseResult(case_id=case.case_id, passed=False,
                          outcome=execution.status.value, detail=execution.detail,
                          stderr_excerpt=stderr_excerpt, duration=execution.duration)
    report = compare_outputs(case.expected, execution.output, case.comparison)
    actual = canonicalize_value(execution.output)
    if report.matched:
        return CaseResult(case_id=case.case_id, passed=True, outcome="pass",
                          actual=actual, duration=execution.duration)
    return CaseResult(case_id=case.case_id, passed=False,
                      outcome=FailureOutcome.WRONG_OUTPUT.value, detail=report.detail,
                      actual=actual, stderr_excerpt=stderr_excerpt,
                      duration=execution.duration)


def run_suite(candidate: CodeCandidate, suite: TestSuite, profile: RunnerProfile,
              parallel_tests: int = 4) -> SuiteRunReport:
    """Run every approved case against the candidate, keeping suite order.

    Cases may execute concurrently; results are reported in suite order
    regardless of completion order. A spawn failure means the environment,
    not the candidate, is broken, so it aborts with an exception instead of
    producing a report.
    """
    if suite.state is not SuiteState.APPROVED:
        raise PreconditionError("run_suite requires an approved suite")
    if parallel_tests <= 1 or len(suite.cases) == 1:
        results = [_run_case(candidate.source, profile, case) for case in suite.cases]
    else:
        with ThreadPoolExecutor(max_workers=min(parallel_tests, len(suite.cases))) as pool:
            results = list(pool.map(
                lambda case: _run_case(candidate.source, profile, case), suite.cases))
    return SuiteRunReport(candidate_id=candidate.candidate_id,
                          suite_version=suite.suite_version, results=tuple(results))


# ---------------------------------------------------------------------------
# Static checks and candidate ranking
# ---------------------------------------------------------------------------

def static_checks(source: str, profile: RunnerProfile) -> tuple[int, str]:
    """(violation count, checker output) for the profile's static checker.

    No configured checker means the gate is disabled: zero violations.
    Violations are the non-empty lines the checker prints; a checker that
    fails silently still counts as one violation.
    """
    if not profile.static_check_command:
        return 0, ""
    with tempfile.TemporaryDirectory(prefix="check-") as workdir:
        src_path = os.path.join(workdir, "piece" + profile.file_extension)
        with open(src_path, "w", encoding="utf-8") as fh:
            fh.write(source)
        argv = [part.replace("{file}", src_path) for part in profile.static_check_command]
        try:
            proc = subprocess.run(
                argv, capture_output=True, cwd=workdir,
                env={k: v for k, v in profile.env}, timeout=profile.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SpawnError(f"static checker failed to run: {exc}") from exc
    text = (proc.stdout.decode("utf-8", errors="replace")
            + proc.stderr.decode("utf-8", errors="replace"))
    violations = sum(1 for line in text.splitlines() if line.strip())
    if proc.returncode != 0 and violations == 0:
        violations = 1
    return violations, text


@dataclass(frozen=True)
class RankedCandidate:
    candidate: CodeCandidate
    passes_all: bool
    static_violations: int

    def key(self) -> tuple:
        return (
            0 if self.passes_all else 1,
            self.static_violations,
            len(self.candidate.source.encode("utf-8")),
            self.candidate.candidate_id,
        )

    def to_json_value(self) -> dict:
        return {
            "candidate_id": self.candidate.candidate_id,
            "passes_all": self.passes_all,
            "static_violations": self.static_violations,
            "source_length": len(self.candidate.source.encode("utf-8")),
        }


def rank_candidates(entries: list[RankedCandidate]) -> list[RankedCandidate]:
    """Best first: passing, then fewest violations, shortest, id as tiebreak.

    The key is a total order over distinct candidates, so the result does
    not depend on the input order.
    """
    if not entries:
        raise PreconditionError("cannot rank an empty candidate pool")
    return sorted(entries, key=RankedCandidate.key)


# ---------------------------------------------------------------------------
# The repair loop
# ---------------------------------------------------------------------------

class LoopStatus(str, Enum):
    SUCCESS = "success"
    EXHAUSTED = "exhausted"
    STAGNATED = "stagnated"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class RepairIteration:
    index: int
    candidate_id: str
    report: SuiteRunReport
    static_violations: int
    duration: float = 0.0
    repeated: bool = False

    def to_json_value(self) -> dict:
        return {
            "index": self.index,
            "candidate_id": self.candidate_id,
            "passed": self.report.passed_count,
            "failed": len(self.report.results) - self.report.passed_count,
            "total": len(self.report.results),
            "failing_case_ids": list(self.report.failing_case_ids),
            "static_violations": self.static_violations,
            "duration": self.duration,
            "repeated": self.repeated,
        }


@dataclass(frozen=True)
class LoopOutcome:
    status: LoopStatus
    run_id: str
    piece_id: str
    suite_version: int
    iterations: tuple[RepairIteration, ...]
    total_duration: float
    winner: Optional[CodeCandidate] = None  # present only on success
    error: str = ""

    def to_json_value(self) -> dict:
        out: dict = {
            "status": self.status.value,
            "run_id": self.run_id,
            "piece_id": self.piece_id,
            "suite_version": self.suite_version,
            "iterations": [record.to_json_value() for record in self.iterations],
            "total_duration": self.total_duration,
        }
        if self.winner is not None:
            out["winner"] = self.winner.candidate_id
        if self.error:
            out["error"] = self.error
        return out


def produce_code(store: ProjectStore, spec: PieceSpec, suite: TestSuite,
                 backend: Backend, budget: LoopBudget = LoopBudget(),
                 profile: Optional[RunnerProfile] = None,
                 on_update: Optional[Callable[[dict], None]] = None) -> LoopOutcome:
    """Generate-run-repair until the suite passes or the budget runs out.

    Stopping rules, in order of precedence per iteration: a passing
    candidate wins; a candidate already tried this run means the loop is
    stagnating; iteration and wall-clock budgets end the run as exhausted.
    Backend failures end the run with backend_error rather than raising, so
    partial progress stays recorded. State is persisted after every
    iteration, making the loop safe to cancel between iterations.
    """
    if suite.state is not SuiteState.APPROVED:
        raise PreconditionError("the code loop requires an approved suite")
    if profile is None:
        profile = store.load_config().profile(spec.runner_profile)
    templates = load_templates(store.load_config().templates)

    run_id = store.new_run_id()
    started = time.monotonic()
    state: dict = {
        "run_id": run_id,
        "kind": "synthesis",
        "piece_id": spec.id,
        "suite_version": suite.suite_version,
        "status": "running",
        "seq": 0,
        "started_at": utc_now(),
        "budget": budget.to_json_value(),
        "iterations": [],
    }

    def push() -> None:
        state["seq"] += 1
        store.save_run_state(run_id, state)
        if on_update is not None:
            on_update(dict(state))

    push()

    iterations: list[RepairIteration] = []
    seen: set[str] = set()
    prev: Optional[CodeCandidate] = None
    digest: Optional[FailureDigest] = None
    status: LoopStatus
    winner: Optional[CodeCandidate] = None
    error = ""
    index = 1

    while True:
        if index > budget.max_iterations:
            status = LoopStatus.EXHAUSTED
            error = f"no passing candidate within {budget.max_iterations} iterations"
            break
        if index > 1 and time.monotonic() - started > budget.wall_clock_limit:
            status = LoopStatus.EXHAUSTED
            error = f"wall clock limit of {budget.wall_clock_limit}s exceeded"
            break

        iter_started = time.monotonic()
        try:
            if prev is None:
                candidate = backend_ops.generate_code(
                    spec, suite, templates["generate_code"], backend,
                    origin_iteration=index)
            else:
                candidate = backend_ops.repair_code(
                    spec, suite, prev, digest, templates["repair_code"], backend,
                    origin_iteration=index)
        except BackendError as exc:
            status = LoopStatus.BACKEND_ERROR
            error = str(exc)
            break

        store.save_candidate(spec.id, candidate, profile.file_extension)
        repeated = candidate.candidate_id in seen
        report = run_suite(candidate, suite, profile, budget.parallel_tests)
        violations, _ = static_checks(candidate.source, profile)
        iteration = RepairIteration(
            index=index,
            candidate_id=candidate.candidate_id,
            report=report,
            static_violations=violations,
            duration=time.monotonic() - iter_started,
            repeated=repeated,
        )
        iterations.append(iteration)
        state["iterations"].append(iteration.to_json_value())
        store.append_event(
            backend_actor(backend.backend_id), CANDIDATE_PRODUCED,
            [f"candidate:{spec.id}/{candidate.candidate_id}",
             f"suite:{spec.id}@{suite.suite_version}"],
            payload=iteration.to_json_value(),
        )
        push()

        if report.passed_all:
            status = LoopStatus.SUCCESS
            winner = candidate
            break
        if repeated:
            status = LoopStatus.STAGNATED
            error = f"candidate {candidate.candidate_id} resubmitted at iteration {index}"
            break
        seen.add(candidate.candidate_id)
        prev = candidate
        digest = report.failure_digest()
        index += 1

    total_duration = time.monotonic() - started
    state["status"] = status.value
    state["finished_at"] = utc_now()
    state["total_duration"] = total_duration
    if winner is not None:
        state["winner"] = winner.candidate_id
    if error:
        state["error"] = error
    push()
    if winner is not None:
        store.pin_candidate(spec.id, winner.candidate_id)
    outcome = LoopOutcome(status=status, run_id=run_id, piece_id=spec.id,
                          suite_version=suite.suite_version,
                          iterations=tuple(iterations),
                          total_duration=total_duration, winner=winner, error=error)
    store.append_event(SYSTEM_ACTOR, RUN_COMPLETED,
                       [f"run:{run_id}", f"suite:{spec.id}@{suite.suite_version}"],
                       payload=outcome.to_json_value())
    return outcome


def produce_pool(store: ProjectStore, spec: PieceSpec, suite: TestSuite,
                 backend: Backend, count: int, budget: LoopBudget = LoopBudget(),
                 profile: Optional[RunnerProfile] = None) -> list[RankedCandidate]:
    """Pool mode: several independent candidates, ranked instead of repaired."""
    if suite.state is not SuiteState.APPROVED:
        raise PreconditionError("the code loop requires an approved suite")
    if count < 1:
        raise PreconditionError("candidate pool size must be >= 1")
    if profile is None:
        profile = store.load_config().profile(spec.runner_profile)
    templates = load_templates(store.load_config().templates)
    entries: list[RankedCandidate] = []
    seen: set[str] = set()
    for n in range(count):
        candidate = backend_ops.generate_code(
            spec, suite, templates["generate_code"], backend, origin_iteration=n + 1)
        if candidate.candidate_id in seen:
            continue
        seen.add(candidate.candidate_id)
        store.save_candidate(spec.id, candidate, profile.file_extension)
        report = run_suite(candidate, suite, profile, budget.parallel_tests)
        violations, _ = static_checks(candidate.source, profile)
        entries.append(RankedCandidate(
            candidate=candidate,
            passes_all=report.passed_all,
            static_violations=violations,
        ))
    return rank_candidates(entries)
