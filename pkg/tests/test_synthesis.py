"""The generate-run-repair loop: outcomes, budgets, ranking, persistence."""

from __future__ import annotations

import random

import pytest

from pieceforge.backend import scripted_backend, utc_now
from pieceforge.errors import PreconditionError, ValidationError
from pieceforge.model import CodeCandidate, SuiteState, content_hash
from pieceforge.runner import RunnerProfile, python_profile
from pieceforge.store import CANDIDATE_PRODUCED, RUN_COMPLETED
from pieceforge.synthesis import (
    LoopBudget,
    LoopStatus,
    RankedCandidate,
    produce_code,
    produce_pool,
    rank_candidates,
    run_suite,
    static_checks,
)

from conftest import (
    DOUBLE_CASES,
    PY_DOUBLE,
    PY_DOUBLE_OFF_BY_ONE,
    PY_IDENTITY,
    approved_piece,
    code_reply,
    double_spec,
    suite_from,
)

PROFILE = python_profile(timeout=5.0)


def _candidate(source: str, iteration: int = 1) -> CodeCandidate:
    return CodeCandidate.from_source(source=source, runner_profile="default",
                                     produced_at=utc_now(),
                                     origin_iteration=iteration,
                                     backend_id="scripted")


# ---------------------------------------------------------------------------
# run_suite
# ---------------------------------------------------------------------------

def test_run_suite_reports_per_case_results(project):
    suite = approved_piece(project)
    report = run_suite(_candidate(PY_DOUBLE), suite, PROFILE)
    assert report.passed_all
    assert report.passed_count == 2
    assert [r.case_id for r in report.results] == ["c1", "c2"]
    assert all(r.outcome == "pass" for r in report.results)


def test_run_suite_captures_wrong_output(project):
    suite = approved_piece(project)
    report = run_suite(_candidate(PY_IDENTITY), suite, PROFILE)
    assert not report.passed_all
    failing = [r for r in report.results if not r.passed]
    assert failing[0].case_id == "c1"  # {"n":2} -> {"result":2} wrong
    assert failing[0].outcome == "wrong_output"
    assert failing[0].actual == '{"result":2}'
    # c2 passes by accident: identity of 0 doubles to 0
    assert report.failing_case_ids == ("c1",)


def test_run_suite_requires_approved_suite():
    suite = suite_from(DOUBLE_CASES)  # Draft
    with pytest.raises(PreconditionError):
        run_suite(_candidate(PY_DOUBLE), suite, PROFILE)


def test_run_suite_results_keep_suite_order(project):
    cases = [{"case_id": f"c{i}", "input": {"n": i}, "expected": {"result": 2 * i}}
             for i in range(8)]
    suite = approved_piece(project, cases=cases)
    report = run_suite(_candidate(PY_DOUBLE), suite, PROFILE, parallel_tests=4)
    assert [r.case_id for r in report.results] == [f"c{i}" for i in range(8)]
    assert report.passed_all


def test_failure_digest_from_report(project):
    suite = approved_piece(project)
    report = run_suite(_candidate(PY_IDENTITY), suite, PROFILE)
    digest = report.failure_digest()
    assert [e.case_id for e in digest.entries] == ["c1"]
    assert digest.entries[0].actual == '{"result":2}'


# ---------------------------------------------------------------------------
# static checks
# ---------------------------------------------------------------------------

def test_static_checks_disabled_without_command():
    assert static_checks("any source", PROFILE) == (0, "")


def test_static_checks_count_output_lines(tmp_path):
    checker = tmp_path / "lint.sh"
    checker.write_text("#!/bin/sh\necho 'warn: one'\necho 'warn: two'\nexit 1\n")
    checker.chmod(0o755)
    profile = RunnerProfile(name="checked", command=("/bin/sh", "{file}"),
                            file_extension=".sh", timeout=5.0,
                            static_check_command=("/bin/sh", str(checker), "{file}"))
    count, text = static_checks("echo hi", profile)
    assert count == 2
    assert "warn: one" in text


def test_static_checks_silent_failure_counts_once(tmp_path):
    profile = RunnerProfile(name="checked", command=("/bin/sh", "{file}"),
                            file_extension=".sh", timeout=5.0,
                            static_check_command=("/bin/sh", "-c", "exit 2"))
    count, _ = static_checks("echo hi", profile)
    assert count == 1


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

def _ranked(source: str, passes: bool, violations: int) -> RankedCandidate:
    return RankedCandidate(candidate=_candidate(source), passes_all=passes,
                           static_violations=violations)


def test_ranking_prefers_passing_then_clean_then_short():
    long_pass = _ranked("a" * 50 + "\n", True, 3)
    short_fail = _ranked("f\n", False, 0)
    clean_pass = _ranked("b" * 50 + "\n", True, 0)
    short_pass = _ranked("c\n", True, 0)
    order = rank_candidates([long_pass, short_fail, clean_pass, short_pass])
    assert order[0] is short_pass
    assert order[1] is clean_pass       # same length class loses to shorter
    assert order[2] is long_pass        # violations sort after clean
    assert order[3] is short_fail       # failing always last


def test_ranking_ties_break_on_candidate_id():
    a = _ranked("aa\n", True, 0)
    b = _ranked("bb\n", True, 0)
    first, second = rank_candidates([b, a])
    assert (first.candidate.candidate_id < second.candidate.candidate_id)


def test_ranking_empty_pool_is_a_precondition_error():
    with pytest.raises(PreconditionError):
        rank_candidates([])


def test_ranking_is_permutation_invariant():
    rng = random.Random(11)
    pool = [
        _ranked(PY_DOUBLE, True, 0),
        _ranked(PY_IDENTITY, False, 0),
        _ranked(PY_DOUBLE_OFF_BY_ONE, False, 2),
        _ranked("x = 1\n", False, 1),
        _ranked("y = 2\n" * 10, True, 1),
        _ranked("z = 3\n", True, 2),
    ]
    baseline = [r.candidate.candidate_id for r in rank_candidates(pool)]
    for _ in range(50):
        rng.shuffle(pool)
        shuffled = [r.candidate.candidate_id for r in rank_candidates(pool)]
        assert shuffled == baseline


# ---------------------------------------------------------------------------
# produce_code outcomes
# ---------------------------------------------------------------------------

def test_loop_succeeds_first_try(project):
    suite = approved_piece(project)
    backend = scripted_backend({"generate_code": [code_reply(PY_DOUBLE)]})
    outcome = produce_code(project, double_spec(), suite, backend)
    assert outcome.status is LoopStatus.SUCCESS
    assert len(outcome.iterations) == 1
    assert outcome.winner.source == PY_DOUBLE
    assert project.pinned_candidate("double") == outcome.winner.candidate_id


def test_loop_repairs_until_green(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_DOUBLE_OFF_BY_ONE), code_reply(PY_DOUBLE)],
    })
    outcome = produce_code(project, double_spec(), suite, backend)
    assert outcome.status is LoopStatus.SUCCESS
    assert len(outcome.iterations) == 3
    assert [it.index for it in outcome.iterations] == [1, 2, 3]
    assert outcome.iterations[0].report.passed_all is False
    assert outcome.iterations[2].report.passed_all is True
    # the repair prompt carried the previous failure
    repair_prompt = backend.prompts[1]
    assert "wrong_output" in repair_prompt or "c1" in repair_prompt


def test_loop_exhausts_iteration_budget(project):
    suite = approved_piece(project)
    sources = [f"x = {i}\n" for i in range(4)]  # distinct, all failing
    backend = scripted_backend({
        "generate_code": [code_reply(sources[0])],
        "repair_code": [code_reply(s) for s in sources[1:]],
    })
    outcome = produce_code(project, double_spec(), suite, backend,
                           LoopBudget(max_iterations=4))
    assert outcome.status is LoopStatus.EXHAUSTED
    assert len(outcome.iterations) == 4
    assert outcome.winner is None
    assert project.pinned_candidate("double") is None


def test_loop_stops_on_wall_clock(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_DOUBLE)],
    })
    outcome = produce_code(project, double_spec(), suite, backend,
                           LoopBudget(max_iterations=10, wall_clock_limit=0.001))
    assert outcome.status is LoopStatus.EXHAUSTED
    assert len(outcome.iterations) == 1  # stopped before the second iteration
    assert "wall clock" in outcome.error


def test_loop_detects_stagnation(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_IDENTITY)],  # same source again
    })
    outcome = produce_code(project, double_spec(), suite, backend)
    assert outcome.status is LoopStatus.STAGNATED
    assert len(outcome.iterations) == 2
    assert outcome.iterations[1].repeated
    # the repeated candidate was still run honestly
    assert outcome.iterations[1].report.results


def test_loop_captures_backend_failure(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        # repair_code unavailable: playback exhausts immediately
    })
    outcome = produce_code(project, double_spec(), suite, backend)
    assert outcome.status is LoopStatus.BACKEND_ERROR
    assert len(outcome.iterations) == 1
    assert "exhausted" in outcome.error


def test_loop_requires_approved_suite(project):
    approved_piece(project)
    draft = suite_from(DOUBLE_CASES, version=2)
    backend = scripted_backend({"generate_code": [code_reply(PY_DOUBLE)]})
    with pytest.raises(PreconditionError):
        produce_code(project, double_spec(), draft, backend)


# ---------------------------------------------------------------------------
# Loop persistence and observability
# ---------------------------------------------------------------------------

def test_loop_persists_state_with_monotone_seq(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_DOUBLE)],
    })
    seen: list[dict] = []
    outcome = produce_code(project, double_spec(), suite, backend,
                           on_update=lambda s: seen.append(s))
    seqs = [s["seq"] for s in seen]
    assert seqs == sorted(set(seqs))  # strictly increasing
    assert seen[0]["status"] == "running"
    assert seen[-1]["status"] == "success"
    assert seen[-1]["kind"] == "synthesis"
    assert seen[-1]["winner"] == outcome.winner.candidate_id
    stored = project.load_run_state(outcome.run_id)
    assert stored == seen[-1]
    assert stored["total_duration"] > 0


def test_loop_audit_trail_is_contiguous(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_DOUBLE_OFF_BY_ONE), code_reply(PY_DOUBLE)],
    })
    produce_code(project, double_spec(), suite, backend)
    produced = project.read_history(action=CANDIDATE_PRODUCED)
    assert len(produced) == 3
    assert [p.payload_digest is not None for p in produced] == [True] * 3
    indices = [e.seq for e in produced]
    assert indices == list(range(indices[0], indices[0] + 3))
    completed = project.read_history(action=RUN_COMPLETED)
    assert len(completed) == 1
    assert completed[0].actor == {"kind": "system"}


def test_loop_saves_every_candidate(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY)],
        "repair_code": [code_reply(PY_DOUBLE)],
    })
    produce_code(project, double_spec(), suite, backend)
    stored = {c["candidate_id"] for c in project.list_candidates("double")}
    assert stored == {content_hash(PY_IDENTITY), content_hash(PY_DOUBLE)}


# ---------------------------------------------------------------------------
# Candidate pools
# ---------------------------------------------------------------------------

def test_pool_ranks_and_dedupes(project):
    suite = approved_piece(project)
    backend = scripted_backend({
        "generate_code": [code_reply(PY_IDENTITY), code_reply(PY_DOUBLE),
                          code_reply(PY_DOUBLE)],
    })
    ranked = produce_pool(project, double_spec(), suite, backend, count=3)
    assert len(ranked) == 2  # the duplicate collapsed
    assert ranked[0].passes_all
    assert ranked[0].candidate.source == PY_DOUBLE


def test_pool_requires_positive_count(project):
    suite = approved_piece(project)
    with pytest.raises(PreconditionError):
        produce_pool(project, double_spec(), suite, scripted_backend({}), count=0)


# ---------------------------------------------------------------------------
# Budget parsing
# ---------------------------------------------------------------------------

def test_budget_from_json_ignores_unknown_keys():
    budget = LoopBudget.from_json_value(
        {"max_iterations": 2, "wall_clock_limit": 30, "parallel_tests": 1,
         "surprise": True})
    assert budget == LoopBudget(max_iterations=2, wall_clock_limit=30.0,
                                parallel_tests=1)


def test_budget_defaults():
    budget = LoopBudget()
    assert budget.max_iterations == 8
    assert budget.wall_clock_limit == 600.0
    assert budget.parallel_tests == 4


def test_budget_validation():
    with pytest.raises(ValidationError):
        LoopBudget(max_iterations=0)
    with pytest.raises(ValidationError):
        LoopBudget(wall_clock_limit=0.0)
