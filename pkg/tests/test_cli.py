"""End-to-end command-line behaviour: exit codes, JSON mode, workflows."""

from __future__ import annotations

import json

import pytest

from pieceforge.backend import utc_now
from pieceforge.graph import (
    CompositionGraph,
    GraphEdge,
    GraphNode,
    GraphOutput,
    IntegrationTest,
    save_graph,
)
from pieceforge.model import CodeCandidate, SuiteState, canonicalize_value
from pieceforge.store import ProjectStore

from conftest import (
    DOUBLE_CASES,
    PY_DOUBLE,
    PY_IDENTITY,
    approved_piece,
    cases_reply,
    code_reply,
    configure_scripted,
    double_spec,
    explain_reply,
)


def init_store(proj, run) -> ProjectStore:
    assert run("init") == 0
    return ProjectStore.open(proj)


def spec_doc() -> str:
    return json.dumps(double_spec().to_json_value())


def reviewable_store(proj, run) -> ProjectStore:
    """Project with a spec and a scripted backend ready to draft and explain."""
    store = init_store(proj, run)
    configure_scripted(store, {
        "generate_tests": [cases_reply(DOUBLE_CASES)],
        "explain_tests": [explain_reply(["c1", "c2"])],
    })
    assert run("spec", "add", "-", stdin=spec_doc()) == 0
    return store


def graph_store(proj, run) -> ProjectStore:
    """Two doubling pieces chained: start.n -> p1 -> p2, output "out"."""
    store = init_store(proj, run)
    nodes = []
    for pid in ("p1", "p2"):
        approved_piece(store, pid)
        candidate = CodeCandidate.from_source(
            source=PY_DOUBLE, runner_profile="default", produced_at=utc_now(),
            origin_iteration=1, backend_id="scripted")
        store.save_candidate(pid, candidate, ".py")
        nodes.append(GraphNode(node_id=f"d{len(nodes) + 1}", piece_id=pid,
                               candidate_id=candidate.candidate_id))
    graph = CompositionGraph(
        graph_id="g", nodes=tuple(nodes),
        edges=(GraphEdge(source="start", from_path="n", target="d1", to_path="n"),
               GraphEdge(source="d1", from_path="result", target="d2", to_path="n")),
        graph_inputs=("start",),
        graph_outputs=(GraphOutput(name="out", node_id="d2", from_path="result"),),
    )
    tests = [
        IntegrationTest(test_id="t1", inputs={"start": {"n": 3}},
                        expected={"out": 12}),
        IntegrationTest(test_id="t2", inputs={"start": {"n": 3}},
                        expected={"out": 99}),
    ]
    save_graph(store, graph, tests)
    return store


# ---------------------------------------------------------------------------
# init and spec management
# ---------------------------------------------------------------------------

def test_init_creates_a_project(cli_env):
    proj, run = cli_env
    assert run("init") == 0
    assert (proj / "project.json").is_file()


def test_init_refuses_a_nonempty_directory(cli_env, capsys):
    proj, run = cli_env
    assert run("init") == 0
    assert run("init") == 1
    assert "error:" in capsys.readouterr().err


def test_spec_add_from_file(cli_env, tmp_path):
    proj, run = cli_env
    store = init_store(proj, run)
    spec_file = tmp_path / "double.json"
    spec_file.write_text(spec_doc(), encoding="utf-8")
    assert run("spec", "add", str(spec_file)) == 0
    assert store.load_spec("double").title == "Double a number"


def test_spec_add_from_stdin(cli_env):
    proj, run = cli_env
    store = init_store(proj, run)
    assert run("spec", "add", "-", stdin=spec_doc()) == 0
    assert store.load_spec("double").id == "double"


def test_spec_add_reports_violations(cli_env, capsys):
    proj, run = cli_env
    init_store(proj, run)
    capsys.readouterr()
    bad = json.dumps({"id": "Not A Slug", "title": "t", "description": "d"})
    assert run("--json", "spec", "add", "-", stdin=bad) == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["error"] == "invalid_spec"
    assert any("illegal characters" in v for v in payload["violations"])


def test_spec_add_rejects_broken_json(cli_env, capsys):
    proj, run = cli_env
    init_store(proj, run)
    capsys.readouterr()
    assert run("--json", "spec", "add", "-", stdin="{nope") == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["error"] == "usage"


def test_spec_add_missing_file_is_an_io_error(cli_env):
    proj, run = cli_env
    init_store(proj, run)
    assert run("spec", "add", "/nonexistent/spec.json") == 3


# ---------------------------------------------------------------------------
# Testsuite commands
# ---------------------------------------------------------------------------

def test_tests_gen_drafts_a_suite(cli_env, capsys):
    proj, run = cli_env
    store = reviewable_store(proj, run)
    capsys.readouterr()
    assert run("--json", "tests", "gen", "double") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload == {"cases": 2, "piece_id": "double", "state": "Draft",
                       "suite_version": 1}
    assert store.load_suite("double").state is SuiteState.DRAFT


def test_tests_review_json_mode_reports_the_session(cli_env, capsys):
    proj, run = cli_env
    reviewable_store(proj, run)
    capsys.readouterr()
    assert run("--json", "tests", "review", "double") == 0
    session = json.loads(capsys.readouterr().out)
    assert session["round"] == 1
    assert session["open"] is True
    assert [e["case_id"] for e in session["explanation"]["per_case"]] == ["c1", "c2"]


def test_interactive_review_approves(cli_env, capsys):
    proj, run = cli_env
    store = reviewable_store(proj, run)
    assert run("tests", "review", "double", stdin="approve\n") == 0
    out = capsys.readouterr().out
    assert "review of double, round 1" in out
    assert "approved suite v1" in out
    assert store.load_suite("double").state is SuiteState.APPROVED


def test_interactive_review_applies_structural_feedback(cli_env, capsys):
    proj, run = cli_env
    store = reviewable_store(proj, run)
    assert run("tests", "review", "double", stdin="rm c2\napprove\n") == 0
    suite = store.load_suite("double")
    assert suite.state is SuiteState.APPROVED
    assert suite.suite_version == 2
    assert [c.case_id for c in suite.cases] == ["c1"]
    assert "round 2" in capsys.readouterr().out


def test_interactive_review_rejects_bad_commands_without_dying(cli_env, capsys):
    proj, run = cli_env
    reviewable_store(proj, run)
    assert run("tests", "review", "double", stdin="frob c1\nquit\n") == 0
    out = capsys.readouterr().out
    assert "error: unknown review command 'frob'" in out
    assert "leaving review open" in out


def test_tests_approve_without_a_session_is_a_domain_error(cli_env):
    proj, run = cli_env
    reviewable_store(proj, run)
    assert run("tests", "approve", "double") == 1


def test_tests_gen_for_missing_piece_exits_2(cli_env):
    proj, run = cli_env
    store = init_store(proj, run)
    configure_scripted(store, {})
    assert run("tests", "gen", "ghost") == 2


# ---------------------------------------------------------------------------
# Code generation
# ---------------------------------------------------------------------------

def test_code_gen_success(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    configure_scripted(store, {"generate_code": [code_reply(PY_DOUBLE)]})
    assert run("code", "gen", "double") == 0
    assert store.pinned_candidate("double") is not None
    assert "success after 1 iterations" in capsys.readouterr().out


def test_code_gen_exhausted_exits_1(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    configure_scripted(store, {
        "generate_code": [code_reply("x = 1\n")],
        "repair_code": [code_reply("x = 2\n")],
    })
    capsys.readouterr()
    assert run("--json", "code", "gen", "double", "--budget", "2") == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["status"] == "exhausted"
    assert len(payload["iterations"]) == 2


def test_code_gen_backend_trouble_exits_3(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    configure_scripted(store, {})  # no replies at all
    capsys.readouterr()
    assert run("--json", "code", "gen", "double") == 3
    assert json.loads(capsys.readouterr().out)["status"] == "backend_error"


def test_code_gen_pool_mode_ranks(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    configure_scripted(store, {
        "generate_code": [code_reply(PY_IDENTITY), code_reply(PY_DOUBLE),
                          code_reply(PY_DOUBLE)],
    })
    capsys.readouterr()
    assert run("--json", "code", "gen", "double", "--candidates", "3") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mode"] == "pool"
    assert len(payload["ranked"]) == 2  # duplicate source collapsed
    assert payload["winner"] == payload["ranked"][0]["candidate_id"]
    assert store.pinned_candidate("double") == payload["winner"]


def test_run_executes_the_pinned_candidate(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    configure_scripted(store, {"generate_code": [code_reply(PY_DOUBLE)]})
    assert run("code", "gen", "double") == 0
    capsys.readouterr()
    assert run("run", "double", "--input", '{"n": 21}') == 0
    assert capsys.readouterr().out == '{"result":42}\n'
    assert run("--json", "run", "double", "--input", '{"n": 21}') == 0
    assert capsys.readouterr().out == '{"output":{"result":42},"status":"ok"}\n'


def test_run_without_a_candidate_is_a_domain_error(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    assert run("run", "double", "--input", "{}") == 1
    assert "no pinned candidate" in capsys.readouterr().err


def test_run_reports_piece_failures(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    approved_piece(store)
    crash = CodeCandidate.from_source(source="import sys\nsys.exit(4)\n",
                                      runner_profile="default",
                                      produced_at=utc_now(), origin_iteration=1,
                                      backend_id="scripted")
    store.save_candidate("double", crash, ".py")
    store.pin_candidate("double", crash.candidate_id)
    capsys.readouterr()
    assert run("--json", "run", "double", "--input", '{"n": 1}') == 1
    assert json.loads(capsys.readouterr().out)["status"] == "nonzero_exit"


def test_run_missing_piece_exits_2_with_json_error(cli_env, capsys):
    proj, run = cli_env
    init_store(proj, run)
    capsys.readouterr()
    assert run("--json", "run", "ghost", "--input", "{}") == 2
    captured = capsys.readouterr()
    payload = json.loads(captured.out)
    assert payload["error"] == "usage"
    assert "ghost" in payload["detail"]
    assert "error:" in captured.err


# ---------------------------------------------------------------------------
# Graph commands
# ---------------------------------------------------------------------------

def test_graph_check_valid(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    assert run("graph", "check", "g") == 0
    assert "is valid" in capsys.readouterr().out


def test_graph_check_reports_violations(cli_env, capsys):
    proj, run = cli_env
    store = graph_store(proj, run)
    raw = store.load_graph("g")
    raw["edges"].append({"from": "d1", "from_path": "result",
                         "to": "zzz", "to_path": "n"})
    store.save_graph(raw)
    assert run("graph", "check", "g") == 1
    assert "unknown node 'zzz'" in capsys.readouterr().out


def test_graph_run_prints_outputs(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    capsys.readouterr()
    assert run("graph", "run", "g", "--inputs", '{"start": {"n": 3}}') == 0
    assert capsys.readouterr().out == '{"out":12}\n'


def test_graph_run_missing_inputs_is_a_domain_error(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    assert run("graph", "run", "g") == 1
    assert "missing graph inputs" in capsys.readouterr().err


def test_integrate_reports_pass_and_fail(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    assert run("integrate", "g") == 1  # t2 expects the wrong total
    out = capsys.readouterr().out
    assert "PASS t1" in out
    assert "FAIL t2" in out
    assert "1/2 integration tests passed" in out


def test_localize_finds_the_sink_for_a_wrong_expectation(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    capsys.readouterr()
    assert run("--json", "localize", "g", "t2") == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["suspect_node"] == "d2"
    assert payload["upstream_verified"] == ["d1"]


def test_localize_passing_test_reports_no_divergence(cli_env, capsys):
    proj, run = cli_env
    graph_store(proj, run)
    assert run("localize", "g", "t1") == 0
    assert "no divergence found" in capsys.readouterr().out


def test_localize_unknown_test_exits_2(cli_env):
    proj, run = cli_env
    graph_store(proj, run)
    assert run("localize", "g", "t99") == 2


# ---------------------------------------------------------------------------
# History, locking, and the JSON contract
# ---------------------------------------------------------------------------

def test_history_filters_by_action(cli_env, capsys):
    proj, run = cli_env
    reviewable_store(proj, run)
    assert run("tests", "gen", "double") == 0
    capsys.readouterr()
    assert run("history", "double", "--action", "SpecAdded") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    assert "SpecAdded" in lines[0]


def test_lock_conflict_exits_1(cli_env, capsys):
    proj, run = cli_env
    store = init_store(proj, run)
    with store.lock():
        assert run("spec", "add", "-", stdin=spec_doc()) == 1
    assert "error:" in capsys.readouterr().err


def test_json_mode_emits_exactly_one_document(cli_env, capsys):
    proj, run = cli_env
    assert run("--json", "init") == 0
    out = capsys.readouterr().out
    assert out == canonicalize_value({"project": str(proj)}) + "\n"


def test_unknown_command_is_an_argparse_usage_error(cli_env):
    proj, run = cli_env
    with pytest.raises(SystemExit) as excinfo:
        run("frobnicate")
    assert excinfo.value.code == 2
