"""Command-line surface over the whole pipeline.

This is the only module that talks to a terminal. Exit codes partition
outcomes: 0 success, 1 domain failure (failing tests, exhausted loop,
fault found, state conflicts), 2 usage errors (bad flags, malformed input,
unknown artifacts), 3 environment or backend trouble.

With --json every command writes exactly one canonical JSON document to
stdout and nothing else there; progress and prose go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from . import graph as graph_ops
from . import review as review_ops
from . import synthesis
from .backend import make_backend
from .errors import (
    BackendError,
    ConflictError,
    CorruptionError,
    NotFoundError,
    PieceForgeError,
    PreconditionError,
    SpawnError,
    ValidationError,
)
from .model import PieceSpec, SuiteState, canonicalize_value, validate_spec
from .review import FeedbackItem, FeedbackKind
from .runner import execute_piece
from .store import SPEC_ADDED, ProjectStore, expert_actor
from .synthesis import LoopBudget, LoopStatus

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_ENVIRONMENT = 3


class CommandResult:
    def __init__(self, code: int, payload: dict, lines: Optional[list[str]] = None):
        self.code = code
        self.payload = payload
        self.lines = lines if lines is not None else []


def _say(text: str) -> None:
    print(text, file=sys.stderr)


def _parse_json_arg(raw: str, what: str):
    try:
        return json.loads(raw)
    except ValueError as exc:
        raise ValidationError(f"{what} is not valid JSON: {exc}") from exc


def _open_store(args) -> ProjectStore:
    return ProjectStore.open(args.project)


def _backend_for(store: ProjectStore, backend_id: Optional[str]):
    cfg = store.load_config().backend(backend_id)
    return make_backend(cfg)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_init(args) -> CommandResult:
    store = ProjectStore.init_project(args.project)
    return CommandResult(EXIT_OK, {"project": str(store.root)},
                         [f"initialized project at {store.root}"])


def cmd_spec_add(args) -> CommandResult:
    store = _open_store(args)
    raw = sys.stdin.read() if args.file == "-" else open(args.file, encoding="utf-8").read()
    spec = PieceSpec.from_json_value(_parse_json_arg(raw, "spec file"))
    violations = validate_spec(spec)
    if violations:
        return CommandResult(EXIT_USAGE,
                             {"error": "invalid_spec",
                              "violations": [str(v) for v in violations]},
                             [f"invalid spec: {v}" for v in violations])
    with store.lock(force=args.force):
        store.save_spec(spec)
        store.append_event(expert_actor(args.expert), SPEC_ADDED,
                           [f"spec:{spec.id}@{spec.version}"],
                           payload=spec.to_json_value())
    return CommandResult(EXIT_OK, {"piece_id": spec.id, "version": spec.version},
                         [f"added spec {spec.id} v{spec.version}"])


def cmd_tests_gen(args) -> CommandResult:
    store = _open_store(args)
    backend = _backend_for(store, args.backend)
    with store.lock(force=args.force):
        suite = review_ops.draft_tests(store, args.piece, backend)
    return CommandResult(
        EXIT_OK,
        {"piece_id": args.piece, "suite_version": suite.suite_version,
         "cases": len(suite.cases), "state": suite.state.value},
        [f"drafted suite v{suite.suite_version} with {len(suite.cases)} cases"])


def _render_session(session: review_ops.ReviewSession) -> list[str]:
    lines = [f"review of {session.piece_id}, round {session.round}, "
             f"suite v{session.suite_version}"]
    for entry in session.explanation.per_case:
        lines.append(f"  [{entry.case_id}] input: {entry.restated_input}")
        lines.append(f"      expect: {entry.restated_expected}")
        if entry.reasoning:
            lines.append(f"      why: {entry.reasoning}")
    if session.explanation.coverage_notes:
        lines.append(f"  coverage: {session.explanation.coverage_notes}")
    lines.append("commands: add <case json> | rm <case_id> | mod <case_id> <json> "
                 "| say <text> | approve | quit")
    return lines


def _parse_feedback_command(line: str) -> Optional[FeedbackItem]:
    verb, _, rest = line.strip().partition(" ")
    rest = rest.strip()
    if verb == "add":
        return FeedbackItem(kind=FeedbackKind.ADD_CASE,
                            case=_parse_json_arg(rest, "case"))
    if verb == "rm":
        if not rest:
            raise ValidationError("rm needs a case_id")
        return FeedbackItem(kind=FeedbackKind.REMOVE_CASE, case_id=rest)
    if verb == "mod":
        case_id, _, body = rest.partition(" ")
        if not case_id or not body.strip():
            raise ValidationError("mod needs a case_id and a JSON object")
        return FeedbackItem(kind=FeedbackKind.MODIFY_CASE, case_id=case_id,
                            case=_parse_json_arg(body.strip(), "case changes"))
    if verb == "say":
        return FeedbackItem(kind=FeedbackKind.FREE_TEXT, text=rest)
    raise ValidationError(f"unknown review command {verb!r}")


def cmd_tests_review(args) -> CommandResult:
    store = _open_store(args)
    with store.lock(force=args.force):
        # one backend for the whole sitting, so scripted playback advances
        backend = _backend_for(store, args.backend)
        session = review_ops.current_session(store, args.piece)
        if session is None or not session.open:
            session = review_ops.start_review(store, args.piece, backend)
        if args.json_mode:
            # non-interactive: report the session for machine callers
            return CommandResult(EXIT_OK, session.to_json_value())

        for line in _render_session(session):
            print(line)
        while True:
            try:
                raw = input("review> ")
            except EOFError:
                print("leaving review open")
                return CommandResult(EXIT_OK, session.to_json_value())
            line = raw.strip()
            if not line:
                continue
            if line == "quit":
                print("leaving review open")
                return CommandResult(EXIT_OK, session.to_json_value())
            if line == "approve":
                suite = review_ops.approve_suite(store, args.piece, args.expert)
                print(f"approved suite v{suite.suite_version} "
                      f"({len(suite.cases)} cases) as {args.expert}")
                return CommandResult(EXIT_OK, suite.to_json_value())
            try:
                item = _parse_feedback_command(line)
                session = review_ops.apply_feedback(store, args.piece, [item],
                                                    backend, args.expert)
            except (ValidationError, PreconditionError, NotFoundError) as exc:
                print(f"error: {exc}")
                continue
            for out in _render_session(session):
                print(out)


def cmd_tests_approve(args) -> CommandResult:
    store = _open_store(args)
    with store.lock(force=args.force):
        suite = review_ops.approve_suite(store, args.piece, args.expert)
    return CommandResult(
        EXIT_OK,
        {"piece_id": args.piece, "suite_version": suite.suite_version,
         "state": suite.state.value, "approved_by": args.expert},
        [f"approved suite v{suite.suite_version} of {args.piece}"])


def cmd_code_gen(args) -> CommandResult:
    store = _open_store(args)
    spec = store.load_spec(args.piece)
    suite = store.load_suite(args.piece)
    backend = _backend_for(store, args.backend)
    config = store.load_config()
    budget = LoopBudget.from_json_value(dict(
        config.defaults.get("budget", {}),
        **({"max_iterations": args.budget} if args.budget else {}),
    ))

    reported = 0

    def progress(state: dict) -> None:
        nonlocal reported
        done = state["iterations"]
        if len(done) > reported:  # final push repeats the last iteration
            reported = len(done)
            last = done[-1]
            _say(f"iteration {last['index']}: {last['passed']}/{last['total']} passing")

    with store.lock(force=args.force):
        if args.candidates > 1:
            ranked = synthesis.produce_pool(store, spec, suite, backend,
                                            count=args.candidates, budget=budget)
            best = ranked[0]
            if best.passes_all:
                store.pin_candidate(args.piece, best.candidate.candidate_id)
            payload = {"mode": "pool", "ranked": [r.to_json_value() for r in ranked],
                       "winner": best.candidate.candidate_id if best.passes_all else None}
            code = EXIT_OK if best.passes_all else EXIT_DOMAIN
            lines = [f"{i + 1}. {r.candidate.candidate_id[:12]} "
                     f"passes={r.passes_all} violations={r.static_violations}"
                     for i, r in enumerate(ranked)]
            if not best.passes_all:
                lines.append("no candidate passes the suite")
            return CommandResult(code, payload, lines)

        outcome = synthesis.produce_code(store, spec, suite, backend, budget,
                                         on_update=progress)
    payload = outcome.to_json_value()
    if outcome.status is LoopStatus.SUCCESS:
        return CommandResult(EXIT_OK, payload,
                             [f"success after {len(outcome.iterations)} iterations, "
                              f"winner {outcome.winner.candidate_id[:12]}"])
    if outcome.status is LoopStatus.BACKEND_ERROR:
        return CommandResult(EXIT_ENVIRONMENT, payload,
                             [f"backend error: {outcome.error}"])
    return CommandResult(EXIT_DOMAIN, payload,
                         [f"{outcome.status.value} after {len(outcome.iterations)} "
                          f"iterations: {outcome.error}"])


def cmd_run(args) -> CommandResult:
    store = _open_store(args)
    input_value = _parse_json_arg(args.input, "--input")
    spec = store.load_spec(args.piece)
    candidate_id = args.candidate or store.pinned_candidate(args.piece)
    if candidate_id is None:
        raise PreconditionError(
            f"piece {args.piece!r} has no pinned candidate; run code gen first")
    candidate = store.load_candidate(args.piece, candidate_id)
    profile = store.load_config().profile(spec.runner_profile)
    result = execute_piece(candidate.source, profile, input_value)
    if result.ok:
        return CommandResult(EXIT_OK,
                             {"status": "ok", "output": result.output},
                             [canonicalize_value(result.output)])
    if result.status.value == "spawn_error":
        raise SpawnError(result.detail)
    return CommandResult(EXIT_DOMAIN,
                         {"status": result.status.value, "detail": result.detail},
                         [f"{result.status.value}: {result.detail}"])


def _suite_states(store: ProjectStore) -> dict:
    states = {}
    for piece_id in store.list_pieces():
        version = store.latest_suite_version(piece_id)
        if version:
            states[piece_id] = store.load_suite(piece_id, version).state
    return states


def cmd_graph_check(args) -> CommandResult:
    store = _open_store(args)
    graph = graph_ops.CompositionGraph.from_json_value(store.load_graph(args.graph))
    violations = graph_ops.validate_graph(graph, _suite_states(store))
    if violations:
        return CommandResult(EXIT_DOMAIN,
                             {"graph_id": args.graph, "violations": violations},
                             [f"violation: {v}" for v in violations])
    return CommandResult(EXIT_OK, {"graph_id": args.graph, "violations": []},
                         [f"graph {args.graph} is valid"])


def cmd_graph_run(args) -> CommandResult:
    store = _open_store(args)
    graph, _, candidates, profiles = graph_ops.load_graph_bundle(store, args.graph)
    inputs = _parse_json_arg(args.inputs, "--inputs") if args.inputs else {}
    if not isinstance(inputs, dict):
        raise ValidationError("--inputs must be a JSON object")
    with store.lock(force=args.force):
        outputs, trace = graph_ops.execute_graph(graph, inputs, candidates, profiles,
                                                 store=store)
    if outputs is None:
        failed = next(e for e in trace.per_node if not e.ok)
        return CommandResult(
            EXIT_DOMAIN,
            {"run_id": trace.run_id, "outputs": None,
             "failed_node": failed.node_id, "failure": failed.failure},
            [f"node {failed.node_id} failed: "
             f"{(failed.failure or {}).get('status', 'unknown')}"])
    return CommandResult(EXIT_OK,
                         {"run_id": trace.run_id, "outputs": outputs},
                         [canonicalize_value(outputs)])


def cmd_integrate(args) -> CommandResult:
    store = _open_store(args)
    graph, tests, candidates, profiles = graph_ops.load_graph_bundle(store, args.graph)
    with store.lock(force=args.force):
        results = graph_ops.run_integration_suite(graph, tests, candidates, profiles,
                                                  store=store)
    failed = [r for r in results if not r.passed]
    payload = {"graph_id": args.graph,
               "results": [r.to_json_value() for r in results],
               "passed": len(results) - len(failed), "failed": len(failed)}
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.test_id}"
             + (f": {r.detail}" if r.detail else "")
             for r in results]
    lines.append(f"{len(results) - len(failed)}/{len(results)} integration tests passed")
    return CommandResult(EXIT_OK if not failed else EXIT_DOMAIN, payload, lines)


def cmd_localize(args) -> CommandResult:
    store = _open_store(args)
    graph, tests, candidates, profiles = graph_ops.load_graph_bundle(store, args.graph)
    test = next((t for t in tests if t.test_id == args.test), None)
    if test is None:
        raise NotFoundError(f"graph {args.graph!r} has no integration test {args.test!r}")

    reference = None
    unit_suites = None
    if args.reference:
        reference = graph_ops.TraceRecord.from_json_value(store.load_trace(args.reference))
    else:
        unit_suites = {}
        for node in graph.nodes:
            if node.piece_id not in unit_suites:
                suite = store.load_suite(node.piece_id)
                if suite.state is not SuiteState.APPROVED:
                    raise PreconditionError(
                        f"piece {node.piece_id!r} has no approved suite for unit-mode "
                        f"localization")
                unit_suites[node.piece_id] = suite
    backend = None
    if args.summarize:
        backend = _backend_for(store, args.backend)
    report = graph_ops.localize_fault(graph, test, candidates, profiles,
                                      reference=reference, unit_suites=unit_suites,
                                      backend=backend)
    payload = report.to_json_value()
    if report.suspect_node is None:
        return CommandResult(EXIT_OK, payload, ["no divergence found"])
    lines = [f"suspect node: {report.suspect_node}",
             f"verified upstream: {list(report.upstream_verified)}"]
    if report.summary:
        lines.append(f"summary: {report.summary}")
    return CommandResult(EXIT_DOMAIN, payload, lines)


def cmd_history(args) -> CommandResult:
    store = _open_store(args)
    events = store.read_history(piece=args.piece, action=args.action)
    payload = {"events": [e.to_json_value() for e in events]}
    lines = []
    for e in events:
        actor = e.actor.get("name") or e.actor.get("id") or e.actor.get("kind")
        lines.append(f"{e.seq:>4} {e.timestamp} {e.action:<20} {actor:<12} "
                     f"{' '.join(e.refs)}")
    return CommandResult(EXIT_OK, payload, lines)


def cmd_serve(args) -> CommandResult:
    import secrets

    import uvicorn

    from .api import create_app

    store = _open_store(args)
    token = args.token or secrets.token_urlsafe(24)
    app = create_app(store, token=token, ui_dir=args.ui or None)
    url = f"http://{args.host}:{args.port}/"
    _say(f"serving {store.root} at {url}")
    _say(f"bearer token: {token}")
    if args.json_mode:
        print(canonicalize_value({"url": url, "token": token}))
        sys.stdout.flush()
    with store.lock(force=args.force):
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return CommandResult(EXIT_OK, {"url": url}, [])


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pieceforge",
        description="Natural-language piece specs to tested, composed programs.")
    parser.add_argument("--project", default=".", help="project directory")
    parser.add_argument("--json", dest="json_mode", action="store_true",
                        help="emit one canonical JSON document on stdout")
    parser.add_argument("--expert", default=os.environ.get("USER", "expert"),
                        help="name recorded for expert actions")
    parser.add_argument("--force", action="store_true",
                        help="reclaim a stale project lock")
    parser.add_argument("--backend", default=None, help="backend id from project.json")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="create an empty project")

    spec = sub.add_parser("spec", help="manage piece specifications")
    spec_sub = spec.add_subparsers(dest="spec_command", required=True)
    spec_add = spec_sub.add_parser("add", help="add a spec from a JSON file")
    spec_add.add_argument("file", help="spec JSON file, or - for stdin")

    tests = sub.add_parser("tests", help="testsuite generation and review")
    tests_sub = tests.add_subparsers(dest="tests_command", required=True)
    for name, help_text in (("gen", "draft a testsuite"),
                            ("review", "review the suite interactively"),
                            ("approve", "approve the suite under review")):
        sp = tests_sub.add_parser(name, help=help_text)
        sp.add_argument("piece")

    code = sub.add_parser("code", help="automated code production")
    code_sub = code.add_subparsers(dest="code_command", required=True)
    code_gen = code_sub.add_parser("gen", help="run the generate-repair loop")
    code_gen.add_argument("piece")
    code_gen.add_argument("--budget", type=int, default=0,
                          help="max loop iterations (default from project config)")
    code_gen.add_argument("--candidates", type=int, default=1,
                          help="pool mode: rank N independent candidates")

    run = sub.add_parser("run", help="execute a piece's pinned candidate")
    run.add_argument("piece")
    run.add_argument("--input", required=True, help="input value as JSON")
    run.add_argument("--candidate", default=None, help="candidate hash override")

    graph = sub.add_parser("graph", help="composition graphs")
    graph_sub = graph.add_subparsers(dest="graph_command", required=True)
    graph_check = graph_sub.add_parser("check", help="validate a graph")
    graph_check.add_argument("graph")
    graph_run = graph_sub.add_parser("run", help="execute a graph")
    graph_run.add_argument("graph")
    graph_run.add_argument("--inputs", default="", help="graph inputs as a JSON object")

    integrate = sub.add_parser("integrate", help="run a graph's integration tests")
    integrate.add_argument("graph")

    localize = sub.add_parser("localize", help="localize the fault behind a failing test")
    localize.add_argument("graph")
    localize.add_argument("test")
    localize.add_argument("--reference", default="",
                          help="run id of a known-good trace (default: unit-suite mode)")
    localize.add_argument("--summarize", action="store_true",
                          help="ask the backend for an advisory failure summary")

    history = sub.add_parser("history", help="audit log for a piece")
    history.add_argument("piece")
    history.add_argument("--action", default=None, help="filter by action name")

    serve = sub.add_parser("serve", help="serve the HTTP API and web UI")
    serve.add_argument("--port", type=int, default=8777)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--token", default="", help="fixed bearer token (default random)")
    serve.add_argument("--ui", default="", help="directory of built UI assets")

    return parser


_DISPATCH = {
    ("init",): cmd_init,
    ("spec", "add"): cmd_spec_add,
    ("tests", "gen"): cmd_tests_gen,
    ("tests", "review"): cmd_tests_review,
    ("tests", "approve"): cmd_tests_approve,
    ("code", "gen"): cmd_code_gen,
    ("run",): cmd_run,
    ("graph", "check"): cmd_graph_check,
    ("graph", "run"): cmd_graph_run,
    ("integrate",): cmd_integrate,
    ("localize",): cmd_localize,
    ("history",): cmd_history,
    ("serve",): cmd_serve,
}


def _dispatch_key(args) -> tuple:
    key = [args.command]
    for attr in ("spec_command", "tests_command", "code_command", "graph_command"):
        if getattr(args, attr, None):
            key.append(getattr(args, attr))
    return tuple(key)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _DISPATCH[_dispatch_key(args)]
    try:
        result = handler(args)
    except (ValidationError, NotFoundError) as exc:
        return _emit_error(args, "usage", exc, EXIT_USAGE)
    except (PreconditionError, ConflictError) as exc:
        return _emit_error(args, "conflict", exc, EXIT_DOMAIN)
    except (BackendError, SpawnError, CorruptionError) as exc:
        return _emit_error(args, "environment", exc, EXIT_ENVIRONMENT)
    except PieceForgeError as exc:
        return _emit_error(args, "error", exc, EXIT_ENVIRONMENT)
    except OSError as exc:
        return _emit_error(args, "io", exc, EXIT_ENVIRONMENT)

    if args.json_mode:
        print(canonicalize_value(result.payload))
    else:
        for line in result.lines:
            print(line)
    return result.code


def _emit_error(args, kind: str, exc: Exception, code: int) -> int:
    if getattr(args, "json_mode", False):
        print(canonicalize_value({"error": kind, "detail": str(exc)}))
    print(f"error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
