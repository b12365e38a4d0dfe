"""Shared fixtures: temp projects, scripted replies, and tiny pieces.

Every test runs under a socket guard that refuses non-loopback network
connections, so the suite proves it needs nothing beyond this machine.
"""

from __future__ import annotations

import json
import socket
import sys

import pytest

from pieceforge.backend import scripted_backend, utc_now
from pieceforge.model import PieceSpec, SuiteState, TestCase, TestSuite
from pieceforge.runner import RunnerProfile, python_profile, shell_profile
from pieceforge.store import SPEC_ADDED, ProjectStore, expert_actor

# ---------------------------------------------------------------------------
# Network guard: loopback only, everywhere, always
# ---------------------------------------------------------------------------

_real_connect = socket.socket.connect
_LOOPBACK_OK = ("127.0.0.1", "::1", "localhost")


def _guarded_connect(self, address):
    host = address[0] if isinstance(address, tuple) else address
    if isinstance(host, str) and host not in _LOOPBACK_OK and not host.startswith("127."):
        raise OSError(f"test suite attempted non-loopback connection to {host!r}")
    return _real_connect(self, address)


@pytest.fixture(autouse=True)
def no_outbound_network(monkeypatch):
    monkeypatch.setattr(socket.socket, "connect", _guarded_connect)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per shipping criterion at the end of the run."""
    results: dict[str, str] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, ()):
            name = rep.nodeid.split("::")[-1]
            if name.startswith("test_criterion_"):
                results[name] = outcome
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results):
        status = "PASS" if results[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name.removeprefix('test_')}")


# ---------------------------------------------------------------------------
# Reply builders for the scripted backend
# ---------------------------------------------------------------------------

def fenced(doc) -> str:
    """A reply whose fenced block is the canonical carrier of the payload."""
    if isinstance(doc, str):
        return f"```\n{doc}\n```"
    return "```json\n" + json.dumps(doc) + "\n```"


def cases_reply(cases: list[dict]) -> str:
    return fenced({"cases": cases})


def explain_reply(case_ids: list[str], coverage: str = "covers the basics") -> str:
    return fenced({
        "per_case": [
            {"case_id": cid, "restated_input": f"input for {cid}",
             "restated_expected": f"expected for {cid}",
             "reasoning": f"why {cid} holds"}
            for cid in case_ids
        ],
        "coverage_notes": coverage,
    })


def code_reply(source: str) -> str:
    return f"```python\n{source}```"


# Piece sources used across tests. All speak one JSON line in, one out.
PY_DOUBLE = (
    "import sys, json\n"
    "doc = json.loads(sys.stdin.readline())\n"
    "print(json.dumps({'result': doc['n'] * 2}, separators=(',', ':'), sort_keys=True))\n"
)
PY_DOUBLE_OFF_BY_ONE = PY_DOUBLE.replace("* 2", "* 2 + 1")
PY_IDENTITY = (
    "import sys, json\n"
    "doc = json.loads(sys.stdin.readline())\n"
    "print(json.dumps({'result': doc['n']}, separators=(',', ':'), sort_keys=True))\n"
)

DOUBLE_CASES = [
    {"case_id": "c1", "name": "doubles two", "input": {"n": 2}, "expected": {"result": 4}},
    {"case_id": "c2", "name": "doubles zero", "input": {"n": 0}, "expected": {"result": 0}},
]


def double_spec(piece_id: str = "double") -> PieceSpec:
    return PieceSpec(id=piece_id, title="Double a number",
                     description='Read {"n": x} from stdin, print {"result": 2*x}.')


def suite_from(cases: list[dict], piece_id: str = "double", version: int = 1,
               state: SuiteState = SuiteState.DRAFT) -> TestSuite:
    suite = TestSuite(piece_id=piece_id, suite_version=version,
                      cases=tuple(TestCase.from_json_value(c) for c in cases),
                      state=SuiteState.DRAFT)
    if state is SuiteState.UNDER_REVIEW:
        suite = suite.with_state(SuiteState.UNDER_REVIEW)
    elif state is SuiteState.APPROVED:
        suite = suite.with_state(SuiteState.UNDER_REVIEW)
        suite = suite.with_state(SuiteState.APPROVED, approved_by="test-expert",
                                 approved_at=utc_now())
    return suite


# ---------------------------------------------------------------------------
# Project fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def project(tmp_path) -> ProjectStore:
    return ProjectStore.init_project(tmp_path / "proj")


@pytest.fixture
def fast_profile() -> RunnerProfile:
    return python_profile(timeout=5.0)


@pytest.fixture
def sh_profile() -> RunnerProfile:
    return shell_profile(timeout=5.0)


def add_spec(store: ProjectStore, spec: PieceSpec) -> PieceSpec:
    store.save_spec(spec)
    store.append_event(expert_actor("test-expert"), SPEC_ADDED,
                       [f"spec:{spec.id}@{spec.version}"], payload=spec.to_json_value())
    return spec


def approved_piece(store: ProjectStore, piece_id: str = "double",
                   cases: list[dict] | None = None) -> TestSuite:
    """Spec plus an already-approved suite, bypassing the review dialogue."""
    add_spec(store, double_spec(piece_id))
    suite = suite_from(cases or DOUBLE_CASES, piece_id=piece_id,
                       state=SuiteState.APPROVED)
    store.save_suite(suite)
    return suite


def configure_scripted(store: ProjectStore, replies: dict[str, list[str]],
                       backend_id: str = "scripted") -> str:
    """Register a scripted backend in project.json; returns its script path."""
    script_path = store.root / f"{backend_id}-script.json"
    script_path.write_text(json.dumps({"replies": replies}), encoding="utf-8")

    def mutate(raw: dict) -> None:
        backends = [b for b in raw.get("backends", []) if b["backend_id"] != backend_id]
        backends.append({"backend_id": backend_id, "kind": "scripted",
                         "script_path": str(script_path)})
        raw["backends"] = backends

    store.update_config(mutate)
    return str(script_path)


def backend_with(replies: dict[str, list[str]]):
    return scripted_backend(replies)


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """A project directory plus a runner for the command-line entry point."""
    from pieceforge import cli

    proj = tmp_path / "proj"

    def run(*argv: str, stdin: str = ""):
        monkeypatch.setattr(sys, "stdin", _FakeStdin(stdin))
        return cli.main(["--project", str(proj), *argv])

    return proj, run


class _FakeStdin:
    def __init__(self, text: str):
        self._lines = iter(text.splitlines(True))
        self.buffer = _FakeBuffer(text)

    def readline(self) -> str:
        return next(self._lines, "")

    def read(self) -> str:
        return "".join(self._lines)

    def __iter__(self):
        return self._lines


class _FakeBuffer:
    def __init__(self, text: str):
        self._data = text.encode("utf-8")

    def read(self) -> bytes:
        return self._data
