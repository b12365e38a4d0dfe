"""Composition of approved pieces into dataflow graphs.

A graph wires pinned candidates into an acyclic dataflow: edges carry parts
of upstream outputs (selected by value paths like "result.items[0]") into
named fields of downstream inputs. Execution is fail-fast with full
tracing, integration tests compare graph outputs, and a divergence walk
over traces points at the first node that went wrong.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, replace
from typing import Mapping, Optional

from .backend import Backend, RequestKind, load_templates, truncate_excerpt, utc_now
from .errors import BackendError, PreconditionError, ValidationError
from .model import (
    CodeCandidate,
    ComparisonMode,
    EXACT,
    SuiteState,
    TestSuite,
    canonicalize_value,
    compare_outputs,
)
from .runner import ExecStatus, ExecutionResult, RunnerProfile, execute_piece
from .store import GRAPH_UPDATED, RUN_COMPLETED, SYSTEM_ACTOR, ProjectStore
from .synthesis import run_suite

# ---------------------------------------------------------------------------
# Value paths
# ---------------------------------------------------------------------------

_PATH_TOKEN_RE = re.compile(r"[^.\[\]]+|\[(\d+)\]")


def parse_path(path: str) -> tuple:
    """Split "a.b[2].c" into ("a", "b", 2, "c"); "" selects the whole value."""
    if path == "":
        return ()
    tokens: list = []
    pos = 0
    for match in _PATH_TOKEN_RE.finditer(path):
        if match.start() > pos and path[pos:match.start()] not in (".", ""):
            raise ValidationError(f"bad value path {path!r}")
        tokens.append(int(match.group(1)) if match.group(1) is not None else match.group(0))
        pos = match.end()
    if pos != len(path) or not tokens:
        raise ValidationError(f"bad value path {path!r}")
    return tuple(tokens)


def extract_path(value, path: str):
    """The sub-value at `path`; raises KeyError when the path is missing."""
    current = value
    for token in parse_path(path):
        if isinstance(token, int):
            if not isinstance(current, list) or token >= len(current):
                raise KeyError(path)
            current = current[token]
        else:
            if not isinstance(current, dict) or token not in current:
                raise KeyError(path)
            current = current[token]
    return current


def insert_path(target: dict, path: str, value) -> None:
    """Set `path` (dotted keys only) inside `target`, building nested dicts."""
    tokens = parse_path(path)
    if not tokens or any(isinstance(t, int) for t in tokens):
        raise ValidationError(f"destination path {path!r} must be non-empty dotted keys")
    current = target
    for token in tokens[:-1]:
        current = current.setdefault(token, {})
        if not isinstance(current, dict):
            raise ValidationError(f"destination path {path!r} collides with a non-object")
    current[tokens[-1]] = value


# ---------------------------------------------------------------------------
# Graph types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphNode:
    node_id: str
    piece_id: str
    candidate_id: str

    def to_json_value(self) -> dict:
        return {"node_id": self.node_id, "piece_id": self.piece_id,
                "candidate_id": self.candidate_id}

    @classmethod
    def from_json_value(cls, data: dict) -> "GraphNode":
        return cls(node_id=data["node_id"], piece_id=data["piece_id"],
                   candidate_id=data["candidate_id"])


@dataclass(frozen=True)
class GraphEdge:
    source: str  # node_id or graph-input name
    from_path: str
    target: str  # node_id
    to_path: str

    def to_json_value(self) -> dict:
        return {"from": self.source, "from_path": self.from_path,
                "to": self.target, "to_path": self.to_path}

    @classmethod
    def from_json_value(cls, data: dict) -> "GraphEdge":
        return cls(source=data["from"], from_path=data.get("from_path", ""),
                   target=data["to"], to_path=data["to_path"])


@dataclass(frozen=True)
class GraphOutput:
    name: str
    node_id: str
    from_path: str = ""

    def to_json_value(self) -> dict:
        return {"name": self.name, "node_id": self.node_id, "from_path": self.from_path}

    @classmethod
    def from_json_value(cls, data: dict) -> "GraphOutput":
        return cls(name=data["name"], node_id=data["node_id"],
                   from_path=data.get("from_path", ""))


@dataclass(frozen=True)
class CompositionGraph:
    graph_id: str
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    graph_inputs: tuple[str, ...] = ()
    graph_outputs: tuple[GraphOutput, ...] = ()

    def node(self, node_id: str) -> GraphNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(node_id)

    def to_json_value(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "nodes": [n.to_json_value() for n in self.nodes],
            "edges": [e.to_json_value() for e in self.edges],
            "graph_inputs": list(self.graph_inputs),
            "graph_outputs": [o.to_json_value() for o in self.graph_outputs],
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "CompositionGraph":
        try:
            return cls(
                graph_id=data["graph_id"],
                nodes=tuple(GraphNode.from_json_value(n) for n in data.get("nodes", [])),
                edges=tuple(GraphEdge.from_json_value(e) for e in data.get("edges", [])),
                graph_inputs=tuple(data.get("graph_inputs", [])),
                graph_outputs=tuple(GraphOutput.from_json_value(o)
                                    for o in data.get("graph_outputs", [])),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"graph document malformed: missing or bad {exc}") from exc


@dataclass(frozen=True)
class IntegrationTest:
    test_id: str
    inputs: dict  # graph-input name -> value
    expected: dict  # output name -> expected value
    comparison: dict = None  # output name -> ComparisonMode; exact by default

    def __post_init__(self) -> None:
        if self.comparison is None:
            object.__setattr__(self, "comparison", {})
        if not self.expected:
            raise ValidationError("an integration test must expect at least one output")

    def mode_for(self, output_name: str) -> ComparisonMode:
        raw = self.comparison.get(output_name)
        if raw is None:
            return EXACT
        if isinstance(raw, ComparisonMode):
            return raw
        return ComparisonMode.from_json_value(raw)

    def to_json_value(self) -> dict:
        comparison = {
            name: (mode.to_json_value() if isinstance(mode, ComparisonMode) else mode)
            for name, mode in self.comparison.items()
        }
        out: dict = {"test_id": self.test_id, "inputs": self.inputs,
                     "expected": self.expected}
        if comparison:
            out["comparison"] = comparison
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "IntegrationTest":
        try:
            return cls(test_id=data["test_id"], inputs=dict(data.get("inputs", {})),
                       expected=dict(data["expected"]),
                       comparison=dict(data.get("comparison", {})))
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                f"integration test document malformed: missing or bad {exc}") from exc


@dataclass(frozen=True)
class NodeTrace:
    node_id: str
    input: object
    output: object = None
    failure: Optional[dict] = None  # ExecutionResult.to_json_value() when failed
    duration: float = 0.0

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_json_value(self) -> dict:
        out: dict = {"node_id": self.node_id, "input": self.input,
                     "duration": self.duration}
        if self.failure is None:
            out["output"] = self.output
        else:
            out["failure"] = self.failure
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "NodeTrace":
        return cls(node_id=data["node_id"], input=data.get("input"),
                   output=data.get("output"), failure=data.get("failure"),
                   duration=float(data.get("duration", 0.0)))


@dataclass(frozen=True)
class TraceRecord:
    run_id: str
    per_node: tuple[NodeTrace, ...]
    graph_outputs: dict  # name -> value; names left absent when unresolvable

    def node_trace(self, node_id: str) -> Optional[NodeTrace]:
        for entry in self.per_node:
            if entry.node_id == node_id:
                return entry
        return None

    def to_json_value(self) -> dict:
        return {
            "run_id": self.run_id,
            "per_node": [entry.to_json_value() for entry in self.per_node],
            "graph_outputs": self.graph_outputs,
        }

    @classmethod
    def from_json_value(cls, data: dict) -> "TraceRecord":
        return cls(
            run_id=data["run_id"],
            per_node=tuple(NodeTrace.from_json_value(e) for e in data.get("per_node", [])),
            graph_outputs=dict(data.get("graph_outputs", {})),
        )


@dataclass(frozen=True)
class DivergenceReport:
    suspect_node: Optional[str]
    upstream_verified: tuple[str, ...] = ()
    expected_at_node: object = None
    actual_at_node: object = None
    summary: Optional[str] = None

    def to_json_value(self) -> dict:
        out: dict = {"upstream_verified": list(self.upstream_verified)}
        if self.suspect_node is not None:
            out["suspect_node"] = self.suspect_node
        if self.expected_at_node is not None:
            out["expected_at_node"] = self.expected_at_node
        if self.actual_at_node is not None:
            out["actual_at_node"] = self.actual_at_node
        if self.summary is not None:
            out["summary"] = self.summary
        return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def topological_order(graph: CompositionGraph) -> list[str]:
    """Kahn's algorithm with lexicographic tie-breaks, so the order is unique."""
    # duplicate declarations collapse to one node here; validate_graph flags them
    node_ids = list(dict.fromkeys(n.node_id for n in graph.nodes))
    known = set(node_ids)
    incoming: dict[str, set[str]] = {nid: set() for nid in node_ids}
    outgoing: dict[str, set[str]] = {nid: set() for nid in node_ids}
    for edge in graph.edges:
        if edge.source in known and edge.target in known:
            incoming[edge.target].add(edge.source)
            outgoing[edge.source].add(edge.target)
    ready = sorted(nid for nid in node_ids if not incoming[nid])
    order: list[str] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        freed = []
        for succ in outgoing[nid]:
            incoming[succ].discard(nid)
            if not incoming[succ]:
                freed.append(succ)
        if freed:
            ready = sorted(ready + freed)
    return order  # shorter than node_ids when there is a cycle


def _find_cycle(graph: CompositionGraph, stuck: set[str]) -> list[str]:
    """One concrete cycle among the nodes a topological sort could not order."""
    succ: dict[str, list[str]] = {nid: [] for nid in stuck}
    for edge in graph.edges:
        if edge.source in stuck and edge.target in stuck:
            succ[edge.source].append(edge.target)
    start = sorted(stuck)[0]
    path, seen = [start], {start}
    current = start
    while True:
        nxt = sorted(succ[current])[0]
        if nxt in seen:
            return path[path.index(nxt):]
        path.append(nxt)
        seen.add(nxt)
        current = nxt


def validate_graph(graph: CompositionGraph,
                   suite_states: Optional[Mapping[str, SuiteState]] = None) -> list[str]:
    """All structural violations, as plain strings; empty means ok.

    With `suite_states` (piece_id -> state of its latest suite) the
    approval requirement on pinned candidates is checked too.
    """
    violations: list[str] = []
    node_ids = [n.node_id for n in graph.nodes]
    known = set(node_ids)
    if len(known) != len(node_ids):
        dupes = sorted({nid for nid in node_ids if node_ids.count(nid) > 1})
        violations.append(f"duplicate node_ids: {dupes}")
    overlap = known & set(graph.graph_inputs)
    if overlap:
        violations.append(f"graph input names collide with node_ids: {sorted(overlap)}")

    sources = known | set(graph.graph_inputs)
    bindings: dict[tuple[str, str], int] = {}
    for edge in graph.edges:
        if edge.source not in sources:
            violations.append(f"edge from unknown source {edge.source!r}")
        if edge.target not in known:
            violations.append(f"edge into unknown node {edge.target!r}")
        try:
            parse_path(edge.from_path)
        except ValidationError as exc:
            violations.append(str(exc))
        try:
            tokens = parse_path(edge.to_path)
            if not tokens or any(isinstance(t, int) for t in tokens):
                violations.append(
                    f"destination path {edge.to_path!r} must be non-empty dotted keys")
        except ValidationError as exc:
            violations.append(str(exc))
        key = (edge.target, edge.to_path)
        bindings[key] = bindings.get(key, 0) + 1
    for (target, to_path), count in sorted(bindings.items()):
        if count > 1:
            violations.append(f"duplicate binding of {target}.{to_path}")
    # a bound path nested under another bound path would silently overwrite it
    by_target: dict[str, list[tuple]] = {}
    for target, to_path in bindings:
        try:
            by_target.setdefault(target, []).append(parse_path(to_path))
        except ValidationError:
            continue
    for target, paths in sorted(by_target.items()):
        paths.sort()
        for first, second in zip(paths, paths[1:]):
            if second[:len(first)] == first and first != second:
                violations.append(
                    f"conflicting bindings on {target}: "
                    f"{'.'.join(map(str, first))} overlaps {'.'.join(map(str, second))}")

    for output in graph.graph_outputs:
        if output.node_id not in known:
            violations.append(f"graph output {output.name!r} reads unknown node "
                              f"{output.node_id!r}")

    order = topological_order(graph)
    if len(order) != len(known):
        cycle = _find_cycle(graph, known - set(order))
        violations.append(f"cycle: [{','.join(cycle)}]")

    if suite_states is not None:
        for node in graph.nodes:
            state = suite_states.get(node.piece_id)
            if state is not SuiteState.APPROVED:
                found = state.value if state is not None else "no suite"
                violations.append(
                    f"node {node.node_id!r} pins a candidate of {node.piece_id!r} "
                    f"whose suite is not approved ({found})")
    return violations


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _assemble_input(graph: CompositionGraph, node_id: str, inputs: dict,
                    produced: dict) -> tuple[Optional[dict], Optional[dict]]:
    """Build the node's input object from its bound edges.

    Returns (input object, None) or (None, failure dict) when an upstream
    value path is missing; the failure names the offending edge.
    """
    assembled: dict = {}
    for edge in sorted(graph.edges, key=lambda e: (e.target, e.to_path)):
        if edge.target != node_id:
            continue
        pool = inputs if edge.source in inputs else produced
        try:
            value = extract_path(pool[edge.source], edge.from_path)
        except KeyError:
            return None, {
                "status": "node_input_error",
                "detail": (f"edge {edge.source}->{edge.target}: path "
                           f"{edge.from_path!r} missing in upstream value"),
            }
        insert_path(assembled, edge.to_path, value)
    return assembled, None


def execute_graph(graph: CompositionGraph, inputs: dict,
                  candidates: Mapping[str, CodeCandidate],
                  profiles: Mapping[str, RunnerProfile],
                  store: Optional[ProjectStore] = None,
                  run_id: str = "") -> tuple[Optional[dict], TraceRecord]:
    """Run the dataflow; outputs are None whenever any node failed.

    Nodes run in the deterministic topological order. The first failing
    node stops the run: downstream nodes are skipped and never appear in
    the trace. Passing a store persists the trace under the run.
    """
    violations = validate_graph(graph)
    if violations:
        raise PreconditionError("invalid graph: " + "; ".join(violations))
    missing = [name for name in graph.graph_inputs if name not in inputs]
    if missing:
        raise PreconditionError(f"missing graph inputs: {missing}")

    if store is not None and not run_id:
        run_id = store.new_run_id()

    produced: dict = {}
    per_node: list[NodeTrace] = []
    failed = False
    for node_id in topological_order(graph):
        node = graph.node(node_id)
        node_input, failure = _assemble_input(graph, node_id, inputs, produced)
        if failure is not None:
            per_node.append(NodeTrace(node_id=node_id, input=None, failure=failure))
            failed = True
            break
        candidate = candidates.get(node.candidate_id)
        if candidate is None:
            raise PreconditionError(
                f"node {node_id!r} pins unavailable candidate {node.candidate_id!r}")
        profile = profiles.get(candidate.runner_profile)
        if profile is None:
            raise PreconditionError(
                f"candidate {node.candidate_id!r} needs unknown runner profile "
                f"{candidate.runner_profile!r}")
        started = time.monotonic()
        result: ExecutionResult = execute_piece(candidate.source, profile, node_input)
        duration = time.monotonic() - started
        if result.status is ExecStatus.OK:
            produced[node_id] = result.output
            per_node.append(NodeTrace(node_id=node_id, input=node_input,
                                      output=result.output, duration=duration))
        else:
            per_node.append(NodeTrace(node_id=node_id, input=node_input,
                                      failure=result.to_json_value(),
                                      duration=duration))
            failed = True
            break

    graph_outputs: dict = {}
    for output in graph.graph_outputs:
        if output.node_id in produced:
            try:
                graph_outputs[output.name] = extract_path(
                    produced[output.node_id], output.from_path)
            except KeyError:
                pass  # unresolvable output stays absent
    trace = TraceRecord(run_id=run_id, per_node=tuple(per_node),
                        graph_outputs=graph_outputs)
    if store is not None:
        store.save_trace(run_id, trace.to_json_value())
        status = "failed" if failed else "success"
        store.save_run_state(run_id, {
            "run_id": run_id,
            "kind": "graph_run",
            "graph_id": graph.graph_id,
            "status": status,
            "seq": 1,
            "finished_at": utc_now(),
        })
        store.append_event(SYSTEM_ACTOR, RUN_COMPLETED,
                           [f"run:{run_id}", f"graph:{graph.graph_id}"],
                           payload={"status": status, "run_id": run_id})
    outputs = None if failed else graph_outputs
    return outputs, trace


# ---------------------------------------------------------------------------
# Integration testing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegrationResult:
    test_id: str
    passed: bool
    detail: str = ""
    trace_run_id: str = ""  # persisted trace reference for failing tests

    def to_json_value(self) -> dict:
        out: dict = {"test_id": self.test_id, "passed": self.passed}
        if self.detail:
            out["detail"] = self.detail
        if self.trace_run_id:
            out["trace_ref"] = f"trace:{self.trace_run_id}"
        return out


def check_outputs(test: IntegrationTest, outputs: Optional[dict]) -> str:
    """Empty string when every expected output matches; else the first diff."""
    if outputs is None:
        return "graph execution failed before producing outputs"
    for name in sorted(test.expected):
        if name not in outputs:
            return f"output {name!r} absent"
        report = compare_outputs(test.expected[name], outputs[name], test.mode_for(name))
        if not report.matched:
            return f"output {name!r}: {report.detail}"
    return ""


def run_integration_suite(graph: CompositionGraph, tests: list[IntegrationTest],
                          candidates: Mapping[str, CodeCandidate],
                          profiles: Mapping[str, RunnerProfile],
                          store: Optional[ProjectStore] = None) -> list[IntegrationResult]:
    """Each test runs independently; failing tests keep their trace."""
    violations = validate_graph(graph)
    if violations:
        raise PreconditionError("invalid graph: " + "; ".join(violations))
    results: list[IntegrationResult] = []
    for test in tests:
        missing = [name for name in graph.graph_inputs if name not in test.inputs]
        if missing:
            results.append(IntegrationResult(
                test_id=test.test_id, passed=False,
                detail=f"test does not cover graph inputs: {missing}"))
            continue
        outputs, trace = execute_graph(graph, test.inputs, candidates, profiles,
                                       store=store)
        detail = check_outputs(test, outputs)
        results.append(IntegrationResult(
            test_id=test.test_id, passed=not detail, detail=detail,
            trace_run_id=trace.run_id if detail and store is not None else ""))
    return results


# ---------------------------------------------------------------------------
# Fault localization
# ---------------------------------------------------------------------------

def localize_fault(graph: CompositionGraph, failing_test: IntegrationTest,
                   candidates: Mapping[str, CodeCandidate],
                   profiles: Mapping[str, RunnerProfile],
                   reference: Optional[TraceRecord] = None,
                   unit_suites: Optional[Mapping[str, TestSuite]] = None,
                   backend: Optional[Backend] = None,
                   summary_template=None) -> DivergenceReport:
    """Point at the first node that deviates, walking topological order.

    With a reference trace: the suspect is the first node whose live output
    differs exactly from the reference's recording. Without one, each
    node's own approved unit suite is run against its pinned candidate and
    the first failing node is the suspect; if all pass, graph outputs are
    projected against the failing test's expectations, falling back to the
    sink node with an inconclusive note.
    """
    if reference is None and unit_suites is None:
        raise PreconditionError(
            "fault localization needs a reference trace or per-node unit suites")

    outputs, live = execute_graph(graph, failing_test.inputs, candidates, profiles)
    order = topological_order(graph)
    if not check_outputs(failing_test, outputs):
        # the failure did not reproduce; localizing would blame an innocent node
        return DivergenceReport(
            suspect_node=None,
            upstream_verified=tuple(n for n in order
                                    if (e := live.node_trace(n)) and e.ok),
            summary="test passes against a fresh execution; nothing to localize")
    report: DivergenceReport

    if reference is not None:
        report = _localize_by_reference(order, live, reference)
    else:
        report = _localize_by_unit_suites(graph, order, live, failing_test,
                                          candidates, profiles, unit_suites)

    if (backend is not None and report.suspect_node is not None
            and report.summary is None and live.per_node):
        summary = summarize_failure(live, backend, summary_template)
        if summary is not None:
            report = replace(report, summary=summary)
    return report


def _localize_by_reference(order: list[str], live: TraceRecord,
                           reference: TraceRecord) -> DivergenceReport:
    verified: list[str] = []
    for node_id in order:
        ref_entry = reference.node_trace(node_id)
        live_entry = live.node_trace(node_id)
        if ref_entry is None or not ref_entry.ok:
            continue  # reference says nothing useful about this node
        if live_entry is None or not live_entry.ok:
            return DivergenceReport(
                suspect_node=node_id, upstream_verified=tuple(verified),
                expected_at_node=ref_entry.output,
                actual_at_node=live_entry.failure if live_entry else None)
        if canonicalize_value(live_entry.output) != canonicalize_value(ref_entry.output):
            return DivergenceReport(
                suspect_node=node_id, upstream_verified=tuple(verified),
                expected_at_node=ref_entry.output, actual_at_node=live_entry.output)
        verified.append(node_id)
    return DivergenceReport(suspect_node=None, upstream_verified=tuple(verified))


def _localize_by_unit_suites(graph: CompositionGraph, order: list[str],
                             live: TraceRecord, failing_test: IntegrationTest,
                             candidates: Mapping[str, CodeCandidate],
                             profiles: Mapping[str, RunnerProfile],
                             unit_suites: Mapping[str, TestSuite]) -> DivergenceReport:
    verified: list[str] = []
    for node_id in order:
        node = graph.node(node_id)
        suite = unit_suites.get(node.piece_id)
        if suite is None:
            raise PreconditionError(f"no unit suite for piece {node.piece_id!r}")
        candidate = candidates[node.candidate_id]
        unit_report = run_suite(candidate, suite, profiles[candidate.runner_profile])
        if not unit_report.passed_all:
            return DivergenceReport(
                suspect_node=node_id, upstream_verified=tuple(verified),
                actual_at_node={"failing_cases": list(unit_report.failing_case_ids)})
        verified.append(node_id)

    # unit suites all pass: project expected graph outputs back onto nodes
    def upstream(suspect: str) -> tuple[str, ...]:
        return tuple(n for n in verified if order.index(n) < order.index(suspect))

    for node_id in order:
        live_entry = live.node_trace(node_id)
        if live_entry is None or not live_entry.ok:
            return DivergenceReport(suspect_node=node_id,
                                    upstream_verified=upstream(node_id),
                                    actual_at_node=live_entry.failure if live_entry else None)
        for output in graph.graph_outputs:
            if output.node_id != node_id or output.name not in failing_test.expected:
                continue
            try:
                actual = extract_path(live_entry.output, output.from_path)
            except KeyError:
                return DivergenceReport(
                    suspect_node=node_id, upstream_verified=upstream(node_id),
                    expected_at_node=failing_test.expected[output.name])
            match = compare_outputs(failing_test.expected[output.name], actual,
                                    failing_test.mode_for(output.name))
            if not match.matched:
                return DivergenceReport(
                    suspect_node=node_id, upstream_verified=upstream(node_id),
                    expected_at_node=failing_test.expected[output.name],
                    actual_at_node=actual)

    sink = order[-1] if order else None
    return DivergenceReport(
        suspect_node=sink,
        upstream_verified=upstream(sink) if sink is not None else (),
        summary="inconclusive: unit suites pass and no projected output diverges")


# ---------------------------------------------------------------------------
# Advisory failure summaries
# ---------------------------------------------------------------------------

def summarize_failure(trace: TraceRecord, backend: Backend,
                      template=None) -> Optional[str]:
    """A backend-written plain-text summary of a failed run; advisory only.

    Backend trouble degrades to None so localization never blocks on it.
    """
    if not trace.per_node:
        raise PreconditionError("cannot summarize an empty trace")
    if template is None:
        template = load_templates()["summarize_failure"]
    lines = []
    for entry in trace.per_node:
        line = f"node {entry.node_id}: input {canonicalize_value(entry.input)}"
        if entry.ok:
            line += f", output {canonicalize_value(entry.output)}"
        else:
            failure = entry.failure or {}
            line += f", failed ({failure.get('status', 'unknown')})"
            stderr = failure.get("stderr", "")
            if stderr:
                line += f", stderr: {truncate_excerpt(stderr, 512)}"
        lines.append(line)
    prompt = template.render(failures="\n".join(lines))
    try:
        return backend.complete(RequestKind.SUMMARIZE_FAILURE, prompt)
    except BackendError:
        return None


# ---------------------------------------------------------------------------
# Store-facing helpers
# ---------------------------------------------------------------------------

def load_graph_bundle(store: ProjectStore, graph_id: str):
    """(graph, integration tests, candidates, profiles) from project state."""
    raw = store.load_graph(graph_id)
    graph = CompositionGraph.from_json_value(raw)
    tests = [IntegrationTest.from_json_value(t) for t in raw.get("integration_tests", [])]
    candidates = {}
    for node in graph.nodes:
        candidates[node.candidate_id] = store.load_candidate(node.piece_id,
                                                             node.candidate_id)
    config = store.load_config()
    profiles = {p.name: p for p in config.runner_profiles}
    return graph, tests, candidates, profiles


def save_graph(store: ProjectStore, graph: CompositionGraph,
               integration_tests: Optional[list[IntegrationTest]] = None) -> None:
    value = graph.to_json_value()
    if integration_tests:
        value["integration_tests"] = [t.to_json_value() for t in integration_tests]
    store.save_graph(value)
    store.append_event(SYSTEM_ACTOR, GRAPH_UPDATED, [f"graph:{graph.graph_id}"],
                       payload=value)
