"""Local HTTP service for the web UI.

A thin adapter: every endpoint maps onto one operation from the review,
synthesis, or composition layers, so driving a scenario over HTTP leaves
the same audit trail as driving it from the command line. Responses are
canonical JSON; errors are {"error": code, "detail": text} with 400 for
bad input, 404 for missing artifacts, 409 for state conflicts, and 502
for backend trouble.

Auth is a single static bearer token, and the server is meant to bind to
localhost only. Run state is observable by long-polling with a seq cursor:
GET /api/v1/runs/{id}?after_seq=N returns as soon as the run moves past
seq N, or after the wait cap with the unchanged state.
"""

from __future__ import annotations

import secrets
import threading
import time
from typing import Optional

from fastapi import Depends, FastAPI, Header, Request, Response

from . import graph as graph_ops
from . import review as review_ops
from . import synthesis
from .backend import Backend, make_backend
from .errors import (
    BackendError,
    ConflictError,
    NotFoundError,
    PieceForgeError,
    PreconditionError,
    ValidationError,
)
from .model import canonicalize_value
from .review import FeedbackItem
from .store import ProjectStore
from .synthesis import LoopBudget

DEFAULT_WAIT_CAP = 25.0

_TERMINAL = ("success", "failed", "exhausted", "stagnated", "backend_error")


def _mark_run_failed(store: ProjectStore, registry: "RunRegistry",
                     run_id: str, exc: BaseException) -> None:
    """Leave a terminal state behind when a worker dies mid-run."""
    try:
        state = store.load_run_state(run_id)
    except PieceForgeError:
        return
    if state.get("status") not in _TERMINAL:
        state["status"] = "failed"
        state["error"] = str(exc)
        state["seq"] = state.get("seq", 0) + 1
        store.save_run_state(run_id, state)
        registry.update(state)


def _run_view(state: dict) -> dict:
    """RunStatus shape for clients: normalized state plus progress counters."""
    raw = state.get("status", "running")
    view = dict(state)
    view["state"] = "failed" if raw == "backend_error" else raw
    if state.get("kind") == "synthesis":
        budget = state.get("budget", {})
        view["progress"] = {
            "current_iteration": len(state.get("iterations", [])),
            "max_iterations": budget.get("max_iterations", 0),
        }
    return view


class RunRegistry:
    """In-memory view of live runs, with change notification for long polls."""

    def __init__(self, store: ProjectStore, wait_cap: float):
        self._store = store
        self._wait_cap = wait_cap
        self._cond = threading.Condition()
        self._live: dict[str, dict] = {}
        self._busy_pieces: set[str] = set()

    def try_claim_piece(self, piece_id: str) -> bool:
        with self._cond:
            if piece_id in self._busy_pieces:
                return False
            self._busy_pieces.add(piece_id)
            return True

    def release_piece(self, piece_id: str) -> None:
        with self._cond:
            self._busy_pieces.discard(piece_id)
            self._cond.notify_all()

    def update(self, state: dict) -> None:
        with self._cond:
            self._live[state["run_id"]] = state
            self._cond.notify_all()

    def finish(self, run_id: str) -> None:
        with self._cond:
            self._live.pop(run_id, None)
            self._cond.notify_all()

    def current(self, run_id: str) -> dict:
        with self._cond:
            live = self._live.get(run_id)
        if live is not None:
            return live
        return self._store.load_run_state(run_id)

    def wait_for(self, run_id: str, after_seq: int, cap: Optional[float] = None) -> dict:
        """Current state once seq exceeds after_seq, the run ends, or time is up."""
        deadline = time.monotonic() + (self._wait_cap if cap is None else cap)
        while True:
            state = self.current(run_id)
            if state.get("seq", 0) > after_seq or state.get("status") in _TERMINAL:
                return state
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return state
            with self._cond:
                self._cond.wait(timeout=min(remaining, 1.0))


def create_app(store: ProjectStore, token: str,
               wait_cap: float = DEFAULT_WAIT_CAP,
               ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="pieceforge", docs_url=None, redoc_url=None)
    registry = RunRegistry(store, wait_cap)
    piece_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()
    backends: dict[str, Backend] = {}

    def piece_lock(piece_id: str) -> threading.Lock:
        with locks_guard:
            return piece_locks.setdefault(piece_id, threading.Lock())

    def get_backend(backend_id: Optional[str] = None) -> Backend:
        cfg = store.load_config().backend(backend_id)
        with locks_guard:
            backend = backends.get(cfg.backend_id)
            if backend is None:
                backend = make_backend(cfg)
                backends[cfg.backend_id] = backend
        return backend

    def ok(payload, status_code: int = 200) -> Response:
        return Response(content=canonicalize_value(payload) + "\n",
                        media_type="application/json", status_code=status_code)

    def fail(status_code: int, error: str, detail: str) -> Response:
        return ok({"error": error, "detail": detail}, status_code=status_code)

    async def require_token(authorization: str = Header(default="")) -> None:
        if not secrets.compare_digest(authorization, f"Bearer {token}"):
            raise PermissionError("missing or wrong bearer token")

    @app.exception_handler(PieceForgeError)
    async def _domain_error(_request: Request, exc: PieceForgeError) -> Response:
        if isinstance(exc, NotFoundError):
            return fail(404, "not_found", str(exc))
        if isinstance(exc, (ConflictError, PreconditionError)):
            return fail(409, "conflict", str(exc))
        if isinstance(exc, BackendError):
            return fail(502, "backend", str(exc))
        if isinstance(exc, ValidationError):
            return fail(400, "validation", str(exc))
        return fail(500, "internal", str(exc))

    @app.exception_handler(PermissionError)
    async def _auth_error(_request: Request, exc: PermissionError) -> Response:
        return fail(401, "unauthorized", str(exc))

    auth = Depends(require_token)

    # -- pieces -------------------------------------------------------------

    @app.get("/api/v1/pieces", dependencies=[auth])
    def list_pieces() -> Response:
        pieces = []
        for piece_id in store.list_pieces():
            spec = store.load_spec(piece_id)
            version = store.latest_suite_version(piece_id)
            entry: dict = {"piece_id": piece_id, "title": spec.title,
                           "suite_version": version}
            if version:
                entry["suite_state"] = store.load_suite(piece_id, version).state.value
            session = review_ops.current_session(store, piece_id)
            entry["review_open"] = bool(session and session.open)
            pinned = store.pinned_candidate(piece_id)
            if pinned:
                entry["pinned_candidate"] = pinned
            pieces.append(entry)
        return ok({"pieces": pieces})

    @app.get("/api/v1/pieces/{piece_id}", dependencies=[auth])
    def get_piece(piece_id: str) -> Response:
        spec = store.load_spec(piece_id)
        payload: dict = {"spec": spec.to_json_value()}
        version = store.latest_suite_version(piece_id)
        if version:
            payload["suite"] = store.load_suite(piece_id, version).to_json_value()
        session = review_ops.current_session(store, piece_id)
        if session is not None:
            payload["review"] = session.to_json_value()
        pinned = store.pinned_candidate(piece_id)
        if pinned:
            payload["pinned_candidate"] = pinned
        payload["candidates"] = store.list_candidates(piece_id)
        return ok(payload)

    # -- review -------------------------------------------------------------

    @app.post("/api/v1/pieces/{piece_id}/review", dependencies=[auth])
    async def start_review(piece_id: str, request: Request) -> Response:
        body = await _json_body(request, optional=True) or {}
        lock = piece_lock(piece_id)
        if not lock.acquire(blocking=False):
            return fail(409, "conflict", f"another mutation of {piece_id!r} is running")
        try:
            session = review_ops.start_review(store, piece_id,
                                              get_backend(body.get("backend")))
            suite = store.load_suite(piece_id, session.suite_version)
            return ok({"session": session.to_json_value(),
                       "suite": suite.to_json_value()})
        finally:
            lock.release()

    @app.get("/api/v1/pieces/{piece_id}/review", dependencies=[auth])
    def get_review(piece_id: str) -> Response:
        session = review_ops.current_session(store, piece_id)
        if session is None:
            raise NotFoundError(f"piece {piece_id!r} has no review session")
        suite = store.load_suite(piece_id, session.suite_version)
        return ok({"session": session.to_json_value(), "suite": suite.to_json_value()})

    @app.post("/api/v1/pieces/{piece_id}/review/feedback", dependencies=[auth])
    async def post_feedback(piece_id: str, request: Request) -> Response:
        body = await _json_body(request)
        if isinstance(body, dict):
            items_raw = body.get("items")
            expert = body.get("expert", "expert")
        else:
            items_raw, expert = body, "expert"
        if not isinstance(items_raw, list) or not items_raw:
            raise ValidationError("feedback body must be a non-empty list of items")
        items = [FeedbackItem.from_json_value(item) for item in items_raw]
        lock = piece_lock(piece_id)
        if not lock.acquire(blocking=False):
            return fail(409, "conflict", f"another mutation of {piece_id!r} is running")
        try:
            session = review_ops.apply_feedback(store, piece_id, items,
                                                get_backend(), expert)
            suite = store.load_suite(piece_id, session.suite_version)
            return ok({"session": session.to_json_value(),
                       "suite": suite.to_json_value()})
        finally:
            lock.release()

    @app.post("/api/v1/pieces/{piece_id}/review/approve", dependencies=[auth])
    async def post_approve(piece_id: str, request: Request) -> Response:
        body = await _json_body(request, optional=True) or {}
        expert = body.get("expert", "expert")
        lock = piece_lock(piece_id)
        if not lock.acquire(blocking=False):
            return fail(409, "conflict", f"another mutation of {piece_id!r} is running")
        try:
            suite = review_ops.approve_suite(store, piece_id, expert)
            return ok({"suite": suite.to_json_value()})
        finally:
            lock.release()

    # -- synthesis ----------------------------------------------------------

    @app.post("/api/v1/pieces/{piece_id}/synthesize", dependencies=[auth])
    async def synthesize(piece_id: str, request: Request) -> Response:
        body = await _json_body(request, optional=True) or {}
        spec = store.load_spec(piece_id)
        suite = store.load_suite(piece_id)
        config = store.load_config()
        budget = LoopBudget.from_json_value(
            dict(config.defaults.get("budget", {}), **body.get("budget", {})))
        backend = get_backend(body.get("backend"))
        if not registry.try_claim_piece(piece_id):
            return fail(409, "conflict",
                        f"a synthesis run for {piece_id!r} is already in progress")

        run_id_box: list[str] = []
        error_box: list[BaseException] = []
        ready = threading.Event()

        def on_update(state: dict) -> None:
            if not run_id_box:
                run_id_box.append(state["run_id"])
                ready.set()
            registry.update(state)

        def work() -> None:
            try:
                synthesis.produce_code(store, spec, suite, backend, budget,
                                       on_update=on_update)
            except BaseException as exc:
                error_box.append(exc)
                if run_id_box:
                    _mark_run_failed(store, registry, run_id_box[0], exc)
            finally:
                if run_id_box:
                    registry.finish(run_id_box[0])
                registry.release_piece(piece_id)
                ready.set()

        thread = threading.Thread(target=work, daemon=True)
        thread.start()
        ready.wait(timeout=30.0)
        if run_id_box:
            return ok({"run_id": run_id_box[0]}, status_code=202)
        if error_box:
            raise error_box[0]
        return fail(409, "conflict", "synthesis did not start in time")

    @app.get("/api/v1/runs/{run_id}", dependencies=[auth])
    def get_run(run_id: str, after_seq: int = -1) -> Response:
        if after_seq < 0:
            return ok(_run_view(registry.current(run_id)))
        return ok(_run_view(registry.wait_for(run_id, after_seq)))

    # -- graphs ---------------------------------------------------------------

    @app.get("/api/v1/graphs/{graph_id}", dependencies=[auth])
    def get_graph(graph_id: str) -> Response:
        raw = store.load_graph(graph_id)
        graph = graph_ops.CompositionGraph.from_json_value(raw)
        payload = dict(raw)
        payload["violations"] = graph_ops.validate_graph(graph)
        return ok(payload)

    @app.post("/api/v1/graphs/{graph_id}/run", dependencies=[auth])
    async def run_graph(graph_id: str, request: Request) -> Response:
        body = await _json_body(request, optional=True) or {}
        inputs = body.get("inputs", {})
        if not isinstance(inputs, dict):
            raise ValidationError("inputs must be a JSON object")
        graph, _, candidates, profiles = graph_ops.load_graph_bundle(store, graph_id)
        outputs, trace = graph_ops.execute_graph(graph, inputs, candidates, profiles,
                                                 store=store)
        payload: dict = {"run_id": trace.run_id, "trace": trace.to_json_value()}
        if outputs is None:
            failed = next(e for e in trace.per_node if not e.ok)
            payload["outputs"] = None
            payload["failed_node"] = failed.node_id
        else:
            payload["outputs"] = outputs
        return ok(payload)

    # -- audit log --------------------------------------------------------------

    @app.get("/api/v1/events", dependencies=[auth])
    def get_events(after_seq: int = 0, piece: Optional[str] = None,
                   action: Optional[str] = None) -> Response:
        events = store.read_history(piece=piece, action=action,
                                    start_seq=after_seq + 1)
        last = events[-1].seq if events else after_seq
        return ok({"events": [e.to_json_value() for e in events], "seq": last})

    # -- static UI ----------------------------------------------------------------

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


async def _json_body(request: Request, optional: bool = False):
    raw = await request.body()
    if not raw:
        if optional:
            return None
        raise ValidationError("request body must be JSON")
    try:
        import json

        return json.loads(raw)
    except ValueError as exc:
        raise ValidationError(f"request body is not valid JSON: {exc}") from exc
