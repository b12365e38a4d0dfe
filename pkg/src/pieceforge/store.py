"""On-disk project store: artifacts, configuration, and the audit log.

Layout under the project root:

    project.json                      configuration
    history.jsonl                     append-only audit log, one event per line
    specs/<piece>/spec.v<k>.json      piece specifications, write-once per version
    specs/<piece>/suites/v<k>.json    testsuites (approved versions become immutable)
    specs/<piece>/explanations/v<k>.json
    specs/<piece>/review.json         open or closed review session
    specs/<piece>/state.json          pinned candidate
    specs/<piece>/candidates/<hash><ext> + <hash>.json sidecar
    graphs/<graph_id>.json
    runs/<run-id>/state.json, trace.json

All JSON files hold canonical text, so identical values are identical bytes
and artifact reads round-trip exactly. Writes go through a temp file in the
same directory followed by an atomic rename.
"""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .backend import BackendConfig, utc_now
from .errors import (
    ConflictError,
    CorruptionError,
    NotFoundError,
    StoreError,
    ValidationError,
)
from .model import (
    CodeCandidate,
    PieceSpec,
    SuiteState,
    TestSuite,
    canonicalize_value,
    parse_canonical,
    value_digest,
)
from .runner import RunnerProfile, python_profile

# audit log action names
SPEC_ADDED = "SpecAdded"
SUITE_DRAFTED = "SuiteDrafted"
EXPLANATION_ATTACHED = "ExplanationAttached"
FEEDBACK_APPLIED = "FeedbackApplied"
SUITE_APPROVED = "SuiteApproved"
CANDIDATE_PRODUCED = "CandidateProduced"
RUN_COMPLETED = "RunCompleted"
GRAPH_UPDATED = "GraphUpdated"

SYSTEM_ACTOR: dict = {"kind": "system"}


def expert_actor(name: str) -> dict:
    return {"kind": "expert", "name": name}


def backend_actor(backend_id: str) -> dict:
    return {"kind": "backend", "id": backend_id}


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    timestamp: str
    actor: dict
    action: str
    refs: tuple[str, ...]
    payload_digest: str = ""

    def to_json_value(self) -> dict:
        out: dict = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "actor": self.actor,
            "action": self.action,
            "refs": list(self.refs),
        }
        if self.payload_digest:
            out["payload_digest"] = self.payload_digest
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "AuditEvent":
        return cls(
            seq=int(data["seq"]),
            timestamp=data["timestamp"],
            actor=data["actor"],
            action=data["action"],
            refs=tuple(data["refs"]),
            payload_digest=data.get("payload_digest", ""),
        )

    def mentions_piece(self, piece_id: str) -> bool:
        for ref in self.refs:
            _, _, body = ref.partition(":")
            subject = body.split("@")[0].split("/")[0]
            if subject == piece_id:
                return True
        return False


@dataclass(frozen=True)
class ProjectConfig:
    version: int
    backends: tuple[BackendConfig, ...]
    runner_profiles: tuple[RunnerProfile, ...]
    templates: dict
    defaults: dict

    def backend(self, backend_id: Optional[str] = None) -> BackendConfig:
        if backend_id is None:
            backend_id = self.defaults.get("backend")
        if backend_id is None:
            if not self.backends:
                raise NotFoundError("project has no configured backend")
            return self.backends[0]
        for cfg in self.backends:
            if cfg.backend_id == backend_id:
                return cfg
        raise NotFoundError(f"unknown backend {backend_id!r}")

    def profile(self, name: str) -> RunnerProfile:
        for profile in self.runner_profiles:
            if profile.name == name:
                return profile
        raise NotFoundError(f"unknown runner profile {name!r}")

    @classmethod
    def from_json_value(cls, data: dict) -> "ProjectConfig":
        return cls(
            version=int(data.get("version", 1)),
            backends=tuple(BackendConfig.from_json_value(b) for b in data.get("backends", [])),
            runner_profiles=tuple(RunnerProfile.from_json_value(p)
                                  for p in data.get("runner_profiles", [])),
            templates=dict(data.get("templates", {})),
            defaults=dict(data.get("defaults", {})),
        )


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path: Path, what: str) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFoundError(f"{what} not found") from None


class ProjectStore:
    """One project directory. Not safe for concurrent writers; see lock()."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._next_seq: Optional[int] = None

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def init_project(cls, root: str | Path) -> "ProjectStore":
        root = Path(root)
        if root.exists():
            if not root.is_dir():
                raise StoreError(f"{root} exists and is not a directory")
            if any(root.iterdir()):
                raise ConflictError(f"refusing to initialize non-empty directory {root}")
        store = cls(root)
        for sub in ("specs", "graphs", "runs"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        config = {
            "version": 1,
            "backends": [],
            "runner_profiles": [python_profile().to_json_value()],
            "templates": {},
            "defaults": {
                "budget": {"max_iterations": 8, "wall_clock_limit": 600,
                           "parallel_tests": 4},
            },
        }
        _atomic_write_text(root / "project.json", canonicalize_value(config) + "\n")
        (root / "history.jsonl").touch()
        return store

    @classmethod
    def open(cls, root: str | Path) -> "ProjectStore":
        root = Path(root)
        if not (root / "project.json").is_file():
            raise NotFoundError(f"no project at {root}")
        return cls(root)

    def load_config(self) -> ProjectConfig:
        raw = _read_text(self.root / "project.json", "project.json")
        try:
            return ProjectConfig.from_json_value(parse_canonical(raw.strip()))
        except (ValueError, KeyError, ValidationError) as exc:
            raise CorruptionError(f"project.json unreadable: {exc}") from exc

    def update_config(self, mutate) -> ProjectConfig:
        """Apply `mutate(dict) -> None` to the raw config and persist it."""
        raw = parse_canonical(_read_text(self.root / "project.json", "project.json").strip())
        mutate(raw)
        config = ProjectConfig.from_json_value(raw)  # reject broken configs before writing
        _atomic_write_text(self.root / "project.json", canonicalize_value(raw) + "\n")
        return config

    # -- locking -----------------------------------------------------------

    @contextmanager
    def lock(self, force: bool = False) -> Iterator[None]:
        """Exclusive project lock via a pid file.

        A lock owned by a live process is never stolen. A stale lock (owner
        dead) is reclaimed only when force is set.
        """
        lock_path = self.root / ".lock"
        my_pid = os.getpid()
        while True:
            try:
                fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                with os.fdopen(fd, "w") as fh:
                    fh.write(f"{my_pid}\n")
                break
            except FileExistsError:
                try:
                    owner = int(lock_path.read_text().strip() or "0")
                except (ValueError, FileNotFoundError):
                    owner = 0
                if owner == my_pid:
                    raise ConflictError("project already locked by this process")
                if owner and _pid_alive(owner):
                    raise ConflictError(f"project locked by running process {owner}")
                if not force:
                    raise ConflictError(
                        f"stale lock left by dead process {owner}; retry with --force to reclaim"
                    )
                try:
                    lock_path.unlink()
                except FileNotFoundError:
                    pass
        try:
            yield
        finally:
            try:
                lock_path.unlink()
            except FileNotFoundError:
                pass

    # -- specs -------------------------------------------------------------

    def _piece_dir(self, piece_id: str) -> Path:
        return self.root / "specs" / piece_id

    def save_spec(self, spec: PieceSpec) -> None:
        path = self._piece_dir(spec.id) / f"spec.v{spec.version}.json"
        text = canonicalize_value(spec.to_json_value()) + "\n"
        if path.exists():
            if path.read_text(encoding="utf-8") == text:
                return  # idempotent re-put
            raise ConflictError(f"spec {spec.id!r} version {spec.version} already exists")
        _atomic_write_text(path, text)

    def load_spec(self, piece_id: str, version: Optional[int] = None) -> PieceSpec:
        if version is None:
            version = self.latest_spec_version(piece_id)
            if version == 0:
                raise NotFoundError(f"unknown piece {piece_id!r}")
        path = self._piece_dir(piece_id) / f"spec.v{version}.json"
        raw = _read_text(path, f"spec {piece_id!r} version {version}")
        return PieceSpec.from_json_value(parse_canonical(raw.strip()))

    def latest_spec_version(self, piece_id: str) -> int:
        return _max_version(self._piece_dir(piece_id), "spec.v", ".json")

    def list_pieces(self) -> list[str]:
        specs_dir = self.root / "specs"
        if not specs_dir.is_dir():
            return []
        return sorted(p.name for p in specs_dir.iterdir()
                      if p.is_dir() and _max_version(p, "spec.v", ".json") > 0)

    # -- testsuites ----------------------------------------------------------

    def _suite_path(self, piece_id: str, version: int) -> Path:
        return self._piece_dir(piece_id) / "suites" / f"v{version}.json"

    def save_suite(self, suite: TestSuite) -> None:
        path = self._suite_path(suite.piece_id, suite.suite_version)
        text = canonicalize_value(suite.to_json_value()) + "\n"
        if path.exists():
            existing = path.read_text(encoding="utf-8")
            if existing == text:
                return
            prior = TestSuite.from_json_value(parse_canonical(existing.strip()))
            if prior.state is SuiteState.APPROVED:
                raise ConflictError(
                    f"suite {suite.piece_id!r} v{suite.suite_version} is approved and immutable"
                )
        _atomic_write_text(path, text)

    def load_suite(self, piece_id: str, version: Optional[int] = None) -> TestSuite:
        if version is None:
            version = self.latest_suite_version(piece_id)
            if version == 0:
                raise NotFoundError(f"piece {piece_id!r} has no testsuite")
        raw = _read_text(self._suite_path(piece_id, version),
                         f"suite {piece_id!r} v{version}")
        return TestSuite.from_json_value(parse_canonical(raw.strip()))

    def latest_suite_version(self, piece_id: str) -> int:
        return _max_version(self._piece_dir(piece_id) / "suites", "v", ".json")

    # -- explanations / review sessions -------------------------------------

    def save_explanation(self, piece_id: str, suite_version: int, value: dict) -> None:
        path = self._piece_dir(piece_id) / "explanations" / f"v{suite_version}.json"
        _atomic_write_text(path, canonicalize_value(value) + "\n")

    def load_explanation(self, piece_id: str, suite_version: int) -> dict:
        raw = _read_text(self._piece_dir(piece_id) / "explanations" / f"v{suite_version}.json",
                         f"explanation for {piece_id!r} v{suite_version}")
        return parse_canonical(raw.strip())

    def save_review(self, piece_id: str, value: dict) -> None:
        _atomic_write_text(self._piece_dir(piece_id) / "review.json",
                           canonicalize_value(value) + "\n")

    def load_review(self, piece_id: str) -> Optional[dict]:
        path = self._piece_dir(piece_id) / "review.json"
        if not path.is_file():
            return None
        return parse_canonical(path.read_text(encoding="utf-8").strip())

    # -- candidates ----------------------------------------------------------

    def _candidates_dir(self, piece_id: str) -> Path:
        return self._piece_dir(piece_id) / "candidates"

    def save_candidate(self, piece_id: str, candidate: CodeCandidate,
                       file_extension: str) -> None:
        cdir = self._candidates_dir(piece_id)
        source_path = cdir / (candidate.candidate_id + file_extension)
        meta_path = cdir / (candidate.candidate_id + ".json")
        if not source_path.exists():
            _atomic_write_text(source_path, candidate.source)
        _atomic_write_text(meta_path, canonicalize_value(candidate.to_json_value()) + "\n")

    def load_candidate(self, piece_id: str, candidate_id: str) -> CodeCandidate:
        cdir = self._candidates_dir(piece_id)
        meta_path = cdir / (candidate_id + ".json")
        raw = _read_text(meta_path, f"candidate {candidate_id!r}")
        meta = parse_canonical(raw.strip())
        source = None
        for path in cdir.glob(candidate_id + ".*"):
            if path.suffix != ".json":
                source = path.read_text(encoding="utf-8")
                break
        if source is None:
            raise CorruptionError(f"candidate {candidate_id!r} has metadata but no source file")
        return CodeCandidate(
            candidate_id=meta["candidate_id"],
            source=source,
            runner_profile=meta["runner_profile"],
            produced_at=meta["produced_at"],
            origin_iteration=int(meta["origin_iteration"]),
            backend_id=meta["backend_id"],
        )

    def list_candidates(self, piece_id: str) -> list[dict]:
        cdir = self._candidates_dir(piece_id)
        if not cdir.is_dir():
            return []
        metas = []
        for path in sorted(cdir.glob("*.json")):
            metas.append(parse_canonical(path.read_text(encoding="utf-8").strip()))
        metas.sort(key=lambda m: (m.get("origin_iteration", 0), m["candidate_id"]))
        return metas

    def pin_candidate(self, piece_id: str, candidate_id: str) -> None:
        self.load_candidate(piece_id, candidate_id)  # unknown id -> NotFoundError
        _atomic_write_text(self._piece_dir(piece_id) / "state.json",
                           canonicalize_value({"pinned_candidate": candidate_id}) + "\n")

    def pinned_candidate(self, piece_id: str) -> Optional[str]:
        path = self._piece_dir(piece_id) / "state.json"
        if not path.is_file():
            return None
        return parse_canonical(path.read_text(encoding="utf-8").strip()).get("pinned_candidate")

    # -- graphs --------------------------------------------------------------

    def save_graph(self, graph_value: dict) -> None:
        graph_id = graph_value.get("graph_id")
        if not graph_id:
            raise ValidationError("graph value lacks graph_id")
        _atomic_write_text(self.root / "graphs" / f"{graph_id}.json",
                           canonicalize_value(graph_value) + "\n")

    def load_graph(self, graph_id: str) -> dict:
        raw = _read_text(self.root / "graphs" / f"{graph_id}.json", f"graph {graph_id!r}")
        return parse_canonical(raw.strip())

    def list_graphs(self) -> list[str]:
        gdir = self.root / "graphs"
        if not gdir.is_dir():
            return []
        return sorted(p.stem for p in gdir.glob("*.json"))

    # -- runs ----------------------------------------------------------------

    def new_run_id(self) -> str:
        runs = self.root / "runs"
        runs.mkdir(exist_ok=True)
        existing = [int(p.name[4:]) for p in runs.iterdir()
                    if p.name.startswith("run-") and p.name[4:].isdigit()]
        n = max(existing, default=0) + 1
        while True:
            run_id = f"run-{n:06d}"
            try:
                (runs / run_id).mkdir()
                return run_id
            except FileExistsError:
                n += 1

    def save_run_state(self, run_id: str, value: dict) -> None:
        _atomic_write_text(self.root / "runs" / run_id / "state.json",
                           canonicalize_value(value) + "\n")

    def load_run_state(self, run_id: str) -> dict:
        raw = _read_text(self.root / "runs" / run_id / "state.json", f"run {run_id!r}")
        return parse_canonical(raw.strip())

    def save_trace(self, run_id: str, value) -> None:
        _atomic_write_text(self.root / "runs" / run_id / "trace.json",
                           canonicalize_value(value) + "\n")

    def load_trace(self, run_id: str):
        raw = _read_text(self.root / "runs" / run_id / "trace.json",
                         f"trace for run {run_id!r}")
        return parse_canonical(raw.strip())

    def list_runs(self) -> list[str]:
        runs = self.root / "runs"
        if not runs.is_dir():
            return []
        return sorted(p.name for p in runs.iterdir() if p.is_dir())

    # -- generic artifact access ---------------------------------------------

    def get_artifact(self, ref: str) -> str:
        """Exact stored text for an artifact reference, byte-identical."""
        kind, _, body = ref.partition(":")
        if kind == "spec":
            piece, version = _split_versioned(body)
            if version is None:
                version = self.latest_spec_version(piece) or None
            if version is None:
                raise NotFoundError(f"unknown piece {piece!r}")
            return _read_text(self._piece_dir(piece) / f"spec.v{version}.json", ref)
        if kind == "suite":
            piece, version = _split_versioned(body)
            if version is None:
                version = self.latest_suite_version(piece) or None
            if version is None:
                raise NotFoundError(f"piece {piece!r} has no testsuite")
            return _read_text(self._suite_path(piece, version), ref)
        if kind == "candidate":
            piece, _, candidate_id = body.partition("/")
            if not candidate_id:
                raise ValidationError(f"candidate ref {ref!r} must be candidate:<piece>/<hash>")
            return self.load_candidate(piece, candidate_id).source
        if kind == "graph":
            return _read_text(self.root / "graphs" / f"{body}.json", ref)
        if kind == "trace":
            return _read_text(self.root / "runs" / body / "trace.json", ref)
        raise ValidationError(f"unknown artifact kind {kind!r}")

    # -- audit log -------------------------------------------------------------

    def append_event(self, actor: dict, action: str, refs: list[str],
                     payload=None) -> AuditEvent:
        if self._next_seq is None:
            events = self.read_history()
            self._next_seq = (events[-1].seq + 1) if events else 1
        event = AuditEvent(
            seq=self._next_seq,
            timestamp=utc_now(),
            actor=actor,
            action=action,
            refs=tuple(refs),
            payload_digest=value_digest(payload) if payload is not None else "",
        )
        line = canonicalize_value(event.to_json_value()) + "\n"
        with open(self.root / "history.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        self._next_seq += 1
        return event

    def read_history(self, piece: Optional[str] = None,
                     action: Optional[str] = None,
                     start_seq: int = 1) -> list[AuditEvent]:
        """Parse and verify the whole log, then filter.

        A sequence gap or a torn line is corruption and is reported with its
        line number rather than silently skipped.
        """
        path = self.root / "history.jsonl"
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise CorruptionError("history.jsonl is missing") from None
        if not data:
            return []
        if not data.endswith(b"\n"):
            line_no = data.count(b"\n") + 1
            raise CorruptionError(f"history line {line_no}: truncated (no trailing newline)")
        events: list[AuditEvent] = []
        for line_no, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
            try:
                value = parse_canonical(raw)
                event = AuditEvent.from_json_value(value)
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptionError(f"history line {line_no}: unreadable event: {exc}") from exc
            if event.seq != line_no:
                raise CorruptionError(
                    f"history line {line_no}: expected seq {line_no}, found {event.seq}"
                )
            events.append(event)
        out = []
        for event in events:
            if event.seq < start_seq:
                continue
            if action is not None and event.action != action:
                continue
            if piece is not None and not event.mentions_piece(piece):
                continue
            out.append(event)
        return out


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _max_version(directory: Path, prefix: str, suffix: str) -> int:
    if not directory.is_dir():
        return 0
    best = 0
    for path in directory.iterdir():
        name = path.name
        if name.startswith(prefix) and name.endswith(suffix):
            middle = name[len(prefix):len(name) - len(suffix)]
            if middle.isdigit():
                best = max(best, int(middle))
    return best


def _split_versioned(body: str) -> tuple[str, Optional[int]]:
    name, sep, version = body.partition("@")
    if not sep:
        return name, None
    if not version.isdigit():
        raise ValidationError(f"bad artifact version {version!r}")
    return name, int(version)
