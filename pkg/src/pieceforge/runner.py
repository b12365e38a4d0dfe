"""Sandboxed execution of generated pieces.

Every piece speaks the same protocol: one line of canonical JSON on stdin,
one line of JSON on stdout, exit code 0. Anything else is a failure with a
classification, never an exception, so callers can treat execution results
as plain data.

Isolation is best effort at process level: a fresh scratch directory as the
working directory, an allowlisted environment, a wall-clock deadline that
kills the whole process group, and hard caps on captured output.
"""

from __future__ import annotations

import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import IO, Optional

from .errors import ValidationError
from .model import canonicalize_value


class ExecStatus(str, Enum):
    OK = "ok"
    NONZERO_EXIT = "nonzero_exit"
    TIMEOUT = "timeout"
    MALFORMED_OUTPUT = "malformed_output"
    SPAWN_ERROR = "spawn_error"


@dataclass(frozen=True)
class RunnerProfile:
    """How to run a piece: interpreter argv, limits, environment allowlist."""

    name: str
    command: tuple[str, ...]  # argv; "{file}" is replaced by the source path
    file_extension: str = ".py"
    timeout: float = 10.0
    max_output_bytes: int = 1_000_000
    env: tuple[tuple[str, str], ...] = ()
    static_check_command: tuple[str, ...] = ()  # empty means no static checker

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("profile name must be non-empty")
        if not self.command:
            raise ValidationError("profile command must be non-empty")
        if self.timeout <= 0:
            raise ValidationError("profile timeout must be positive")
        if self.max_output_bytes <= 0:
            raise ValidationError("max_output_bytes must be positive")

    def to_json_value(self) -> dict:
        out: dict = {
            "name": self.name,
            "command": list(self.command),
            "file_extension": self.file_extension,
            "timeout": self.timeout,
            "max_output_bytes": self.max_output_bytes,
            "env": {k: v for k, v in self.env},
        }
        if self.static_check_command:
            out["static_check_command"] = list(self.static_check_command)
        return out

    @classmethod
    def from_json_value(cls, data: dict) -> "RunnerProfile":
        return cls(
            name=data["name"],
            command=tuple(data["command"]),
            file_extension=data.get("file_extension", ".py"),
            timeout=float(data.get("timeout", 10.0)),
            max_output_bytes=int(data.get("max_output_bytes", 1_000_000)),
            env=tuple(sorted(data.get("env", {}).items())),
            static_check_command=tuple(data.get("static_check_command", [])),
        )


def python_profile(name: str = "default", timeout: float = 10.0,
                   max_output_bytes: int = 1_000_000) -> RunnerProfile:
    """Profile running pieces with this interpreter, site imports disabled."""
    return RunnerProfile(
        name=name,
        command=(sys.executable, "-S", "-E", "{file}"),
        file_extension=".py",
        timeout=timeout,
        max_output_bytes=max_output_bytes,
        env=(("PATH", os.environ.get("PATH", "/usr/bin:/bin")),),
    )


def shell_profile(name: str = "sh", timeout: float = 10.0,
                  max_output_bytes: int = 1_000_000) -> RunnerProfile:
    """Profile for POSIX shell pieces; spawns far faster than an interpreter VM."""
    return RunnerProfile(
        name=name,
        command=("/bin/sh", "{file}"),
        file_extension=".sh",
        timeout=timeout,
        max_output_bytes=max_output_bytes,
        env=(("PATH", "/usr/bin:/bin"),),
    )


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    output: object = None  # parsed JSON value when status is ok
    stdout: str = ""
    stderr: str = ""
    exit_code: Optional[int] = None
    duration: float = 0.0
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.OK

    def to_json_value(self) -> dict:
        out: dict = {
            "status": self.status.value,
            "duration": self.duration,
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
        }
        if self.status is ExecStatus.OK:
            out["output"] = self.output
        if self.exit_code is not None:
            out["exit_code"] = self.exit_code
        if self.detail:
            out["detail"] = self.detail
        if self.stderr:
            out["stderr"] = self.stderr
        return out


class _CappedReader(threading.Thread):
    """Drains a pipe fully but stores at most `cap` bytes of it."""

    def __init__(self, stream: IO[bytes], cap: int):
        super().__init__(daemon=True)
        self._stream = stream
        self._cap = cap
        self.chunks: list[bytes] = []
        self.size = 0
        self.truncated = False

    def run(self) -> None:
        try:
            while True:
                chunk = self._stream.read(65536)
                if not chunk:
                    break
                if self.size < self._cap:
                    keep = chunk[: self._cap - self.size]
                    self.chunks.append(keep)
                    self.size += len(keep)
                    if len(keep) < len(chunk):
                        self.truncated = True
                else:
                    self.truncated = True
        except (OSError, ValueError):
            pass

    def text(self) -> str:
        return b"".join(self.chunks).decode("utf-8", errors="replace")


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def execute_piece(source: str, profile: RunnerProfile, input_value: object) -> ExecutionResult:
    """Run one piece once on one input.

    The input is encoded canonically, so a non-encodable input (NaN, bad
    types) raises before any process is spawned.
    """
    input_line = canonicalize_value(input_value) + "\n"
    started = time.monotonic()

    workdir = tempfile.mkdtemp(prefix="piece-")
    try:
        src_path = os.path.join(workdir, "piece" + profile.file_extension)
        with open(src_path, "w", encoding="utf-8") as fh:
            fh.write(source)
        argv = [part.replace("{file}", src_path) for part in profile.command]
        env = {k: v for k, v in profile.env}

        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=env,
                start_new_session=True,  # lets the deadline kill the whole group
            )
        except OSError as exc:
            return ExecutionResult(
                status=ExecStatus.SPAWN_ERROR,
                duration=time.monotonic() - started,
                detail=f"cannot spawn {argv[0]!r}: {exc}",
            )

        out_reader = _CappedReader(proc.stdout, profile.max_output_bytes)
        err_reader = _CappedReader(proc.stderr, profile.max_output_bytes)
        out_reader.start()
        err_reader.start()

        try:
            proc.stdin.write(input_line.encode("utf-8"))
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass  # the piece exited before reading; classify by its exit below

        timed_out = False
        try:
            exit_code = proc.wait(timeout=profile.timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_group(proc)
            exit_code = proc.wait()
        out_reader.join(timeout=5.0)
        err_reader.join(timeout=5.0)
        duration = time.monotonic() - started

        stdout = out_reader.text()
        stderr = err_reader.text()
        base = dict(
            stdout=stdout,
            stderr=stderr,
            exit_code=exit_code,
            duration=duration,
            stdout_truncated=out_reader.truncated,
            stderr_truncated=err_reader.truncated,
        )

        if timed_out:
            return ExecutionResult(status=ExecStatus.TIMEOUT,
                                   detail=f"no exit within {profile.timeout}s", **base)
        if exit_code != 0:
            return ExecutionResult(status=ExecStatus.NONZERO_EXIT,
                                   detail=f"exit code {exit_code}", **base)
        if out_reader.truncated:
            return ExecutionResult(status=ExecStatus.MALFORMED_OUTPUT,
                                   detail="stdout exceeded max_output_bytes", **base)

        body = stdout.strip()
        if not body:
            return ExecutionResult(status=ExecStatus.MALFORMED_OUTPUT,
                                   detail="empty stdout", **base)
        if "\n" in body:
            return ExecutionResult(status=ExecStatus.MALFORMED_OUTPUT,
                                   detail="more than one line on stdout", **base)
        try:
            output = json.loads(body)
        except ValueError as exc:
            return ExecutionResult(status=ExecStatus.MALFORMED_OUTPUT,
                                   detail=f"stdout is not JSON: {exc}", **base)
        return ExecutionResult(status=ExecStatus.OK, output=output, **base)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
