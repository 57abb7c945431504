"""Sandboxed subprocess runner for analysis steps.

Each step runs in a freshly created working directory, as a child process
with CPU and address-space limits, no network egress (socket constructors are
disabled via an injected ``sitecustomize``), and only the step's own inputs
plus read-only dataset paths in view. Files the script writes under ``out/``
become the step's artifacts; a ``metrics`` file of ``key=value`` lines becomes
its metrics.

The runner is an interface boundary: a container-based runtime could replace
this class without touching the agent around it.
"""

from __future__ import annotations

import json
import os
import resource
import shutil
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from ..errors import (MalformedPath, ResourceLimitExceeded, ScriptError,
                      Terminated)
from ..model import StepBundle, StepOutput

OUT_DIR = "out"
METRICS_FILE = "metrics"

_EGRESS_GUARD = '''\
"""Injected into analysis sandboxes: no network egress from inside a step."""
import socket

_MESSAGE = "network egress is disabled inside the analysis sandbox"


class _DeniedSocket(socket.socket):
    # still a class so `import ssl` (which subclasses it) keeps working
    def __init__(self, *args, **kwargs):
        raise OSError(_MESSAGE)


def _deny(*args, **kwargs):
    raise OSError(_MESSAGE)


socket.socket = _DeniedSocket
socket.create_connection = _deny
socket.socketpair = _deny
socket.getaddrinfo = _deny
socket.gethostbyname = _deny
'''


@dataclass(frozen=True)
class RunnerSpec:
    environment_id: str = "python3"
    cpu_seconds_limit: int = 30
    memory_limit_bytes: int = 1024 * 1024 * 1024
    wall_clock_limit_seconds: float = 60.0


class PacRunner:
    def __init__(self, work_root: Path, spec: RunnerSpec = RunnerSpec()):
        self.work_root = Path(work_root).resolve()
        self.spec = spec
        self._guard_dir = self.work_root / "_guard"
        self._guard_dir.mkdir(parents=True, exist_ok=True)
        (self._guard_dir / "sitecustomize.py").write_text(_EGRESS_GUARD)

    def workdir_for(self, bundle: StepBundle) -> Path:
        step_dir = bundle.step_key.replace("/", "_")
        return (self.work_root / bundle.task_id / f"it{bundle.iteration}"
                / step_dir)

    def run(self, bundle: StepBundle, dataset_paths: Mapping[str, Path],
            cancel: Optional[threading.Event] = None) -> StepOutput:
        workdir = self.workdir_for(bundle)
        if workdir.exists():
            shutil.rmtree(workdir)  # the sandbox always starts empty
        workdir.mkdir(parents=True)
        (workdir / OUT_DIR).mkdir()
        for name, data in {**bundle.scripts, **bundle.inputs}.items():
            target = (workdir / name).resolve()
            if not target.is_relative_to(workdir.resolve()):
                raise MalformedPath(f"bundle entry {name!r} escapes the "
                                    "step sandbox")
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        if bundle.entry_script not in bundle.scripts:
            raise ScriptError(-1, f"entry script {bundle.entry_script!r} "
                                  "is not in the bundle")

        try:
            self._execute(bundle, workdir, dataset_paths, cancel)
            output = self._collect(bundle, workdir)
        except Exception:
            if not bundle.keep_local_copy:
                shutil.rmtree(workdir, ignore_errors=True)
            raise
        if not bundle.keep_local_copy:
            shutil.rmtree(workdir, ignore_errors=True)
        return output

    def _execute(self, bundle: StepBundle, workdir: Path,
                 dataset_paths: Mapping[str, Path],
                 cancel: Optional[threading.Event]) -> None:
        spec = self.spec

        def limits() -> None:
            resource.setrlimit(resource.RLIMIT_CPU,
                               (spec.cpu_seconds_limit, spec.cpu_seconds_limit))
            resource.setrlimit(resource.RLIMIT_AS,
                               (spec.memory_limit_bytes, spec.memory_limit_bytes))

        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": str(workdir),
            "PYTHONPATH": str(self._guard_dir),
            "PYTHONDONTWRITEBYTECODE": "1",
            "SITE_ID": bundle.site_id,
            "TASK_ID": bundle.task_id,
            "FABRIC_ITERATION": str(bundle.iteration),
            "FABRIC_COMMAND": bundle.command.value,
            "FABRIC_PARAMS": json.dumps(bundle.params),
            "FABRIC_DATASETS": json.dumps(
                {ds: str(path) for ds, path in dataset_paths.items()}),
            "FABRIC_OUT": str(workdir / OUT_DIR),
        }
        proc = subprocess.Popen(
            [sys.executable, bundle.entry_script],
            cwd=workdir, env=env, preexec_fn=limits,
            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            start_new_session=True)

        deadline = time.monotonic() + spec.wall_clock_limit_seconds
        while proc.poll() is None:
            if cancel is not None and cancel.is_set():
                _kill(proc)
                raise Terminated(f"step {bundle.step_key} terminated on request")
            if time.monotonic() > deadline:
                _kill(proc)
                raise ResourceLimitExceeded(
                    f"step {bundle.step_key} exceeded the "
                    f"{spec.wall_clock_limit_seconds}s wall-clock limit")
            time.sleep(0.02)

        _, stderr = proc.communicate()
        if proc.returncode != 0:
            if -proc.returncode in (signal.SIGXCPU, signal.SIGKILL):
                raise ResourceLimitExceeded(
                    f"step {bundle.step_key} exceeded a resource limit "
                    f"(signal {-proc.returncode})")
            raise ScriptError(proc.returncode,
                              stderr.decode(errors="replace")[-2000:])

    def _collect(self, bundle: StepBundle, workdir: Path) -> StepOutput:
        out_dir = workdir / OUT_DIR
        artifacts: dict[str, bytes] = {}
        stamp = f".{int(time.time())}" if bundle.timestamp_results else ""
        for path in sorted(out_dir.rglob("*")):
            if not path.is_file():
                continue
            name = path.relative_to(out_dir).as_posix() + stamp
            artifacts[name] = path.read_bytes()
        return StepOutput(
            task_id=bundle.task_id, iteration=bundle.iteration,
            site_id=bundle.site_id, artifacts=artifacts,
            metrics=_parse_metrics(workdir / METRICS_FILE),
            local_copy_kept=bundle.keep_local_copy)


def _kill(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()
    proc.wait()


def _parse_metrics(path: Path) -> dict:
    if not path.is_file():
        return {}
    metrics: dict = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        try:
            metrics[key.strip()] = float(value.strip())
        except ValueError:
            metrics[key.strip()] = value.strip()
    return metrics
