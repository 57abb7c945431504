"""Task lifecycle management.

Creates tasks from workflow submissions, drives the six-checkpoint lifecycle
(Queued, Queuing, Created, Sending, Sent, Complete), appends runtime/error
logs, computes progress, handles cancel/rerun, and collects results.

Persistence is an sqlite index plus one append-only log file per task; both
survive restarts. Tasks interrupted by a restart are marked Failed with an
explanatory error entry — dispatch is at most once, analytics are never
silently re-executed.
"""

from __future__ import annotations

import json
import hashlib
import sqlite3
import threading
import time
import uuid
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

from . import orchestrator as orch
from .auth import AuthStore
from .errors import (
    AlreadyTerminal,
    Canceled,
    FabricError,
    IllegalTransition,
    NotComplete,
    NotFound,
    PermissionDenied,
    SiteUnreachable,
)
from .model import (
    Action,
    LogEntry,
    Principal,
    RepoPath,
    Role,
    Task,
    TaskState,
    can_transition,
    is_terminal,
    parse_repo_path,
)
from .repo import CONFIG_FILE, RepoStore

RUNTIME = "runtime"
ERROR = "error"

# Progress weights per checkpoint. The paper shows a progress bar but gives
# no estimator, so this table is this implementation's choice: monotone,
# cheap, and weighted toward site-side execution where most wall time goes.
_WEIGHTS = {
    TaskState.QUEUED: 0.05,
    TaskState.QUEUING: 0.15,
    TaskState.CREATED: 0.25,
    TaskState.SENDING: 0.35,
}
_SENT_BASE = 0.40
_SENT_SPAN = 0.55


def compute_progress(state: TaskState, completed_steps: int,
                     planned_steps: int) -> float:
    if state is TaskState.COMPLETE:
        return 1.0
    if state is TaskState.SENT:
        ratio = (completed_steps / planned_steps) if planned_steps else 0.0
        return _SENT_BASE + _SENT_SPAN * min(ratio, 1.0)
    return _WEIGHTS.get(state, 0.0)


def parse_log_line(line: str) -> LogEntry:
    stamp, task_id, stream, checkpoint, *rest = line.rstrip("\n").split(" ", 4)
    return LogEntry(
        task_id=task_id,
        timestamp=datetime.fromisoformat(stamp).timestamp(),
        stream=stream,
        checkpoint=None if checkpoint == "-" else TaskState(checkpoint),
        message=rest[0] if rest else "")


@dataclass(frozen=True)
class SiteCredential:
    """How the middleware reaches one data-site agent."""

    site_id: str
    endpoint: str
    key_id: str
    secret: str
    datasets: tuple[str, ...] = ()


@dataclass
class _Record:
    task_id: str
    user: str
    use_case_key: str
    version_path: RepoPath
    state: TaskState
    parameters: dict
    created_at: float
    site_ids: tuple[str, ...] = ()
    planned_steps: int = 0
    completed_steps: int = 0
    result_ref: Optional[str] = None
    progress: float = 0.0
    checkpoints: list[LogEntry] = field(default_factory=list)
    cancel: threading.Event = field(default_factory=threading.Event)
    lock: threading.Lock = field(default_factory=threading.Lock)


class TaskManager:
    def __init__(self, root_dir: Union[str, Path], repo: RepoStore,
                 auth: AuthStore, sites: Mapping[str, SiteCredential],
                 per_site_limit: int = 2, max_workers: int = 8,
                 client_factory: Optional[
                     Callable[[SiteCredential], orch.SiteClient]] = None):
        self.root_dir = Path(root_dir)
        self.root_dir.mkdir(parents=True, exist_ok=True)
        self.logs_dir = self.root_dir / "logs"
        self.logs_dir.mkdir(exist_ok=True)
        self.results_root = self.root_dir / "results"
        self.results_root.mkdir(exist_ok=True)
        self.repo = repo
        self.auth = auth
        self.sites = dict(sites)
        self.per_site_limit = per_site_limit
        self._client_factory = client_factory or (
            lambda cred: orch.SiteClient(cred.site_id, cred.endpoint,
                                         cred.key_id, cred.secret))
        self._clients: dict[str, orch.SiteClient] = {}
        self._records: dict[str, _Record] = {}
        self._pending: list[str] = []
        self._inflight: Counter = Counter()
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._db = sqlite3.connect(self.root_dir / "tasks.db",
                                   check_same_thread=False)
        self._db_lock = threading.Lock()
        self._init_db()
        self._recover()

    # -- persistence ----------------------------------------------------------

    def _init_db(self) -> None:
        with self._db_lock:
            self._db.execute(
                "CREATE TABLE IF NOT EXISTS tasks ("
                " task_id TEXT PRIMARY KEY, user TEXT NOT NULL,"
                " use_case_key TEXT NOT NULL, version_path TEXT NOT NULL,"
                " state TEXT NOT NULL, progress REAL NOT NULL,"
                " result_ref TEXT, parameters TEXT NOT NULL,"
                " created_at REAL NOT NULL,"
                " planned_steps INTEGER NOT NULL DEFAULT 0,"
                " completed_steps INTEGER NOT NULL DEFAULT 0)")
            self._db.commit()

    def _persist(self, rec: _Record) -> None:
        with self._db_lock:
            self._db.execute(
                "INSERT INTO tasks (task_id, user, use_case_key, version_path,"
                " state, progress, result_ref, parameters, created_at,"
                " planned_steps, completed_steps)"
                " VALUES (?,?,?,?,?,?,?,?,?,?,?)"
                " ON CONFLICT(task_id) DO UPDATE SET state=excluded.state,"
                " progress=excluded.progress, result_ref=excluded.result_ref,"
                " parameters=excluded.parameters,"
                " planned_steps=excluded.planned_steps,"
                " completed_steps=excluded.completed_steps",
                (rec.task_id, rec.user, rec.use_case_key,
                 rec.version_path.render(), rec.state.value, rec.progress,
                 rec.result_ref, json.dumps(rec.parameters), rec.created_at,
                 rec.planned_steps, rec.completed_steps))
            self._db.commit()

    def _recover(self) -> None:
        """Load persisted tasks; fail any task a restart interrupted."""
        with self._db_lock:
            rows = self._db.execute(
                "SELECT task_id, user, use_case_key, version_path, state,"
                " progress, result_ref, parameters, created_at,"
                " planned_steps, completed_steps FROM tasks").fetchall()
        for row in rows:
            rec = _Record(
                task_id=row[0], user=row[1], use_case_key=row[2],
                version_path=parse_repo_path(row[3]), state=TaskState(row[4]),
                parameters=json.loads(row[7]), created_at=row[8],
                planned_steps=row[9], completed_steps=row[10],
                result_ref=row[6], progress=row[5])
            log_file = self.logs_dir / f"{rec.task_id}.log"
            if log_file.exists():
                rec.checkpoints = [
                    e for e in map(parse_log_line,
                                   log_file.read_text().splitlines())
                    if e.stream == RUNTIME and e.checkpoint is not None]
            self._records[rec.task_id] = rec
            if not is_terminal(rec.state):
                self._log(rec, ERROR, None,
                          "middleware restarted before the task finished; "
                          "marking Failed (dispatch is at most once)")
                rec.state = TaskState.FAILED
                self._persist(rec)

    # -- logging --------------------------------------------------------------

    def _log(self, rec: _Record, stream: str, checkpoint: Optional[TaskState],
             message: str) -> LogEntry:
        entry = LogEntry(task_id=rec.task_id, timestamp=time.time(),
                         stream=stream, checkpoint=checkpoint,
                         message=message)
        with open(self.logs_dir / f"{rec.task_id}.log", "a") as fh:
            fh.write(entry.to_line() + "\n")
        if stream == RUNTIME and checkpoint is not None:
            rec.checkpoints.append(entry)
        return entry

    # -- public operations -----------------------------------------------------

    def submit(self, principal: Principal,
               version_path: Union[str, RepoPath],
               overrides: Optional[Mapping] = None) -> Task:
        path = (parse_repo_path(version_path)
                if isinstance(version_path, str) else version_path)
        self.repo.require(principal, Action.EXECUTE, path)
        config = self.repo.load_config(principal, path,
                                       sites=sorted(self.sites) or None)
        meta = self.repo.use_case_meta(principal, path) or {}
        rec = _Record(
            task_id=f"t-{uuid.uuid4().hex}",
            user=principal.user_id,
            use_case_key=meta.get("key", path.use_case or ""),
            version_path=path,
            state=TaskState.QUEUED,
            parameters=dict(overrides or {}),
            created_at=time.time(),
            site_ids=config.site_ids)
        rec.progress = compute_progress(rec.state, 0, 0)
        with self._lock:
            self._records[rec.task_id] = rec
        # The Queued entry must hit the log before dispatch can append more.
        self._log(rec, RUNTIME, TaskState.QUEUED,
                  f"task queued for {path.render()} by {principal.user_id}")
        self._persist(rec)
        snapshot = self._snapshot(rec)  # callers always see the Queued view
        with self._lock:
            self._pending.append(rec.task_id)
        self._pump()
        return snapshot

    def advance(self, task_id: str, checkpoint: TaskState,
                message: str) -> Task:
        """Internal checkpoint transition; illegal transitions are recorded
        on the error stream and leave the state unchanged."""
        rec = self._get(task_id)
        with rec.lock:
            if not can_transition(rec.state, checkpoint):
                self._log(rec, ERROR, None,
                          f"illegal transition {rec.state.value} -> "
                          f"{checkpoint.value}: {message}")
                raise IllegalTransition(
                    f"cannot move task from {rec.state.value} "
                    f"to {checkpoint.value}")
            rec.state = checkpoint
            rec.progress = max(rec.progress, compute_progress(
                checkpoint, rec.completed_steps, rec.planned_steps))
            self._log(rec, RUNTIME, checkpoint, message)
            self._persist(rec)
            return self._snapshot(rec)

    def cancel(self, principal: Principal, task_id: str) -> Task:
        rec = self._get(task_id)
        self._require_task_access(principal, rec, "cancel")
        with rec.lock:
            if is_terminal(rec.state):
                raise AlreadyTerminal(
                    f"task {task_id} is already {rec.state.value}")
            rec.state = TaskState.CANCELED
            rec.cancel.set()
            self._log(rec, RUNTIME, TaskState.CANCELED,
                      f"canceled by {principal.user_id}")
            self._persist(rec)
        with self._lock:
            if task_id in self._pending:
                self._pending.remove(task_id)
        self._terminate_sites(rec)
        return self._snapshot(rec)

    def rerun(self, principal: Principal, task_id: str,
              overrides: Optional[Mapping] = None) -> Task:
        rec = self._get(task_id)
        self._require_task_access(principal, rec, "rerun")
        if not is_terminal(rec.state):
            self.cancel(principal, task_id)
        merged = dict(rec.parameters)
        merged.update(overrides or {})
        return self.submit(principal, rec.version_path, merged)

    def progress(self, task_id: str) -> float:
        return self._get(task_id).progress

    def get(self, task_id: str) -> Task:
        return self._snapshot(self._get(task_id))

    def get_task(self, principal: Principal, task_id: str) -> Task:
        rec = self._get(task_id)
        self._require_task_access(principal, rec, "read")
        return self._snapshot(rec)

    def list_tasks(self, principal: Principal) -> list[Task]:
        with self._lock:
            records = list(self._records.values())
        visible = [r for r in records
                   if self._can_access_task(principal, r)]
        visible.sort(key=lambda r: r.created_at)
        return [self._snapshot(r) for r in visible]

    def get_logs(self, principal: Principal, task_id: str,
                 stream: Optional[str] = None) -> list[LogEntry]:
        rec = self._get(task_id)
        self._require_task_access(principal, rec, "read logs of")
        log_file = self.logs_dir / f"{task_id}.log"
        if not log_file.exists():
            return []
        entries = [parse_log_line(line)
                   for line in log_file.read_text().splitlines()]
        if stream is not None:
            entries = [e for e in entries if e.stream == stream]
        return sorted(entries, key=lambda e: e.timestamp)

    def get_result_ref(self, principal: Principal, task_id: str) -> str:
        rec = self._get(task_id)
        self._require_task_access(principal, rec, "read results of")
        if rec.state is not TaskState.COMPLETE or rec.result_ref is None:
            raise NotComplete(
                f"task {task_id} is {rec.state.value}; results are only "
                "available once Complete")
        return rec.result_ref

    def result_dir(self, result_ref: str) -> Path:
        target = (self.results_root / result_ref).resolve()
        if not target.is_relative_to(self.results_root.resolve()):
            raise NotFound(f"result ref {result_ref!r} escapes storage")
        if not target.is_dir():
            raise NotFound(f"no results stored at {result_ref!r}")
        return target

    def shutdown(self, wait: bool = True) -> None:
        self._pool.shutdown(wait=wait)

    # -- access control --------------------------------------------------------

    def _can_access_task(self, principal: Principal, rec: _Record) -> bool:
        return (principal.user_id == rec.user
                or self.auth.is_admin(principal.user_id)
                or principal.has_role(Role.WORKFLOW_DESIGNER))

    def _require_task_access(self, principal: Principal, rec: _Record,
                             verb: str) -> None:
        if not self._can_access_task(principal, rec):
            raise PermissionDenied(
                f"{principal.user_id} may not {verb} task {rec.task_id} "
                f"owned by {rec.user}")

    # -- queueing and dispatch -------------------------------------------------

    def _pump(self) -> None:
        to_run = []
        with self._lock:
            remaining = []
            for task_id in self._pending:
                rec = self._records[task_id]
                if is_terminal(rec.state):
                    continue
                if all(self._inflight[s] < self.per_site_limit
                       for s in rec.site_ids):
                    for s in rec.site_ids:
                        self._inflight[s] += 1
                    to_run.append(task_id)
                else:
                    remaining.append(task_id)
            self._pending = remaining
        for task_id in to_run:
            self._pool.submit(self._run, task_id)

    def _release(self, rec: _Record) -> None:
        with self._lock:
            for s in rec.site_ids:
                self._inflight[s] = max(0, self._inflight[s] - 1)
        self._pump()

    def _run(self, task_id: str) -> None:
        rec = self._get(task_id)
        try:
            self._advance_or_stop(rec, TaskState.QUEUING,
                                  "retrieving workflow scripts and "
                                  "configuration from the repository")
            principal = self.auth.principal(rec.user)
            config = self.repo.load_config(principal, rec.version_path,
                                           sites=sorted(self.sites) or None)
            config = self._apply_overrides(config, rec.parameters)
            scripts = self._fetch_scripts(principal, rec.version_path)
            exec_plan = orch.plan(task_id, config)
            with rec.lock:
                # site_ids stays as captured at submit time: the in-flight
                # accounting and terminate fan-out key off that set.
                rec.planned_steps = exec_plan.planned_step_total
            self._advance_or_stop(
                rec, TaskState.CREATED,
                f"task created: {len(config.steps)} steps across sites "
                f"{', '.join(config.site_ids)}"
                + (f"; iterative via coordinator {exec_plan.coordinator}"
                   if exec_plan.iterative else ""))
            clients = {s: self._client(s) for s in config.site_ids}
            self._advance_or_stop(rec, TaskState.SENDING,
                                  "transferring task bundles to data sites")
            self._advance_or_stop(rec, TaskState.SENT,
                                  "task accepted by all data sites; "
                                  "execution in progress")
            runner = orch.Orchestrator(
                clients,
                site_datasets={s: c.datasets for s, c in self.sites.items()})
            result = runner.execute(exec_plan, user=rec.user, scripts=scripts,
                                    cancel=rec.cancel,
                                    on_step=lambda site, step:
                                        self._step_done(rec, site, step))
            ref = self._store_results(rec, config, result)
            with rec.lock:
                rec.result_ref = ref
            self._advance_or_stop(
                rec, TaskState.COMPLETE,
                f"completed after {result.iterations} iteration(s); "
                f"results stored at {ref}")
        except _Stopped:
            pass
        except Canceled:
            pass  # cancel() already logged and transitioned
        except FabricError as exc:
            self._fail(rec, f"{exc.code}: {exc.message}", exc.detail)
        except Exception as exc:  # noqa: BLE001 - recorded, never swallowed
            self._fail(rec, f"InternalError: {exc!r}", None)
        finally:
            self._release(rec)

    def _advance_or_stop(self, rec: _Record, checkpoint: TaskState,
                         message: str) -> None:
        try:
            self.advance(rec.task_id, checkpoint, message)
        except IllegalTransition:
            # Terminal already (canceled under our feet): stop quietly; the
            # refused transition is on the error stream.
            raise _Stopped() from None

    def _step_done(self, rec: _Record, site: str, step_key: str) -> None:
        with rec.lock:
            rec.completed_steps += 1
            if rec.state is TaskState.SENT:
                rec.progress = max(rec.progress, compute_progress(
                    rec.state, rec.completed_steps, rec.planned_steps))
        self._log(rec, RUNTIME, None,
                  f"step {step_key} completed at site {site}")
        self._persist(rec)

    def _fail(self, rec: _Record, message: str, detail) -> None:
        stderr = (detail or {}).get("stderr") if isinstance(detail, dict) \
            else None
        with rec.lock:
            if is_terminal(rec.state):
                self._log(rec, ERROR, None, message)
                return
            rec.state = TaskState.FAILED
            self._log(rec, ERROR, None, message)
            if stderr:
                # keep the log line-oriented: collapse the tail to one line
                tail = " | ".join(str(stderr).splitlines())[-500:]
                self._log(rec, ERROR, None, f"stderr: {tail}")
            self._log(rec, RUNTIME, TaskState.FAILED,
                      "task failed; see error stream")
            self._persist(rec)

    # -- execution helpers -----------------------------------------------------

    def _client(self, site_id: str) -> orch.SiteClient:
        with self._lock:
            if site_id not in self._clients:
                cred = self.sites.get(site_id)
                if cred is None:
                    raise SiteUnreachable(
                        f"no registered data site {site_id!r}")
                self._clients[site_id] = self._client_factory(cred)
            return self._clients[site_id]

    def _terminate_sites(self, rec: _Record) -> None:
        for site_id in rec.site_ids:
            try:
                self._client(site_id).terminate(rec.task_id)
            except FabricError:
                pass

    def _apply_overrides(self, config, overrides: Mapping):
        if not overrides:
            return config
        steps = tuple(replace(s, params={**s.params, **overrides})
                      for s in config.steps)
        return replace(config, steps=steps)

    def _fetch_scripts(self, principal: Principal,
                       version_path: RepoPath) -> dict[str, bytes]:
        names = self.repo.version_scripts(principal, version_path)
        return {name: self.repo.download(principal, version_path.child(name))
                for name in names if name != CONFIG_FILE}

    def _store_results(self, rec: _Record, config, result) -> str:
        ref = f"{config.results_destination.strip('/')}/{rec.task_id}"
        dest = self.results_root / ref
        files = []
        for (site, step_key), output in sorted(result.final_outputs.items()):
            for name, data in sorted(output.artifacts.items()):
                target = dest / site / name
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
                files.append({
                    "path": f"{site}/{name}",
                    "size": len(data),
                    "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "task_id": rec.task_id,
            "iterations": result.iterations,
            "metric_history": result.metric_history,
            "files": sorted(files, key=lambda f: f["path"]),
        }
        dest.mkdir(parents=True, exist_ok=True)
        (dest / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))
        return ref

    # -- snapshots -------------------------------------------------------------

    def _get(self, task_id: str) -> _Record:
        with self._lock:
            rec = self._records.get(task_id)
        if rec is None:
            raise NotFound(f"no task {task_id}")
        return rec

    def _snapshot(self, rec: _Record) -> Task:
        return Task(
            task_id=rec.task_id, user=rec.user,
            use_case_key=rec.use_case_key, version_path=rec.version_path,
            state=rec.state, checkpoints=tuple(rec.checkpoints),
            progress=rec.progress, result_ref=rec.result_ref,
            parameters=dict(rec.parameters))


class _Stopped(Exception):
    """Internal: the task reached a terminal state mid-pipeline."""
