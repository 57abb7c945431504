"""Shared domain types for the analysis fabric.

Everything here is an immutable value object: safe to share between threads
and to ship over the wire. Stores and managers keep their own mutable state
and hand out snapshots built from these types.
"""

from __future__ import annotations

import re
import secrets
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from .errors import MalformedPath

SEGMENT_RE = re.compile(r"^[A-Za-z0-9_\-\.]+$")
VERSION_RE = re.compile(r"^v[1-9][0-9]*$")


def new_id() -> str:
    """128-bit random identifier, lowercase hex."""
    return secrets.token_hex(16)


def utcnow() -> float:
    return datetime.now(timezone.utc).timestamp()


def iso8601(ts: float) -> str:
    return datetime.fromtimestamp(ts, timezone.utc).isoformat()


# -- repository paths ---------------------------------------------------------

class RootKind(str, Enum):
    SHARED = "shared"
    USER = "user"


@dataclass(frozen=True, order=True)
class RepoPath:
    """Ordered path into the workflow repository.

    Segments are present in strict prefix order: a file implies a version,
    a version implies a workflow, a workflow implies a use case. The ``user``
    root is always relative to the requesting principal; stores resolve it
    to that principal's private tree.
    """

    root: RootKind
    use_case: Optional[str] = None
    workflow: Optional[str] = None
    version: Optional[str] = None
    file: Optional[str] = None

    def __post_init__(self):
        segments = [self.use_case, self.workflow, self.version, self.file]
        seen_none = False
        for seg in segments:
            if seg is None:
                seen_none = True
            elif seen_none:
                raise MalformedPath("segments must be present in prefix order")
        for seg in (self.use_case, self.workflow, self.file):
            if seg is not None:
                _check_segment(seg)
        if self.version is not None:
            _check_segment(self.version)
            if not VERSION_RE.match(self.version):
                raise MalformedPath(f"bad version label {self.version!r}, expected v<N>")

    @property
    def depth(self) -> str:
        if self.file is not None:
            return "file"
        if self.version is not None:
            return "version"
        if self.workflow is not None:
            return "workflow"
        if self.use_case is not None:
            return "use_case"
        return "root"

    @property
    def segments(self) -> tuple[str, ...]:
        return tuple(s for s in (self.use_case, self.workflow, self.version, self.file)
                     if s is not None)

    @property
    def version_number(self) -> Optional[int]:
        return int(self.version[1:]) if self.version else None

    def render(self) -> str:
        return "/" + "/".join((self.root.value,) + self.segments)

    def parent(self) -> "RepoPath":
        segs = self.segments
        if not segs:
            raise MalformedPath("root has no parent")
        fields = dict(zip(("use_case", "workflow", "version", "file"), segs[:-1]))
        return RepoPath(root=self.root, **fields)

    def child(self, segment: str) -> "RepoPath":
        order = ("use_case", "workflow", "version", "file")
        segs = self.segments
        if len(segs) >= len(order):
            raise MalformedPath("path is already at file depth")
        fields = dict(zip(order, segs + (segment,)))
        return RepoPath(root=self.root, **fields)

    def __str__(self) -> str:
        return self.render()


def _check_segment(seg: str) -> None:
    if not SEGMENT_RE.match(seg):
        raise MalformedPath(f"bad segment {seg!r}")
    if set(seg) == {"."}:
        # "." and ".." satisfy the charset but would escape the tree on disk
        raise MalformedPath(f"bad segment {seg!r}")


def parse_repo_path(text: str) -> RepoPath:
    """Parse the textual rendering ``/<root>/<use-case>/<workflow>/<vN>/<file?>``."""
    if not isinstance(text, str) or not text.startswith("/"):
        raise MalformedPath(f"path must start with '/': {text!r}")
    parts = text.strip("/").split("/") if text.strip("/") else []
    if not parts:
        raise MalformedPath("empty path")
    root_txt, rest = parts[0], parts[1:]
    try:
        root = RootKind(root_txt)
    except ValueError:
        raise MalformedPath(f"unknown root {root_txt!r}") from None
    if len(rest) > 4:
        raise MalformedPath(f"too many segments in {text!r}")
    fields = dict(zip(("use_case", "workflow", "version", "file"), rest))
    return RepoPath(root=root, **fields)


# -- task lifecycle -----------------------------------------------------------

class TaskState(str, Enum):
    QUEUED = "Queued"
    QUEUING = "Queuing"
    CREATED = "Created"
    SENDING = "Sending"
    SENT = "Sent"
    COMPLETE = "Complete"
    CANCELED = "Canceled"
    FAILED = "Failed"


#: The six lifecycle checkpoints, in the order a completed task emits them.
CHECKPOINTS = (
    TaskState.QUEUED,
    TaskState.QUEUING,
    TaskState.CREATED,
    TaskState.SENDING,
    TaskState.SENT,
    TaskState.COMPLETE,
)

TERMINAL_STATES = frozenset({TaskState.COMPLETE, TaskState.CANCELED, TaskState.FAILED})

_CHAIN = {
    TaskState.QUEUED: TaskState.QUEUING,
    TaskState.QUEUING: TaskState.CREATED,
    TaskState.CREATED: TaskState.SENDING,
    TaskState.SENDING: TaskState.SENT,
    TaskState.SENT: TaskState.COMPLETE,
}


def is_terminal(state: TaskState) -> bool:
    return state in TERMINAL_STATES


def legal_transitions(state: TaskState) -> frozenset[TaskState]:
    if is_terminal(state):
        return frozenset()
    out = {TaskState.CANCELED, TaskState.FAILED}
    out.add(_CHAIN[state])
    return frozenset(out)


def can_transition(current: TaskState, target: TaskState) -> bool:
    return target in legal_transitions(current)


@dataclass(frozen=True)
class LogEntry:
    task_id: str
    timestamp: float
    stream: str  # "runtime" | "error"
    checkpoint: Optional[TaskState]
    message: str

    def to_line(self) -> str:
        cp = self.checkpoint.value if self.checkpoint else "-"
        msg = self.message.replace("\n", " ").replace("\r", " ")
        return f"{iso8601(self.timestamp)} {self.task_id} {self.stream} {cp} {msg}"


@dataclass(frozen=True)
class Task:
    task_id: str
    user: str
    use_case_key: str
    version_path: RepoPath
    state: TaskState
    checkpoints: tuple[LogEntry, ...]
    progress: float
    result_ref: Optional[str] = None
    parameters: dict = field(default_factory=dict)


# -- principals and permissions -----------------------------------------------

class Role(str, Enum):
    DATA_OWNER = "DataOwner"
    WORKFLOW_DESIGNER = "WorkflowDesigner"
    DATA_ANALYST = "DataAnalyst"


class Action(str, Enum):
    READ = "read"
    WRITE_PARAMS = "write_params"
    WRITE_STRUCTURE = "write_structure"
    EXECUTE = "execute"
    GRANT = "grant"


@dataclass(frozen=True)
class Principal:
    user_id: str
    roles: frozenset[Role] = frozenset()

    def has_role(self, role: Role) -> bool:
        return role in self.roles


@dataclass(frozen=True)
class Permission:
    """Explicit grant: ``resource`` is a RepoPath pattern or a dataset id.

    ``actions`` uses the coarse verb set {read, write, execute, grant};
    a ``write`` grant covers both parameter and structural edits.
    """

    principal: str
    resource: str
    actions: frozenset[str]


# -- workflow configuration ---------------------------------------------------

@dataclass(frozen=True)
class StoppingCondition:
    max_iterations: int = 1
    metric_name: str = ""
    relative_tolerance: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.relative_tolerance < 0:
            raise ValueError("relative_tolerance must be >= 0")


@dataclass(frozen=True)
class WorkflowStep:
    site_id: str
    script_name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WorkflowConfig:
    workflow_name: str
    das_endpoint: str
    credential_ref: str
    dataset_ids: tuple[str, ...]
    steps: tuple[WorkflowStep, ...]
    results_destination: str
    keep_local_copy: bool = False
    timestamp_results: bool = False
    routing: dict = field(default_factory=dict)  # site_id -> list of downstream site_ids
    stop: StoppingCondition = StoppingCondition()

    @property
    def site_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for step in self.steps:
            seen.setdefault(step.site_id, None)
        return tuple(seen)


@dataclass(frozen=True)
class UseCase:
    key: str
    name: str
    owner: str
    site_ids: tuple[str, ...]
    created_at: float


@dataclass(frozen=True)
class DataSite:
    site_id: str
    endpoint: str
    datasets: dict = field(default_factory=dict)  # dataset_id -> local locator
    api_key_id: str = ""


# -- step transport -----------------------------------------------------------

class Command(str, Enum):
    FIT = "Fit"
    PREDICT = "Predict"
    AGGREGATE = "Aggregate"
    TERMINATE = "Terminate"


@dataclass(frozen=True)
class StepBundle:
    task_id: str
    iteration: int
    site_id: str
    step_key: str            # stable id for status reporting, e.g. "it1/local_update.py"
    entry_script: str
    scripts: dict            # name -> bytes, shipped with the bundle
    params: dict
    command: Command
    inputs: dict = field(default_factory=dict)   # artifact name -> bytes
    user: str = ""
    dataset_ids: tuple[str, ...] = ()
    keep_local_copy: bool = False
    timestamp_results: bool = False

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")


@dataclass(frozen=True)
class StepOutput:
    task_id: str
    iteration: int
    site_id: str
    artifacts: dict          # name -> bytes
    metrics: dict            # name -> float
    local_copy_kept: bool = False
