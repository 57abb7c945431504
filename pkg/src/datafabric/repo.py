"""Hierarchical workflow repository (the file-browser backend).

Use cases live under two roots: ``/shared`` (one tree for everyone) and
``/user`` (a private tree per principal; the store resolves ``/user`` against
the caller, so foreign trees are unaddressable by construction). The on-disk
layout mirrors the repository paths directly, with one small JSON manifest per
root carrying the metadata the filesystem cannot (owners, keys, enabled flags).

Constrained mutations only: create a use case, add the next version folder
under a workflow, duplicate a workflow/version/file, upload into a version
folder. There is no delete and no free-form folder creation.
"""

from __future__ import annotations

import json
import re
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .auth import AccessContext, AuthStore
from .errors import (
    CloneForbidden,
    DuplicateName,
    MalformedPath,
    MissingField,
    NotAVersionDirectory,
    NotAWorkflow,
    NotFound,
    ParseError,
    PermissionDenied,
    StaleWrite,
    UnknownScript,
    UnknownSite,
)
from .model import (
    Action,
    Principal,
    RepoPath,
    Role,
    RootKind,
    StoppingCondition,
    UseCase,
    WorkflowConfig,
    WorkflowStep,
    new_id,
    parse_repo_path,
    utcnow,
)

CONFIG_FILE = "conf.yml"

_VERSION_RE = re.compile(r"^v[1-9][0-9]*$")


@dataclass(frozen=True)
class RepoEntry:
    path: RepoPath
    kind: str  # use_case | workflow | version | file
    size_bytes: int
    modified_at: float
    writable_by_caller: bool

    def to_dict(self) -> dict:
        return {"path": self.path.render(), "kind": self.kind,
                "size_bytes": self.size_bytes, "modified_at": self.modified_at,
                "writable_by_caller": self.writable_by_caller}


class RepoStore:
    def __init__(self, root_dir: Path, auth: AuthStore):
        self.root_dir = Path(root_dir)
        self.auth = auth
        self._lock = threading.RLock()
        (self.root_dir / "shared").mkdir(parents=True, exist_ok=True)
        (self.root_dir / "users").mkdir(parents=True, exist_ok=True)
        self._manifest_path = self.root_dir / "manifest.json"
        self._manifest = self._load_manifest()

    # -- manifest -------------------------------------------------------------

    def _load_manifest(self) -> dict:
        if self._manifest_path.exists():
            return json.loads(self._manifest_path.read_text())
        return {"shared": {}, "user": {}}

    def _save_manifest(self) -> None:
        tmp = self._manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._manifest, indent=2, sort_keys=True))
        tmp.replace(self._manifest_path)

    def _meta_bucket(self, root: RootKind, user_id: str) -> dict:
        if root is RootKind.SHARED:
            return self._manifest["shared"]
        return self._manifest["user"].setdefault(user_id, {})

    def use_case_meta(self, principal: Principal, path: RepoPath) -> Optional[dict]:
        if path.use_case is None:
            return None
        return self._meta_bucket(path.root, principal.user_id).get(path.use_case)

    def set_enabled(self, path: RepoPath, principal: Principal, enabled: bool) -> None:
        with self._lock:
            meta = self.use_case_meta(principal, path)
            if meta is None:
                raise NotFound(f"no use case at {path.render()}")
            meta["enabled"] = enabled
            self._save_manifest()

    # -- path resolution ------------------------------------------------------

    def _fs(self, path: RepoPath, principal: Principal) -> Path:
        if path.root is RootKind.SHARED:
            base = self.root_dir / "shared"
        else:
            base = self.root_dir / "users" / principal.user_id
        return base.joinpath(*path.segments)

    def _ctx(self, path: RepoPath, principal: Principal) -> AccessContext:
        shared = path.root is RootKind.SHARED
        meta = self.use_case_meta(principal, path) or {}
        owner = meta.get("owner", None if shared else principal.user_id)
        return AccessContext(shared=shared, owner=owner,
                             enabled=meta.get("enabled", True))

    def _require(self, principal: Principal, action: Action, path: RepoPath,
                 ctx: Optional[AccessContext] = None) -> None:
        decision = self.auth.authorize(principal, action, path.render(),
                                       ctx or self._ctx(path, principal))
        if not decision:
            raise PermissionDenied(
                f"{action.value} on {path.render()}: {decision.reason}")

    def require(self, principal: Principal, action: Action,
                path: RepoPath) -> None:
        """Raise PermissionDenied unless ``principal`` may perform ``action``
        on ``path``; consults the use-case context (shared/owner/enabled)."""
        self._require(principal, action, path)

    def _writable(self, principal: Principal, path: RepoPath) -> bool:
        ctx = self._ctx(path, principal)
        if self.auth.authorize(principal, Action.WRITE_STRUCTURE, path.render(), ctx):
            return True
        if path.file == CONFIG_FILE:
            return bool(self.auth.authorize(
                principal, Action.WRITE_PARAMS, path.render(), ctx))
        return False

    # -- operations -----------------------------------------------------------

    def create_use_case(self, principal: Principal, name: str,
                        site_ids: Sequence[str],
                        root: RootKind = RootKind.SHARED) -> UseCase:
        if not (self.auth.is_admin(principal.user_id)
                or Role.WORKFLOW_DESIGNER in principal.roles
                or Role.DATA_OWNER in principal.roles):
            raise PermissionDenied("creating a use case requires the "
                                   "WorkflowDesigner or DataOwner role")
        path = RepoPath(root=root).child(name)  # validates the name
        with self._lock:
            bucket = self._meta_bucket(root, principal.user_id)
            if name in bucket:
                raise DuplicateName(f"use case {name!r} already exists under "
                                    f"/{root.value}")
            self._fs(path, principal).mkdir(parents=True)
            bucket[name] = {"key": new_id(), "owner": principal.user_id,
                            "site_ids": list(site_ids), "enabled": True,
                            "created_at": utcnow()}
            self._save_manifest()
            meta = bucket[name]
        return UseCase(key=meta["key"], name=name, owner=meta["owner"],
                       site_ids=tuple(site_ids), created_at=meta["created_at"])

    def add_version(self, principal: Principal, workflow_path: RepoPath) -> RepoPath:
        if workflow_path.depth != "workflow":
            raise NotAWorkflow(f"{workflow_path.render()} is not a workflow path")
        with self._lock:
            if self.use_case_meta(principal, workflow_path) is None:
                raise NotFound(f"no use case at {workflow_path.parent().render()}")
            self._require(principal, Action.WRITE_STRUCTURE, workflow_path)
            wf_dir = self._fs(workflow_path, principal)
            nxt = _next_version(wf_dir)
            new_path = workflow_path.child(f"v{nxt}")
            self._fs(new_path, principal).mkdir(parents=True)
        return new_path

    def duplicate(self, principal: Principal, path: RepoPath) -> RepoPath:
        """Clone a workflow, version, or file.

        Callers with structure rights on the parent get an in-place sibling
        copy. Everyone else with read access gets the copy placed at the
        mirrored location in their own private tree — that is how an analyst
        obtains an editable clone of a shared workflow.
        """
        if path.depth in ("root", "use_case"):
            raise CloneForbidden(
                f"cannot duplicate a {path.depth.replace('_', ' ')}")
        with self._lock:
            src = self._fs(path, principal)
            if not src.exists():
                raise NotFound(f"nothing at {path.render()}")
            self._require(principal, Action.READ, path)
            parent = path.parent()
            in_place = bool(self.auth.authorize(
                principal, Action.WRITE_STRUCTURE, parent.render(),
                self._ctx(parent, principal)))
            if not in_place:
                parent = self._own_tree_parent(principal, path)
            dest_dir = self._fs(parent, principal)
            dest_dir.mkdir(parents=True, exist_ok=True)
            if path.depth == "file":
                new_path = parent.child(_next_file_name(dest_dir, path.file))
                shutil.copyfile(src, self._fs(new_path, principal))
            elif path.depth == "version":
                new_path = parent.child(f"v{_next_version(dest_dir)}")
                shutil.copytree(src, self._fs(new_path, principal))
            else:  # workflow
                new_path = parent.child(_next_copy_name(dest_dir, path.workflow))
                shutil.copytree(src, self._fs(new_path, principal))
        return new_path

    def _own_tree_parent(self, principal: Principal, source: RepoPath) -> RepoPath:
        """Mirror the source's parent under the caller's private tree and make
        sure the use case is registered there."""
        parent = source.parent()
        fields = dict(zip(("use_case", "workflow", "version"), parent.segments))
        own_parent = RepoPath(root=RootKind.USER, **fields)
        bucket = self._meta_bucket(RootKind.USER, principal.user_id)
        if source.use_case not in bucket:
            source_meta = (self._meta_bucket(source.root, principal.user_id)
                           .get(source.use_case, {}))
            bucket[source.use_case] = {
                "key": new_id(), "owner": principal.user_id,
                "site_ids": list(source_meta.get("site_ids", [])),
                "enabled": True, "created_at": utcnow()}
            self._save_manifest()
        return own_parent

    def upload(self, principal: Principal, version_path: RepoPath,
               file_name: str, data: bytes,
               expected_modified_at: Optional[float] = None) -> RepoEntry:
        if version_path.depth != "version":
            raise NotAVersionDirectory(
                f"{version_path.render()} is not a version directory")
        file_path = version_path.child(file_name)  # validates the name
        with self._lock:
            target_dir = self._fs(version_path, principal)
            if not target_dir.is_dir():
                raise NotFound(f"no version directory at {version_path.render()}")
            target = target_dir / file_name
            action = Action.WRITE_STRUCTURE
            if file_name == CONFIG_FILE and target.exists():
                action = classify_config_edit(target.read_bytes(), data)
            self._require(principal, action, file_path)
            if expected_modified_at is not None and target.exists():
                current = target.stat().st_mtime
                if abs(current - expected_modified_at) > 1e-6:
                    raise StaleWrite(
                        f"{file_path.render()} changed at {current}, "
                        f"caller expected {expected_modified_at}")
            target.write_bytes(data)
            return self._entry(principal, file_path, target)

    def download(self, principal: Principal, path: RepoPath) -> bytes:
        if path.depth != "file":
            raise MalformedPath(f"{path.render()} is not a file path")
        src = self._fs(path, principal)
        if not src.is_file():
            raise NotFound(f"nothing at {path.render()}")
        self._require(principal, Action.READ, path)
        return src.read_bytes()

    def list(self, principal: Principal, path: RepoPath) -> list[RepoEntry]:
        base = self._fs(path, principal)
        if path.depth == "root":
            base.mkdir(parents=True, exist_ok=True)  # user tree appears lazily
        if not base.is_dir():
            raise NotFound(f"nothing at {path.render()}")
        if path.depth != "root":
            self._require(principal, Action.READ, path)
        entries = []
        for child in sorted(base.iterdir(), key=lambda p: p.name):
            child_path = path.child(child.name)
            if path.depth == "root":
                ctx = self._ctx(child_path, principal)
                if not ctx.enabled:
                    continue
                if not self.auth.authorize(principal, Action.READ,
                                           child_path.render(), ctx):
                    continue
            entries.append(self._entry(principal, child_path, child))
        return entries

    def stat_entry(self, principal: Principal, path: RepoPath) -> RepoEntry:
        target = self._fs(path, principal)
        if not target.exists():
            raise NotFound(f"nothing at {path.render()}")
        self._require(principal, Action.READ, path)
        return self._entry(principal, path, target)

    def _entry(self, principal: Principal, path: RepoPath, fs_path: Path) -> RepoEntry:
        stat = fs_path.stat()
        return RepoEntry(
            path=path, kind=path.depth,
            size_bytes=stat.st_size if fs_path.is_file() else 0,
            modified_at=stat.st_mtime,
            writable_by_caller=self._writable(principal, path))

    # -- workflow config helpers ---------------------------------------------

    def version_scripts(self, principal: Principal, version_path: RepoPath) -> list[str]:
        base = self._fs(version_path, principal)
        if not base.is_dir():
            raise NotFound(f"no version directory at {version_path.render()}")
        return sorted(p.name for p in base.iterdir() if p.is_file())

    def load_config(self, principal: Principal, version_path: RepoPath,
                    sites: Optional[Sequence[str]] = None) -> WorkflowConfig:
        """Read and validate a version's conf.yml against its own scripts."""
        if version_path.depth != "version":
            raise NotAVersionDirectory(
                f"{version_path.render()} is not a version directory")
        text = self.download(principal, version_path.child(CONFIG_FILE))
        scripts = [s for s in self.version_scripts(principal, version_path)
                   if s != CONFIG_FILE]
        return validate_config(text, scripts=scripts, sites=sites)


# -- naming rules -------------------------------------------------------------

def _next_version(wf_dir: Path) -> int:
    existing = []
    if wf_dir.is_dir():
        existing = [int(p.name[1:]) for p in wf_dir.iterdir()
                    if p.is_dir() and _VERSION_RE.match(p.name)]
    return max(existing, default=0) + 1


def _next_file_name(directory: Path, file_name: str) -> str:
    """Strip trailing digits from the stem and take the lowest unused number
    above the source's own (``ive1.py`` becomes ``ive2.py``)."""
    if "." in file_name.lstrip("."):
        stem, dot, ext = file_name.rpartition(".")
        suffix = dot + ext
    else:
        stem, suffix = file_name, ""
    match = re.search(r"([0-9]+)$", stem)
    base = stem[:match.start()] if match else stem
    n = int(match.group(1)) + 1 if match else 2
    while (directory / f"{base}{n}{suffix}").exists():
        n += 1
    return f"{base}{n}{suffix}"


def _next_copy_name(directory: Path, name: str) -> str:
    n = 1
    while (directory / f"{name}_copy{n}").exists():
        n += 1
    return f"{name}_copy{n}"


# -- config validation --------------------------------------------------------

_TOP_KEYS = {"name", "das_endpoint", "credential_ref", "datasets", "steps",
             "results_destination", "keep_local_copy", "timestamp_results",
             "routing", "stop"}
_REQUIRED_KEYS = ("name", "das_endpoint", "credential_ref", "datasets",
                  "steps", "results_destination")
_STEP_KEYS = {"site", "script", "params"}
_STOP_KEYS = {"max_iterations", "metric", "rtol"}


def validate_config(text: bytes, scripts: Optional[Sequence[str]] = None,
                    sites: Optional[Sequence[str]] = None) -> WorkflowConfig:
    """Parse and validate a conf.yml document. When a script or site universe
    is supplied, referential checks run against it too."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("document must be a mapping")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ParseError(f"unknown key {key!r}")
    for key in _REQUIRED_KEYS:
        if key not in doc:
            raise MissingField(key)

    name = _string(doc, "name")
    das_endpoint = _string(doc, "das_endpoint")
    credential_ref = _string(doc, "credential_ref")
    results_destination = _string(doc, "results_destination")

    datasets = doc["datasets"]
    if not isinstance(datasets, list) or not all(isinstance(d, str) for d in datasets):
        raise ParseError("'datasets' must be a list of strings")

    raw_steps = doc["steps"]
    if not isinstance(raw_steps, list) or not raw_steps:
        raise ParseError("'steps' must be a non-empty list")
    steps = []
    for i, raw in enumerate(raw_steps):
        if not isinstance(raw, dict):
            raise ParseError(f"'steps[{i}]' must be a mapping")
        for key in raw:
            if key not in _STEP_KEYS:
                raise ParseError(f"unknown key 'steps[{i}].{key}'")
        for key in ("site", "script"):
            if key not in raw:
                raise MissingField(f"steps[{i}].{key}")
            if not isinstance(raw[key], str) or not raw[key]:
                raise ParseError(f"'steps[{i}].{key}' must be a non-empty string")
        params = raw.get("params", {})
        if params is None:
            params = {}
        if not isinstance(params, dict):
            raise ParseError(f"'steps[{i}].params' must be a mapping")
        steps.append(WorkflowStep(site_id=raw["site"], script_name=raw["script"],
                                  params=params))

    for flag in ("keep_local_copy", "timestamp_results"):
        if flag in doc and not isinstance(doc[flag], bool):
            raise ParseError(f"'{flag}' must be a boolean")

    step_sites = {s.site_id for s in steps}
    routing = doc.get("routing") or {}
    if not isinstance(routing, dict):
        raise ParseError("'routing' must be a mapping")
    for src, dests in routing.items():
        if not isinstance(dests, list) or not all(isinstance(d, str) for d in dests):
            raise ParseError(f"'routing.{src}' must be a list of site ids")
        for site in [src, *dests]:
            if site not in step_sites:
                raise UnknownSite(site)

    raw_stop = doc.get("stop") or {}
    if not isinstance(raw_stop, dict):
        raise ParseError("'stop' must be a mapping")
    for key in raw_stop:
        if key not in _STOP_KEYS:
            raise ParseError(f"unknown key 'stop.{key}'")
    try:
        stop = StoppingCondition(
            max_iterations=int(raw_stop.get("max_iterations", 1)),
            metric_name=str(raw_stop.get("metric", "")),
            relative_tolerance=float(raw_stop.get("rtol", 0.0)))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid 'stop' block: {exc}") from None

    if scripts is not None:
        known = set(scripts)
        for step in steps:
            if step.script_name not in known:
                raise UnknownScript(step.script_name)
    if sites is not None:
        known_sites = set(sites)
        for site in step_sites:
            if site not in known_sites:
                raise UnknownSite(site)

    return WorkflowConfig(
        workflow_name=name, das_endpoint=das_endpoint,
        credential_ref=credential_ref, dataset_ids=tuple(datasets),
        steps=tuple(steps), results_destination=results_destination,
        keep_local_copy=bool(doc.get("keep_local_copy", False)),
        timestamp_results=bool(doc.get("timestamp_results", False)),
        routing={k: list(v) for k, v in routing.items()}, stop=stop)


def _string(doc: dict, key: str) -> str:
    value = doc[key]
    if not isinstance(value, str) or not value:
        raise ParseError(f"'{key}' must be a non-empty string")
    return value


def classify_config_edit(old_text: bytes, new_text: bytes) -> Action:
    """Decide which write right an edit to an existing conf.yml needs.

    Changes confined to ``steps[*].params`` and the ``stop`` block count as a
    parameter tweak; anything else (including making the file unparseable)
    is a structural edit.
    """
    try:
        old = yaml.safe_load(old_text)
        new = yaml.safe_load(new_text)
    except yaml.YAMLError:
        return Action.WRITE_STRUCTURE
    if not isinstance(old, dict) or not isinstance(new, dict):
        return Action.WRITE_STRUCTURE
    if _structural_view(old) == _structural_view(new):
        return Action.WRITE_PARAMS
    return Action.WRITE_STRUCTURE


def _structural_view(doc: dict) -> dict:
    view = {k: v for k, v in doc.items() if k != "stop"}
    steps = view.get("steps")
    if isinstance(steps, list):
        view["steps"] = [
            {k: v for k, v in step.items() if k != "params"}
            if isinstance(step, dict) else step
            for step in steps]
    return view


def parse_path(text: str) -> RepoPath:
    return parse_repo_path(text)
