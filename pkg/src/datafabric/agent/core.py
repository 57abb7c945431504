"""The data-site agent: dataset catalog with owner-managed grants, step
execution through the sandbox runner, and per-task status/termination.

Access policy lives here at the site, not in the middleware: the data owner
registers datasets and grants users access, and every incoming step is checked
against those grants before anything runs.
"""

from __future__ import annotations

import json
import re
import threading
from pathlib import Path

from ..auth import AuthStore
from ..errors import (
    DatasetDenied,
    FabricError,
    LocatorEscapesRoot,
    MalformedPath,
    NotFound,
    PermissionDenied,
    Terminated,
)
from ..model import Principal, Role, StepBundle, StepOutput
from .runner import PacRunner, RunnerSpec

_DATASET_ID_RE = re.compile(r"^[A-Za-z0-9_\-\.]+$")


class SiteAgent:
    def __init__(self, site_id: str, root_dir: Path, auth: AuthStore,
                 runner_spec: RunnerSpec = RunnerSpec(), parallelism: int = 4):
        self.site_id = site_id
        # absolute: these paths are handed to sandboxed subprocesses whose
        # working directory differs from the agent's
        self.root_dir = Path(root_dir).resolve()
        self.auth = auth
        self.data_root = self.root_dir / "data"
        self.data_root.mkdir(parents=True, exist_ok=True)
        self.runner = PacRunner(self.root_dir / "work", runner_spec)
        self._catalog_path = self.root_dir / "datasets.json"
        self._catalog = self._load_catalog()
        self._lock = threading.RLock()
        self._tasks: dict[str, dict] = {}
        self._cancel_events: dict[str, threading.Event] = {}
        self._task_locks: dict[str, threading.Lock] = {}
        self._slots = threading.BoundedSemaphore(parallelism)

    # -- dataset catalog ------------------------------------------------------

    def _load_catalog(self) -> dict:
        if self._catalog_path.exists():
            return json.loads(self._catalog_path.read_text())
        return {}

    def _save_catalog(self) -> None:
        tmp = self._catalog_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._catalog, indent=2, sort_keys=True))
        tmp.replace(self._catalog_path)

    def register_dataset(self, principal: Principal, dataset_id: str,
                         locator: str) -> dict:
        if not (self.auth.is_admin(principal.user_id)
                or Role.DATA_OWNER in principal.roles):
            raise PermissionDenied("registering datasets requires the "
                                   "DataOwner role")
        return self._register(principal.user_id, dataset_id, locator)

    def _register(self, owner: str, dataset_id: str, locator: str) -> dict:
        if not _DATASET_ID_RE.match(dataset_id or "") or set(dataset_id) == {"."}:
            raise MalformedPath(f"invalid dataset id {dataset_id!r}")
        resolved = (self.data_root / locator).resolve()
        if not resolved.is_relative_to(self.data_root.resolve()):
            raise LocatorEscapesRoot(
                f"locator {locator!r} resolves outside the site data root")
        with self._lock:
            self._catalog[dataset_id] = {
                "locator": locator, "owner": owner, "grants": []}
            self._save_catalog()
            return dict(self._catalog[dataset_id])

    def grant(self, principal: Principal, dataset_id: str, user: str) -> dict:
        with self._lock:
            entry = self._catalog.get(dataset_id)
            if entry is None:
                raise NotFound(f"no dataset {dataset_id!r} at site {self.site_id}")
            if not (self.auth.is_admin(principal.user_id)
                    or entry["owner"] == principal.user_id):
                raise PermissionDenied(
                    f"only the owner of {dataset_id!r} may grant access")
            if user not in entry["grants"]:
                entry["grants"].append(user)
                self._save_catalog()
            return dict(entry)

    def list_datasets(self, principal: Principal) -> list[dict]:
        with self._lock:
            return [{"dataset_id": ds, "locator": meta["locator"],
                     "owner": meta["owner"], "grants": list(meta["grants"])}
                    for ds, meta in sorted(self._catalog.items())]

    def dataset_path(self, dataset_id: str) -> Path:
        entry = self._catalog.get(dataset_id)
        if entry is None:
            raise NotFound(f"no dataset {dataset_id!r}")
        return (self.data_root / entry["locator"]).resolve()

    # -- step execution -------------------------------------------------------

    def run_step(self, bundle: StepBundle) -> StepOutput:
        dataset_paths = self._check_dataset_access(bundle)
        with self._lock:
            record = self._tasks.setdefault(
                bundle.task_id, {"terminated": False, "steps": {}})
            if record["terminated"]:
                record["steps"][bundle.step_key] = "Terminated"
                raise Terminated(f"task {bundle.task_id} was terminated")
            cancel = self._cancel_events.setdefault(bundle.task_id,
                                                    threading.Event())
            task_lock = self._task_locks.setdefault(bundle.task_id,
                                                     threading.Lock())
            record["steps"][bundle.step_key] = "Running"
        try:
            # steps of one task run sequentially; distinct tasks in parallel
            with self._slots, task_lock:
                output = self.runner.run(bundle, dataset_paths, cancel=cancel)
        except Terminated:
            self._set_step(bundle, "Terminated")
            raise
        except FabricError:
            self._set_step(bundle, "Failed")
            raise
        self._set_step(bundle, "Complete")
        return output

    def _set_step(self, bundle: StepBundle, state: str) -> None:
        with self._lock:
            self._tasks[bundle.task_id]["steps"][bundle.step_key] = state

    def _check_dataset_access(self, bundle: StepBundle) -> dict[str, Path]:
        paths: dict[str, Path] = {}
        with self._lock:
            for dataset_id in bundle.dataset_ids:
                entry = self._catalog.get(dataset_id)
                if entry is None:
                    raise DatasetDenied(
                        f"dataset {dataset_id!r} is not registered at site "
                        f"{self.site_id}")
                if bundle.user != entry["owner"] and bundle.user not in entry["grants"]:
                    raise DatasetDenied(
                        f"user {bundle.user!r} has no grant for {dataset_id!r}")
                paths[dataset_id] = (self.data_root / entry["locator"]).resolve()
        return paths

    # -- status / terminate ---------------------------------------------------

    def status(self, task_id: str) -> dict:
        with self._lock:
            record = self._tasks.get(task_id)
            if record is None:
                raise NotFound(f"site {self.site_id} has no task {task_id}")
            return {"task_id": task_id, "site_id": self.site_id,
                    "terminated": record["terminated"],
                    "steps": [{"step_key": k, "state": v}
                              for k, v in record["steps"].items()]}

    def terminate(self, task_id: str) -> dict:
        with self._lock:
            record = self._tasks.get(task_id)
            if record is None:
                raise NotFound(f"site {self.site_id} has no task {task_id}")
            record["terminated"] = True
            event = self._cancel_events.setdefault(task_id, threading.Event())
        event.set()
        return {"task_id": task_id, "terminated": True}
