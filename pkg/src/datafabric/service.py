"""The middleware's HTTP surface.

Exposes the workflow repository, task manager, and result analytics to the
CLI and UI over a signed REST API under ``/v1``; all communication with the
data sites is mediated here — clients never talk to a site agent directly.
Task logs stream over server-sent events. When a built web console is
provided, its static assets are served under ``/ui`` so browsers reach the
API same-origin.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Optional, Union

from fastapi import Depends, FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from . import analytics
from .auth import AuthStore
from .errors import MissingField, NotFound, PermissionDenied
from .httpbase import authenticate_request, install_error_handlers
from .model import (
    LogEntry,
    Permission,
    Principal,
    Role,
    Task,
    TERMINAL_STATES,
    iso8601,
    parse_repo_path,
)
from .repo import RepoStore, RootKind
from .tasks import TaskManager


# -- request bodies -----------------------------------------------------------

class CreateUseCaseRequest(BaseModel):
    name: str
    site_ids: list[str] = Field(default_factory=list)
    root: str = "shared"


class PathRequest(BaseModel):
    path: str


class ValidateConfigRequest(BaseModel):
    text: Optional[str] = None
    version_path: Optional[str] = None


class SubmitTaskRequest(BaseModel):
    version_path: str
    overrides: dict = Field(default_factory=dict)


class RerunRequest(BaseModel):
    overrides: dict = Field(default_factory=dict)


class IssueKeyRequest(BaseModel):
    user: str
    roles: Optional[list[str]] = None
    admin: bool = False
    ttl_seconds: Optional[float] = None


class PermissionRequest(BaseModel):
    user: str
    resource: str
    actions: list[str]


class TransformRequest(BaseModel):
    profile: dict
    file: Optional[str] = None


# -- serialization ------------------------------------------------------------

def entry_json(entry: LogEntry) -> dict:
    return {
        "timestamp": entry.timestamp,
        "time": iso8601(entry.timestamp),
        "stream": entry.stream,
        "checkpoint": entry.checkpoint.value if entry.checkpoint else None,
        "message": entry.message,
        "line": entry.to_line(),
    }


def task_json(task: Task) -> dict:
    return {
        "task_id": task.task_id,
        "user": task.user,
        "use_case_key": task.use_case_key,
        "version_path": task.version_path.render(),
        "state": task.state.value,
        "progress": task.progress,
        "result_ref": task.result_ref,
        "parameters": task.parameters,
        "checkpoints": [entry_json(e) for e in task.checkpoints],
    }


# -- application --------------------------------------------------------------

def create_middleware_app(repo: RepoStore, manager: TaskManager,
                          auth: AuthStore,
                          ui_dir: Union[str, Path, None] = None) -> FastAPI:
    app = FastAPI(title="data fabric middleware", docs_url=None,
                  redoc_url=None)
    install_error_handlers(app)
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    async def caller(request: Request) -> Principal:
        return await authenticate_request(request, auth)

    @app.get("/healthz")
    def health() -> dict:
        return {"status": "ok"}

    # -- repository -----------------------------------------------------------

    @app.post("/v1/usecases")
    def create_usecase(body: CreateUseCaseRequest,
                       principal: Principal = Depends(caller)) -> dict:
        uc = repo.create_use_case(principal, body.name,
                                  site_ids=tuple(body.site_ids),
                                  root=RootKind(body.root))
        return {"key": uc.key, "name": uc.name, "owner": uc.owner,
                "site_ids": list(uc.site_ids), "created_at": uc.created_at}

    @app.get("/v1/repo")
    def repo_list(path: str = Query(...),
                  principal: Principal = Depends(caller)) -> dict:
        entries = repo.list(principal, parse_repo_path(path))
        return {"entries": [e.to_dict() for e in entries]}

    @app.post("/v1/repo/versions")
    def repo_add_version(body: PathRequest,
                         principal: Principal = Depends(caller)) -> dict:
        new = repo.add_version(principal, parse_repo_path(body.path))
        return {"path": new.render()}

    @app.post("/v1/repo/duplicate")
    def repo_duplicate(body: PathRequest,
                       principal: Principal = Depends(caller)) -> dict:
        new = repo.duplicate(principal, parse_repo_path(body.path))
        return {"path": new.render()}

    @app.put("/v1/repo/files")
    async def repo_put_file(request: Request, path: str = Query(...),
                            expected_modified_at: Optional[float] = Query(None),
                            principal: Principal = Depends(caller)) -> dict:
        target = parse_repo_path(path)
        if target.file is None:
            raise MissingField("path must name a file inside a version")
        data = await request.body()
        entry = repo.upload(principal, target.parent(), target.file, data,
                            expected_modified_at=expected_modified_at)
        return entry.to_dict()

    @app.get("/v1/repo/files")
    def repo_get_file(path: str = Query(...),
                      principal: Principal = Depends(caller)) -> Response:
        target = parse_repo_path(path)
        data = repo.download(principal, target)
        entry = repo.stat_entry(principal, target)
        return Response(content=data, media_type="application/octet-stream",
                        headers={"X-Fabric-Modified-At":
                                 repr(entry.modified_at)})

    @app.post("/v1/config/validate")
    def config_validate(body: ValidateConfigRequest,
                        principal: Principal = Depends(caller)) -> dict:
        from .repo import CONFIG_FILE, validate_config

        sites = sorted(manager.sites) or None
        if body.text is not None:
            scripts = None
            if body.version_path:
                version = parse_repo_path(body.version_path)
                scripts = [s for s in repo.version_scripts(principal, version)
                           if s != CONFIG_FILE]
            config = validate_config(body.text.encode(), scripts=scripts,
                                     sites=sites)
        elif body.version_path:
            config = repo.load_config(principal,
                                      parse_repo_path(body.version_path),
                                      sites=sites)
        else:
            raise MissingField("provide 'text' or 'version_path'")
        return {"ok": True, "workflow_name": config.workflow_name,
                "sites": list(config.site_ids), "steps": len(config.steps),
                "max_iterations": config.stop.max_iterations}

    # -- tasks ----------------------------------------------------------------

    @app.post("/v1/tasks", status_code=201)
    def submit_task(body: SubmitTaskRequest,
                    principal: Principal = Depends(caller)) -> dict:
        task = manager.submit(principal, body.version_path, body.overrides)
        return task_json(task)

    @app.get("/v1/tasks")
    def list_tasks(principal: Principal = Depends(caller)) -> dict:
        return {"tasks": [task_json(t) for t in manager.list_tasks(principal)]}

    @app.get("/v1/tasks/{task_id}")
    def get_task(task_id: str,
                 principal: Principal = Depends(caller)) -> dict:
        return task_json(manager.get_task(principal, task_id))

    @app.post("/v1/tasks/{task_id}/cancel")
    def cancel_task(task_id: str,
                    principal: Principal = Depends(caller)) -> dict:
        return task_json(manager.cancel(principal, task_id))

    @app.post("/v1/tasks/{task_id}/rerun", status_code=201)
    def rerun_task(task_id: str, body: RerunRequest,
                   principal: Principal = Depends(caller)) -> dict:
        return task_json(manager.rerun(principal, task_id, body.overrides))

    @app.get("/v1/tasks/{task_id}/logs")
    def task_logs(task_id: str, stream: Optional[str] = Query(None),
                  principal: Principal = Depends(caller)) -> dict:
        entries = manager.get_logs(principal, task_id, stream)
        return {"entries": [entry_json(e) for e in entries]}

    @app.get("/v1/tasks/{task_id}/logs/stream")
    def task_log_stream(task_id: str,
                        principal: Principal = Depends(caller)
                        ) -> StreamingResponse:
        manager.get_task(principal, task_id)  # authorization + existence

        def events():
            emitted = 0
            while True:
                entries = manager.get_logs(principal, task_id)
                for entry in entries[emitted:]:
                    kind = ("checkpoint" if entry.checkpoint is not None
                            else "log")
                    yield f"event: {kind}\ndata: {entry.to_line()}\n\n"
                emitted = len(entries)
                if manager.get(task_id).state in TERMINAL_STATES:
                    if len(manager.get_logs(principal, task_id)) == emitted:
                        return
                time.sleep(0.05)

        return StreamingResponse(events(), media_type="text/event-stream")

    @app.get("/v1/tasks/{task_id}/result")
    def task_result(task_id: str, file: Optional[str] = Query(None),
                    principal: Principal = Depends(caller)) -> Response:
        ref = manager.get_result_ref(principal, task_id)
        base = manager.result_dir(ref)
        if file is not None:
            target = (base / file).resolve()
            if not target.is_relative_to(base) or not target.is_file():
                raise NotFound(f"no artifact {file!r} in the result")
            return Response(content=target.read_bytes(),
                            media_type="application/octet-stream")
        manifest = json.loads((base / "manifest.json").read_text())
        return JSONResponse({"result_ref": ref, "manifest": manifest})

    # -- result analytics ------------------------------------------------------

    def load_result_table(principal: Principal, ref: str,
                          file: Optional[str]) -> analytics.ResultTable:
        base = manager.result_dir(ref)
        manifest = json.loads((base / "manifest.json").read_text())
        manager.get_task(principal, manifest["task_id"])  # authorization
        candidates = sorted(str(p.relative_to(base))
                            for p in base.rglob("*.csv"))
        if file is not None:
            if file not in candidates:
                raise NotFound(f"no tabular artifact {file!r}; "
                               f"available: {candidates}")
            chosen = file
        elif len(candidates) == 1:
            chosen = candidates[0]
        elif not candidates:
            raise NotFound("the result contains no tabular artifacts")
        else:
            raise MissingField("file",
                               detail={"candidates": candidates})
        sidecar = base / f"{chosen}.manifest.json"
        table_manifest = (json.loads(sidecar.read_text())
                          if sidecar.exists() else None)
        return analytics.table_from_csv((base / chosen).read_bytes(),
                                        name=chosen, manifest=table_manifest)

    @app.get("/v1/results/{ref:path}/profile")
    def result_profile(ref: str, file: Optional[str] = Query(None),
                       principal: Principal = Depends(caller)) -> dict:
        table = load_result_table(principal, ref, file)
        sampled, sample_size = analytics.sample_capped(table)
        return {"table": table.name, "row_count": table.row_count,
                "sampled_rows": sample_size,
                "profiles": [p.to_dict() for p in analytics.profile(sampled)]}

    @app.get("/v1/results/{ref:path}/correlations")
    def result_correlations(ref: str, file: Optional[str] = Query(None),
                            good: float = Query(0.7),
                            moderate: float = Query(0.4),
                            principal: Principal = Depends(caller)) -> dict:
        table = load_result_table(principal, ref, file)
        sampled, sample_size = analytics.sample_capped(table)
        matrix = analytics.correlations(sampled)
        thresholds = analytics.CorrelationThresholds(good=good,
                                                     moderate=moderate)
        entries = []
        for (i, j), r in sorted(matrix.entries.items()):
            item = {"a": matrix.variables[i], "b": matrix.variables[j],
                    "r": r}
            if r is not None:
                item["color"] = analytics.css_color(analytics.color_for(r))
                item["label"] = analytics.classify_correlation(r, thresholds)
            entries.append(item)
        return {"table": table.name, "variables": list(matrix.variables),
                "sampled_rows": sample_size, "entries": entries}

    @app.post("/v1/results/{ref:path}/transform")
    def result_transform(ref: str, body: TransformRequest,
                         principal: Principal = Depends(caller)) -> dict:
        table = load_result_table(principal, ref, body.file)
        tprofile = analytics.TransformationProfile.from_dict(body.profile)
        transformed = analytics.apply_transforms(table, tprofile)
        csv_bytes, manifest = analytics.table_to_csv(transformed)
        return {"table": transformed.name, "csv": csv_bytes.decode("utf-8"),
                "manifest": manifest,
                "profiles": [p.to_dict()
                             for p in analytics.profile(transformed)]}

    @app.get("/v1/results/{ref:path}/recommendations")
    def result_recommendations(ref: str, file: Optional[str] = Query(None),
                               vars: Optional[str] = Query(None),
                               principal: Principal = Depends(caller)) -> dict:
        table = load_result_table(principal, ref, file)
        sampled, _ = analytics.sample_capped(table)
        profiles = analytics.profile(sampled)
        selection = [v for v in (vars.split(",") if vars else []) if v]
        recs = analytics.recommend(profiles, selection or None)
        return {"recommendations": [
            {"kind": r.kind, "variables": list(r.variables),
             "reason": r.reason} for r in recs]}

    # -- administration --------------------------------------------------------

    @app.post("/v1/keys", status_code=201)
    def issue_key(body: IssueKeyRequest,
                  principal: Principal = Depends(caller)) -> dict:
        if body.roles is not None or body.admin:
            if not auth.is_admin(principal.user_id):
                raise PermissionDenied(
                    "registering principals requires an admin key")
            auth.register_principal(body.user,
                                    roles={Role(r) for r in body.roles or []},
                                    admin=body.admin)
        key_id, secret = auth.issue_key(principal, body.user,
                                        ttl=body.ttl_seconds)
        return {"key_id": key_id, "secret": secret, "user": body.user}

    @app.post("/v1/permissions", status_code=201)
    def add_permission(body: PermissionRequest,
                       principal: Principal = Depends(caller)) -> dict:
        perm = Permission(principal=body.user, resource=body.resource,
                          actions=frozenset(body.actions))
        auth.add_permission(principal, perm)
        return {"ok": True, "user": body.user, "resource": body.resource,
                "actions": sorted(perm.actions)}

    return app
