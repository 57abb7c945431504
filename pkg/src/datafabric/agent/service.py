"""HTTP surface of a data-site agent.

Endpoints (all signed-request authenticated):
  POST /v1/steps                      execute one analysis step
  GET  /v1/tasks/{task_id}/status     per-step states for a task
  POST /v1/tasks/{task_id}/terminate  kill running sandboxes for a task
  GET  /v1/datasets                   site catalog
  POST /v1/datasets                   register a dataset (data owner)
  POST /v1/datasets/{id}/grants       grant a user access (dataset owner)
"""

from __future__ import annotations

from fastapi import FastAPI, Request, Response
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel

from .. import wire
from ..errors import ParseError
from ..httpbase import authenticate_request, install_error_handlers
from .core import SiteAgent


class RegisterDatasetRequest(BaseModel):
    dataset_id: str
    locator: str


class GrantRequest(BaseModel):
    user: str


def create_agent_app(agent: SiteAgent) -> FastAPI:
    app = FastAPI(title=f"data site {agent.site_id}", docs_url=None,
                  redoc_url=None)
    install_error_handlers(app)

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"ok": True, "site_id": agent.site_id}

    @app.post("/v1/steps")
    async def run_step(request: Request) -> Response:
        await authenticate_request(request, agent.auth)
        form = await request.form()
        parts: dict[str, bytes] = {}
        for key in form:
            value = form[key]
            if hasattr(value, "read"):
                parts[key] = await value.read()
            else:
                parts[key] = str(value).encode()
        manifest, scripts, inputs = wire.split_form_parts(parts)
        bundle = wire.bundle_from_manifest(manifest, scripts, inputs)
        if bundle.site_id != agent.site_id:
            raise ParseError(f"bundle addressed to {bundle.site_id!r}, "
                             f"this is {agent.site_id!r}")
        output = await run_in_threadpool(agent.run_step, bundle)
        content_type, body = wire.encode_multipart(
            wire.output_manifest(output), output.artifacts)
        return Response(content=body, media_type=content_type)

    @app.get("/v1/tasks/{task_id}/status")
    async def status(task_id: str, request: Request) -> dict:
        await authenticate_request(request, agent.auth)
        return agent.status(task_id)

    @app.post("/v1/tasks/{task_id}/terminate")
    async def terminate(task_id: str, request: Request) -> dict:
        await authenticate_request(request, agent.auth)
        return agent.terminate(task_id)

    @app.get("/v1/datasets")
    async def list_datasets(request: Request) -> list[dict]:
        principal = await authenticate_request(request, agent.auth)
        return agent.list_datasets(principal)

    @app.post("/v1/datasets")
    async def register_dataset(body: RegisterDatasetRequest,
                               request: Request) -> dict:
        principal = await authenticate_request(request, agent.auth)
        entry = agent.register_dataset(principal, body.dataset_id, body.locator)
        return {"dataset_id": body.dataset_id, **entry}

    @app.post("/v1/datasets/{dataset_id}/grants")
    async def grant(dataset_id: str, body: GrantRequest,
                    request: Request) -> dict:
        principal = await authenticate_request(request, agent.auth)
        entry = agent.grant(principal, dataset_id, body.user)
        return {"dataset_id": dataset_id, **entry}

    return app
