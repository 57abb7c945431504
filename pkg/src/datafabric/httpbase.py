"""Shared HTTP plumbing for the middleware and data-site services: signed-
request authentication and uniform error responses."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .auth import AuthStore, canonical_request
from .errors import FabricError, InvalidSignature
from .model import Principal

KEY_ID_HEADER = "X-Fabric-Key-Id"
TIMESTAMP_HEADER = "X-Fabric-Timestamp"
SIGNATURE_HEADER = "X-Fabric-Signature"


async def authenticate_request(request: Request, auth: AuthStore) -> Principal:
    """Verify the signature headers against the raw request body."""
    key_id = request.headers.get(KEY_ID_HEADER)
    timestamp = request.headers.get(TIMESTAMP_HEADER)
    signature = request.headers.get(SIGNATURE_HEADER)
    if not (key_id and timestamp and signature):
        raise InvalidSignature("missing authentication headers")
    try:
        ts = int(timestamp)
    except ValueError:
        raise InvalidSignature("timestamp must be decimal epoch seconds") from None
    body = await request.body()  # cached by starlette; form parsing still works
    canonical = canonical_request(request.method, request.url.path, body, ts)
    return auth.authenticate(signature, key_id, canonical, timestamp=ts)


def install_error_handlers(app: FastAPI) -> None:
    @app.exception_handler(FabricError)
    async def fabric_error(request: Request, exc: FabricError) -> JSONResponse:
        return JSONResponse(status_code=exc.status, content=exc.to_body())
