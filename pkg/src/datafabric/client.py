"""Signed HTTP client for the middleware API.

Used by the CLI and by tests; every request is HMAC-signed over the method,
path, and body. Query strings ride outside the signature by design, so
helpers pass filters as query parameters and everything else in the body.
"""

from __future__ import annotations

import json
from typing import Iterator, Optional

import httpx

from .auth import signed_headers


class ApiError(Exception):
    """An error body returned by the middleware: {code, message, detail}."""

    def __init__(self, status: int, code: str, message: str,
                 detail: object = None):
        super().__init__(f"{code}: {message}")
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    @classmethod
    def from_response(cls, response: httpx.Response) -> "ApiError":
        try:
            body = response.json()
        except ValueError:
            body = {}
        return cls(response.status_code,
                   body.get("code", f"Http{response.status_code}"),
                   body.get("message", response.text[:200]),
                   body.get("detail"))


class FabricClient:
    def __init__(self, endpoint: str, key_id: str, secret: str,
                 timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self._key_id = key_id
        self._secret = secret
        self._client = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    # -- plumbing -------------------------------------------------------------

    def _request(self, method: str, path: str, *, body: bytes = b"",
                 params: Optional[dict] = None,
                 content_type: Optional[str] = None) -> httpx.Response:
        headers = signed_headers(self._key_id, self._secret, method, path,
                                 body)
        if content_type:
            headers["Content-Type"] = content_type
        response = self._client.request(method, path, params=params,
                                        content=body, headers=headers)
        if response.status_code >= 400:
            raise ApiError.from_response(response)
        return response

    def _json(self, method: str, path: str, payload: Optional[dict] = None,
              params: Optional[dict] = None) -> dict:
        body = json.dumps(payload).encode() if payload is not None else b""
        response = self._request(method, path, body=body, params=params,
                                 content_type="application/json"
                                 if payload is not None else None)
        return response.json()

    # -- repository -----------------------------------------------------------

    def create_use_case(self, name: str, site_ids: list[str],
                        root: str = "shared") -> dict:
        return self._json("POST", "/v1/usecases",
                          {"name": name, "site_ids": site_ids, "root": root})

    def repo_list(self, path: str) -> list[dict]:
        return self._json("GET", "/v1/repo", params={"path": path})["entries"]

    def add_version(self, workflow_path: str) -> str:
        return self._json("POST", "/v1/repo/versions",
                          {"path": workflow_path})["path"]

    def duplicate(self, path: str) -> str:
        return self._json("POST", "/v1/repo/duplicate", {"path": path})["path"]

    def put_file(self, path: str, data: bytes,
                 expected_modified_at: Optional[float] = None) -> dict:
        params = {"path": path}
        if expected_modified_at is not None:
            params["expected_modified_at"] = repr(expected_modified_at)
        response = self._request("PUT", "/v1/repo/files", body=data,
                                 params=params,
                                 content_type="application/octet-stream")
        return response.json()

    def get_file(self, path: str) -> bytes:
        return self._request("GET", "/v1/repo/files",
                             params={"path": path}).content

    def validate_config(self, text: Optional[str] = None,
                        version_path: Optional[str] = None) -> dict:
        return self._json("POST", "/v1/config/validate",
                          {"text": text, "version_path": version_path})

    # -- tasks ----------------------------------------------------------------

    def submit_task(self, version_path: str,
                    overrides: Optional[dict] = None) -> dict:
        return self._json("POST", "/v1/tasks",
                          {"version_path": version_path,
                           "overrides": overrides or {}})

    def tasks(self) -> list[dict]:
        return self._json("GET", "/v1/tasks")["tasks"]

    def task(self, task_id: str) -> dict:
        return self._json("GET", f"/v1/tasks/{task_id}")

    def cancel(self, task_id: str) -> dict:
        return self._json("POST", f"/v1/tasks/{task_id}/cancel", {})

    def rerun(self, task_id: str, overrides: Optional[dict] = None) -> dict:
        return self._json("POST", f"/v1/tasks/{task_id}/rerun",
                          {"overrides": overrides or {}})

    def logs(self, task_id: str, stream: Optional[str] = None) -> list[dict]:
        params = {"stream": stream} if stream else None
        return self._json("GET", f"/v1/tasks/{task_id}/logs",
                          params=params)["entries"]

    def follow_logs(self, task_id: str) -> Iterator[tuple[str, str]]:
        """Yield (event, data) pairs from the server-sent event stream until
        the task reaches a terminal state and the server closes it."""
        path = f"/v1/tasks/{task_id}/logs/stream"
        headers = signed_headers(self._key_id, self._secret, "GET", path, b"")
        with self._client.stream("GET", path, headers=headers) as response:
            if response.status_code >= 400:
                response.read()
                raise ApiError.from_response(response)
            event = None
            for line in response.iter_lines():
                if line.startswith("event: "):
                    event = line[len("event: "):]
                elif line.startswith("data: ") and event is not None:
                    yield event, line[len("data: "):]
                elif not line:
                    event = None

    def task_result(self, task_id: str) -> dict:
        return self._json("GET", f"/v1/tasks/{task_id}/result")

    def result_file(self, task_id: str, file: str) -> bytes:
        return self._request("GET", f"/v1/tasks/{task_id}/result",
                             params={"file": file}).content

    # -- result analytics ------------------------------------------------------

    def profile(self, ref: str, file: Optional[str] = None) -> dict:
        params = {"file": file} if file else None
        return self._json("GET", f"/v1/results/{ref}/profile", params=params)

    def correlations(self, ref: str, file: Optional[str] = None,
                     good: float = 0.7, moderate: float = 0.4) -> dict:
        params = {"good": good, "moderate": moderate}
        if file:
            params["file"] = file
        return self._json("GET", f"/v1/results/{ref}/correlations",
                          params=params)

    def transform(self, ref: str, profile: dict,
                  file: Optional[str] = None) -> dict:
        return self._json("POST", f"/v1/results/{ref}/transform",
                          {"profile": profile, "file": file})

    def recommendations(self, ref: str, variables: Optional[list[str]] = None,
                        file: Optional[str] = None) -> dict:
        params = {}
        if variables:
            params["vars"] = ",".join(variables)
        if file:
            params["file"] = file
        return self._json("GET", f"/v1/results/{ref}/recommendations",
                          params=params or None)

    # -- administration --------------------------------------------------------

    def issue_key(self, user: str, roles: Optional[list[str]] = None,
                  admin: bool = False,
                  ttl_seconds: Optional[float] = None) -> dict:
        return self._json("POST", "/v1/keys",
                          {"user": user, "roles": roles, "admin": admin,
                           "ttl_seconds": ttl_seconds})

    def add_permission(self, user: str, resource: str,
                       actions: list[str]) -> dict:
        return self._json("POST", "/v1/permissions",
                          {"user": user, "resource": resource,
                           "actions": actions})
