"""Error types shared across the fabric.

Every error carries a stable ``code`` (the class name) that the HTTP layer
maps to a status; clients switch on ``code``, never on message text.
"""

from __future__ import annotations


class FabricError(Exception):
    """Base class; ``status`` is the HTTP status the API layer uses."""

    status = 500

    def __init__(self, message: str = "", detail: object = None):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.detail = detail

    @property
    def code(self) -> str:
        return self.__class__.__name__

    def to_body(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.detail is not None:
            body["detail"] = self.detail
        return body


# -- authentication (401) -----------------------------------------------------

class InvalidSignature(FabricError):
    status = 401


class KeyRevoked(FabricError):
    status = 401


class KeyExpired(FabricError):
    status = 401


# -- authorization (403) ------------------------------------------------------

class PermissionDenied(FabricError):
    status = 403


class DatasetDenied(FabricError):
    status = 403


# -- lookup (404) -------------------------------------------------------------

class NotFound(FabricError):
    status = 404


# -- conflicts with current state (409) ---------------------------------------

class CloneForbidden(FabricError):
    status = 409


class DuplicateName(FabricError):
    status = 409


class NotAWorkflow(FabricError):
    status = 409


class NotAVersionDirectory(FabricError):
    status = 409


class AlreadyTerminal(FabricError):
    status = 409


class NotComplete(FabricError):
    status = 409


class IllegalTransition(FabricError):
    status = 409


class StaleWrite(FabricError):
    status = 409


# -- validation (422) ---------------------------------------------------------

class MalformedPath(FabricError):
    status = 422


class ParseError(FabricError):
    status = 422


class UnknownScript(FabricError):
    status = 422


class UnknownSite(FabricError):
    status = 422


class MissingField(FabricError):
    status = 422


class InvalidTtl(FabricError):
    status = 422


class CyclicRouting(FabricError):
    status = 422


class NoCoordinator(FabricError):
    status = 422


class EmptyTable(FabricError):
    status = 422


class NotEnoughNumericColumns(FabricError):
    status = 422


class OutOfRange(FabricError):
    status = 422


class UnknownVariable(FabricError):
    status = 422


class FormulaParseError(FabricError):
    status = 422


class LocatorEscapesRoot(FabricError):
    status = 422


# -- execution-side failures --------------------------------------------------

class SiteUnreachable(FabricError):
    status = 502


class StepFailed(FabricError):
    status = 502

    def __init__(self, site_id: str, step: str, stderr_tail: str = ""):
        super().__init__(f"step {step!r} failed at site {site_id!r}",
                         detail={"site": site_id, "step": step, "stderr": stderr_tail})
        self.site_id = site_id
        self.step = step
        self.stderr_tail = stderr_tail


class ScriptError(FabricError):
    status = 502

    def __init__(self, exit_code: int, stderr_tail: str = ""):
        super().__init__(f"script exited with code {exit_code}",
                         detail={"exit_code": exit_code, "stderr": stderr_tail})
        self.exit_code = exit_code
        self.stderr_tail = stderr_tail


class ResourceLimitExceeded(FabricError):
    status = 502


class Terminated(FabricError):
    """A cancel directive reached the site while the step was pending or running."""

    status = 409


class Canceled(FabricError):
    """Raised inside an execution context when its task was canceled."""

    status = 409
