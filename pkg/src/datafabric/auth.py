"""Key-based authentication and role/permission authorization.

Authentication is a keyed-hash MAC over a canonical request string
(method, path, body digest, timestamp). Every participant — users, the
middleware, site agents — holds a (key_id, secret) pair. The verifier
stores only a salted hash of the secret (salt = key_id); that hash is the
MAC key, so the raw secret never has to be persisted anywhere.

Authorization is deny-by-default: a request passes only if an explicit
permission or one of the role rules below grants it. The three roles and
what they may touch:

    DataOwner         grant on datasets of their own site, read
    WorkflowDesigner  read, write (params + structure), execute
    DataAnalyst       read, write of params on their own clones,
                      execute of enabled workflows

"Params" means the per-step parameter blocks and the stopping condition
of a workflow config; everything else (steps, routing, scripts, folders)
is structural and designer-only.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import InvalidSignature, InvalidTtl, KeyExpired, KeyRevoked, PermissionDenied
from .model import Action, Permission, Principal, Role

SKEW_SECONDS = 300  # accepted clock drift between signer and verifier


# -- request signing ----------------------------------------------------------

def canonical_request(method: str, path: str, body: bytes, timestamp: int) -> str:
    """Lowercase method, exact path, hex body digest, epoch seconds; newline-joined."""
    digest = hashlib.sha256(body or b"").hexdigest()
    return "\n".join([method.lower(), path, digest, str(int(timestamp))])


def mac_key(key_id: str, secret: str) -> bytes:
    """Salted hash of the secret; both the signing and the stored verification key."""
    return hashlib.sha256(key_id.encode() + secret.encode()).digest()


def sign(key: bytes, canonical: str) -> str:
    return hmac.new(key, canonical.encode(), hashlib.sha256).hexdigest()


def signed_headers(key_id: str, secret: str, method: str, path: str,
                   body: bytes = b"", timestamp: Optional[int] = None) -> dict:
    """Build the three auth headers a fabric request must carry."""
    ts = int(timestamp if timestamp is not None else time.time())
    signature = sign(mac_key(key_id, secret), canonical_request(method, path, body, ts))
    return {
        "X-Fabric-Key-Id": key_id,
        "X-Fabric-Timestamp": str(ts),
        "X-Fabric-Signature": signature,
    }


# -- key store ----------------------------------------------------------------

@dataclass
class _KeyRecord:
    key_id: str
    mac_key: bytes
    principal: str
    expires_at: Optional[float]
    revoked: bool = False


class AuthStore:
    """Principals, API keys, and explicit permissions; JSON-persisted.

    Mutations are serialized under one lock; authentication and
    authorization are read-only and safe to call concurrently.
    """

    def __init__(self, path: Optional[Path] = None):
        self._path = Path(path) if path else None
        self._lock = threading.RLock()
        self._principals: dict[str, dict] = {}   # user_id -> {"roles": [...], "admin": bool}
        self._keys: dict[str, _KeyRecord] = {}
        self._permissions: list[Permission] = []
        if self._path and self._path.exists():
            self._load()

    # -- persistence

    def _load(self) -> None:
        data = json.loads(self._path.read_text())
        self._principals = data.get("principals", {})
        self._keys = {
            kid: _KeyRecord(kid, bytes.fromhex(rec["mac_key"]), rec["principal"],
                            rec.get("expires_at"), rec.get("revoked", False))
            for kid, rec in data.get("keys", {}).items()
        }
        self._permissions = [
            Permission(p["principal"], p["resource"], frozenset(p["actions"]))
            for p in data.get("permissions", [])
        ]

    def _save(self) -> None:
        if not self._path:
            return
        data = {
            "principals": self._principals,
            "keys": {
                kid: {"mac_key": rec.mac_key.hex(), "principal": rec.principal,
                      "expires_at": rec.expires_at, "revoked": rec.revoked}
                for kid, rec in self._keys.items()
            },
            "permissions": [
                {"principal": p.principal, "resource": p.resource, "actions": sorted(p.actions)}
                for p in self._permissions
            ],
        }
        tmp = self._path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2))
        tmp.replace(self._path)

    # -- principals

    def register_principal(self, user_id: str, roles: Iterable[Role],
                           admin: bool = False) -> Principal:
        with self._lock:
            self._principals[user_id] = {
                "roles": sorted(r.value for r in roles), "admin": admin,
            }
            self._save()
        return self.principal(user_id)

    def principal(self, user_id: str) -> Principal:
        rec = self._principals.get(user_id)
        roles = frozenset(Role(r) for r in rec["roles"]) if rec else frozenset()
        return Principal(user_id=user_id, roles=roles)

    def is_admin(self, user_id: str) -> bool:
        rec = self._principals.get(user_id)
        return bool(rec and rec.get("admin"))

    def bootstrap(self, user_id: str = "admin") -> tuple[str, str]:
        """Create the initial admin principal and its key; first-run only."""
        self.register_principal(user_id, [Role.DATA_OWNER, Role.WORKFLOW_DESIGNER], admin=True)
        return self._issue(user_id, ttl=None)

    # -- keys

    def issue_key(self, admin: Principal, for_principal: str,
                  ttl: Optional[float] = None) -> tuple[str, str]:
        """Returns (key_id, secret); the secret is shown exactly once."""
        if ttl is not None and ttl <= 0:
            raise InvalidTtl(f"ttl must be positive, got {ttl}")
        if not (self.is_admin(admin.user_id) or admin.has_role(Role.DATA_OWNER)):
            raise PermissionDenied(f"{admin.user_id!r} may not issue keys")
        return self._issue(for_principal, ttl)

    def _issue(self, for_principal: str, ttl: Optional[float]) -> tuple[str, str]:
        key_id = secrets.token_hex(8)
        secret = secrets.token_urlsafe(32)
        expires_at = time.time() + ttl if ttl is not None else None
        with self._lock:
            self._keys[key_id] = _KeyRecord(key_id, mac_key(key_id, secret),
                                            for_principal, expires_at)
            self._save()
        return key_id, secret

    def revoke_key(self, admin: Principal, key_id: str) -> None:
        if not (self.is_admin(admin.user_id) or admin.has_role(Role.DATA_OWNER)):
            raise PermissionDenied(f"{admin.user_id!r} may not revoke keys")
        with self._lock:
            rec = self._keys.get(key_id)
            if rec:
                rec.revoked = True
                self._save()

    def authenticate(self, signature: str, key_id: str, canonical: str,
                     timestamp: Optional[int] = None,
                     now: Optional[float] = None) -> Principal:
        """Verify the MAC and the key's standing; returns the key's principal.

        Independent of the permission table by construction: only the key
        record is consulted.
        """
        rec = self._keys.get(key_id)
        if rec is None:
            raise InvalidSignature("unknown key id")
        expected = sign(rec.mac_key, canonical)
        if not hmac.compare_digest(expected, signature or ""):
            raise InvalidSignature("signature mismatch")
        if rec.revoked:
            raise KeyRevoked(f"key {key_id} is revoked")
        clock = now if now is not None else time.time()
        if rec.expires_at is not None and clock > rec.expires_at:
            raise KeyExpired(f"key {key_id} expired")
        if timestamp is not None and abs(clock - timestamp) > SKEW_SECONDS:
            raise InvalidSignature("request timestamp outside the accepted window")
        return self.principal(rec.principal)

    # -- permissions

    def add_permission(self, granting: Principal, perm: Permission,
                       ctx: Optional["AccessContext"] = None) -> None:
        decision = self.authorize(granting, Action.GRANT, perm.resource,
                                  ctx or AccessContext())
        if not decision:
            raise PermissionDenied(decision.reason)
        with self._lock:
            self._permissions.append(perm)
            self._save()

    def permissions_for(self, user_id: str) -> list[Permission]:
        return [p for p in self._permissions if p.principal == user_id]

    # -- authorization

    def authorize(self, principal: Principal, action: Action, resource: str,
                  ctx: "AccessContext") -> "Decision":
        if self.is_admin(principal.user_id):
            return Decision(True, "admin")
        if self._explicit(principal.user_id, action, resource):
            return Decision(True, "explicit permission")
        return role_decision(principal, action, ctx)

    def _explicit(self, user_id: str, action: Action, resource: str) -> bool:
        verb = _COARSE_VERB[action]
        for perm in self._permissions:
            if perm.principal != user_id or verb not in perm.actions:
                continue
            if _resource_match(perm.resource, resource):
                return True
        return False


_COARSE_VERB = {
    Action.READ: "read",
    Action.WRITE_PARAMS: "write",
    Action.WRITE_STRUCTURE: "write",
    Action.EXECUTE: "execute",
    Action.GRANT: "grant",
}


def _resource_match(pattern: str, resource: str) -> bool:
    if pattern == resource:
        return True
    # a path pattern covers its whole subtree
    return resource.startswith(pattern.rstrip("/") + "/")


# -- role rules ---------------------------------------------------------------

@dataclass(frozen=True)
class AccessContext:
    """Facts about the resource the caller supplies alongside the check."""

    shared: bool = True                  # lives under the shared root
    owner: Optional[str] = None          # owning user for user-root resources
    enabled: bool = True                 # workflow-version enabled flag
    site_owner: Optional[str] = None     # data owner of the dataset's site


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed


def role_decision(principal: Principal, action: Action, ctx: AccessContext) -> Decision:
    own = ctx.owner is not None and ctx.owner == principal.user_id
    if ctx.owner is not None and not own and not ctx.shared:
        return Decision(False, "resource belongs to another user")

    if action is Action.READ:
        if own or (ctx.shared and principal.roles):
            return Decision(True, "role: read")
        return Decision(False, "no role grants read here")

    if action is Action.WRITE_PARAMS:
        if principal.has_role(Role.WORKFLOW_DESIGNER) and (ctx.shared or own):
            return Decision(True, "designer: write params")
        if principal.has_role(Role.DATA_ANALYST) and own:
            return Decision(True, "analyst: params on own clone")
        return Decision(False, "parameter edits need designer role or ownership")

    if action is Action.WRITE_STRUCTURE:
        if principal.has_role(Role.WORKFLOW_DESIGNER) and (ctx.shared or own):
            return Decision(True, "designer: write structure")
        return Decision(False, "structural edits are designer-only")

    if action is Action.EXECUTE:
        if principal.has_role(Role.WORKFLOW_DESIGNER) and (ctx.shared or own):
            return Decision(True, "designer: execute")
        if principal.has_role(Role.DATA_ANALYST) and (ctx.shared or own):
            if ctx.enabled:
                return Decision(True, "analyst: execute enabled workflow")
            return Decision(False, "workflow version is not enabled")
        return Decision(False, "no role grants execute")

    if action is Action.GRANT:
        if principal.has_role(Role.DATA_OWNER) and ctx.site_owner == principal.user_id:
            return Decision(True, "owner: grant on own site")
        return Decision(False, "grants are reserved to the site's data owner")

    return Decision(False, f"unknown action {action}")
