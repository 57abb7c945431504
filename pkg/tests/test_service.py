"""HTTP surface tests: route table, signed auth over the wire, repository and
task endpoints, SSE log streaming, result analytics, and admin operations."""

import hashlib
import json
import threading
import time

import pytest
from fastapi.routing import APIRoute
from fastapi.testclient import TestClient

from datafabric.auth import AuthStore, signed_headers
from datafabric.client import ApiError, FabricClient
from datafabric.errors import Canceled
from datafabric.model import CHECKPOINTS, Role, StepOutput, parse_repo_path
from datafabric.repo import RepoStore
from datafabric.service import create_middleware_app
from datafabric.tasks import SiteCredential, TaskManager, parse_log_line

TERMINAL = {"Complete", "Canceled", "Failed"}

CSV_BYTES = b"x,y,label\n1,2.0,a\n2,4.0,b\n3,6.0,a\n4,8.0,b\n"

CSV_CONF = """\
name: csvstudy
das_endpoint: http://hub.local
credential_ref: cred-1
datasets: []
steps:
  - site: siteA
    script: main.py
    params: {alpha: 0.5}
results_destination: results/csv
"""


def wait_for(predicate, timeout=10.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


class FakeSiteClient:
    """Instant fake data-site agent that emits one CSV artifact."""

    def __init__(self, site_id, blocker=None):
        self.site_id = site_id
        self.blocker = blocker
        self.terminated = set()
        self.started = []
        self._lock = threading.Lock()

    def run_step(self, bundle):
        with self._lock:
            if bundle.task_id in self.terminated:
                raise Canceled("task terminated at site")
            self.started.append((bundle.task_id, bundle.step_key))
        if self.blocker is not None:
            self.blocker.wait(timeout=10)
        with self._lock:
            if bundle.task_id in self.terminated:
                raise Canceled("task terminated at site")
        return StepOutput(task_id=bundle.task_id, iteration=bundle.iteration,
                          site_id=self.site_id,
                          artifacts={"stats.csv": CSV_BYTES,
                                     "notes.txt": b"not a table\n"},
                          metrics={"delta": 1.0})

    def terminate(self, task_id):
        with self._lock:
            self.terminated.add(task_id)


class ServiceStack:
    """Middleware app over a fake data site, plus signed clients per user."""

    def __init__(self, tmp_path, blocker=None):
        self.auth = AuthStore(tmp_path / "auth.json")
        admin_key = self.auth.bootstrap("admin")
        self.admin_principal = self.auth.principal("admin")
        self.repo = RepoStore(tmp_path / "repo", self.auth)
        self.fake = FakeSiteClient("siteA", blocker=blocker)
        self.manager = TaskManager(
            tmp_path / "tasks", self.repo, self.auth,
            sites={"siteA": SiteCredential("siteA", "http://siteA.local",
                                           "k", "s")},
            client_factory=lambda cred: self.fake)
        self.app = create_middleware_app(self.repo, self.manager, self.auth)
        self.root = tmp_path

        self._keys = {"admin": admin_key}
        for user, role in (("dee", Role.WORKFLOW_DESIGNER),
                           ("ana", Role.DATA_ANALYST),
                           ("bob", Role.DATA_ANALYST),
                           ("oda", Role.DATA_OWNER)):
            self.auth.register_principal(user, roles={role})
            self._keys[user] = self.auth.issue_key(self.admin_principal, user)
        self.clients = {}

    def client(self, user, key=None):
        if key is None and user in self.clients:
            return self.clients[user]
        key_id, secret = key or self._keys[user]
        fc = FabricClient("http://testserver", key_id, secret)
        fc.close()
        fc._client = TestClient(self.app, raise_server_exceptions=False)
        if key is None:
            self.clients[user] = fc
        return fc

    def publish(self, conf=CSV_CONF, scripts=("main.py",)):
        dee = self.auth.principal("dee")
        self.repo.create_use_case(dee, "study", site_ids=("siteA",))
        version = self.repo.add_version(dee,
                                        parse_repo_path("/shared/study/wf"))
        self.repo.upload(dee, version, "conf.yml", conf.encode())
        for name in scripts:
            self.repo.upload(dee, version, name, b"print('ok')\n")
        return version.render()

    def wait_terminal(self, fc, task_id, timeout=15.0):
        assert wait_for(lambda: fc.task(task_id)["state"] in TERMINAL,
                        timeout), "task never reached a terminal state"
        return fc.task(task_id)


@pytest.fixture
def svc(tmp_path):
    stack = ServiceStack(tmp_path)
    stack.version = stack.publish()
    yield stack
    stack.manager.shutdown(wait=True)


@pytest.fixture
def svc_slow(tmp_path):
    blocker = threading.Event()
    stack = ServiceStack(tmp_path, blocker=blocker)
    stack.blocker = blocker
    stack.version = stack.publish()
    yield stack
    blocker.set()
    stack.manager.shutdown(wait=True)


def state_hash(root) -> str:
    """Content hash of everything the middleware persists under ``root``."""
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


EXPECTED_ROUTES = {
    ("POST", "/v1/usecases"),
    ("GET", "/v1/repo"),
    ("POST", "/v1/repo/versions"),
    ("POST", "/v1/repo/duplicate"),
    ("PUT", "/v1/repo/files"),
    ("GET", "/v1/repo/files"),
    ("POST", "/v1/config/validate"),
    ("POST", "/v1/tasks"),
    ("GET", "/v1/tasks"),
    ("GET", "/v1/tasks/{task_id}"),
    ("POST", "/v1/tasks/{task_id}/cancel"),
    ("POST", "/v1/tasks/{task_id}/rerun"),
    ("GET", "/v1/tasks/{task_id}/logs"),
    ("GET", "/v1/tasks/{task_id}/logs/stream"),
    ("GET", "/v1/tasks/{task_id}/result"),
    ("GET", "/v1/results/{ref}/profile"),
    ("GET", "/v1/results/{ref}/correlations"),
    ("POST", "/v1/results/{ref}/transform"),
    ("GET", "/v1/results/{ref}/recommendations"),
    ("POST", "/v1/keys"),
    ("POST", "/v1/permissions"),
}


class TestRouteTable:
    def test_operation_table_is_closed_and_bijective(self, svc):
        listed = []
        for route in svc.app.routes:
            if isinstance(route, APIRoute) and route.path.startswith("/v1"):
                for method in route.methods - {"HEAD", "OPTIONS"}:
                    listed.append((method, route.path.replace(":path", "")))
        assert len(listed) == len(set(listed))  # one handler per operation
        assert set(listed) == EXPECTED_ROUTES

    def test_health_needs_no_signature(self, svc):
        raw = TestClient(svc.app)
        response = raw.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}


class TestAuthOverHttp:
    def test_bad_signature_rejected(self, svc):
        key_id, _ = svc._keys["ana"]
        intruder = svc.client("x", key=(key_id, "wrong-secret"))
        with pytest.raises(ApiError) as err:
            intruder.tasks()
        assert err.value.status == 401
        assert err.value.code == "InvalidSignature"

    def test_unsigned_request_rejected(self, svc):
        raw = TestClient(svc.app, raise_server_exceptions=False)
        response = raw.get("/v1/tasks")
        assert response.status_code == 401

    def test_tampered_body_rejected(self, svc):
        key_id, secret = svc._keys["dee"]
        headers = signed_headers(key_id, secret, "POST",
                                 "/v1/config/validate", b"{}")
        headers["Content-Type"] = "application/json"
        raw = TestClient(svc.app, raise_server_exceptions=False)
        response = raw.post("/v1/config/validate", headers=headers,
                            content=b'{"text": "name: sneaky"}')
        assert response.status_code == 401
        assert response.json()["code"] == "InvalidSignature"

    def test_expired_key_rejected(self, svc):
        issued = svc.client("admin").issue_key("ana", ttl_seconds=0.05)
        short = svc.client("y", key=(issued["key_id"], issued["secret"]))
        time.sleep(0.1)
        with pytest.raises(ApiError) as err:
            short.tasks()
        assert err.value.status == 401
        assert err.value.code == "KeyExpired"


class TestRepoOverHttp:
    def test_create_use_case_and_listing(self, svc):
        dee = svc.client("dee")
        uc = dee.create_use_case("atlas", ["siteA"])
        assert uc["owner"] == "dee" and uc["site_ids"] == ["siteA"]
        names = [e["path"] for e in dee.repo_list("/shared")]
        assert "/shared/atlas" in names and "/shared/study" in names

    def test_analyst_cannot_create_use_case(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("ana").create_use_case("rogue", [])
        assert err.value.status == 403
        assert err.value.code == "PermissionDenied"

    def test_file_round_trip_with_modified_header(self, svc):
        dee = svc.client("dee")
        path = f"{svc.version}/readme.txt"
        entry = dee.put_file(path, b"hello fabric\n")
        assert entry["size_bytes"] == len(b"hello fabric\n")
        response = dee._request("GET", "/v1/repo/files",
                                params={"path": path})
        assert response.content == b"hello fabric\n"
        header = float(response.headers["X-Fabric-Modified-At"])
        assert header == entry["modified_at"]

    def test_stale_write_conflict(self, svc):
        dee = svc.client("dee")
        path = f"{svc.version}/main.py"
        entry = dee.put_file(path, b"print('v2')\n")
        dee.put_file(path, b"print('v3')\n",
                     expected_modified_at=entry["modified_at"])
        with pytest.raises(ApiError) as err:  # expected stamp now stale
            dee.put_file(path, b"print('v4')\n",
                         expected_modified_at=entry["modified_at"])
        assert err.value.status == 409
        assert err.value.code == "StaleWrite"

    def test_add_version_over_http(self, svc):
        assert svc.client("dee").add_version("/shared/study/wf") == \
            "/shared/study/wf/v2"

    def test_duplicate_use_case_forbidden(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("dee").duplicate("/shared/study")
        assert err.value.status == 409
        assert err.value.code == "CloneForbidden"

    def test_analyst_clone_lands_in_private_tree(self, svc):
        ana = svc.client("ana")
        clone = ana.duplicate(svc.version)
        assert clone == "/user/study/wf/v1"
        assert ana.get_file(f"{clone}/conf.yml") == CSV_CONF.encode()

    def test_validate_config_text_and_version(self, svc):
        dee = svc.client("dee")
        by_text = dee.validate_config(text=CSV_CONF)
        assert by_text["ok"] and by_text["steps"] == 1
        by_path = dee.validate_config(version_path=svc.version)
        assert by_path["workflow_name"] == "csvstudy"

    def test_validate_config_rejects_unknown_site(self, svc):
        bad = CSV_CONF.replace("site: siteA", "site: siteZ")
        with pytest.raises(ApiError) as err:
            svc.client("dee").validate_config(text=bad)
        assert err.value.status == 422
        assert err.value.code == "UnknownSite"

    def test_validate_config_rejects_bad_yaml(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("dee").validate_config(text="steps: [unclosed")
        assert err.value.code == "ParseError"


class TestTasksOverHttp:
    def test_submit_returns_created_task(self, svc):
        ana = svc.client("ana")
        response = ana._request(
            "POST", "/v1/tasks",
            body=json.dumps({"version_path": svc.version,
                             "overrides": {}}).encode(),
            content_type="application/json")
        assert response.status_code == 201
        task = response.json()
        assert task["state"] == "Queued"
        assert task["progress"] == pytest.approx(0.05)
        final = svc.wait_terminal(ana, task["task_id"])
        assert final["state"] == "Complete"
        assert final["result_ref"] == f"results/csv/{task['task_id']}"
        states = [c["checkpoint"] for c in final["checkpoints"]]
        assert states == [s.value for s in CHECKPOINTS]

    def test_listing_scoped_to_caller(self, svc):
        ana, bob = svc.client("ana"), svc.client("bob")
        task = ana.submit_task(svc.version)
        svc.wait_terminal(ana, task["task_id"])
        assert [t["task_id"] for t in ana.tasks()] == [task["task_id"]]
        assert bob.tasks() == []
        assert task["task_id"] in [t["task_id"]
                                   for t in svc.client("admin").tasks()]

    def test_foreign_task_forbidden(self, svc):
        task = svc.client("ana").submit_task(svc.version)
        bob = svc.client("bob")
        for call in (lambda: bob.task(task["task_id"]),
                     lambda: bob.logs(task["task_id"]),
                     lambda: list(bob.follow_logs(task["task_id"])),
                     lambda: bob.cancel(task["task_id"])):
            with pytest.raises(ApiError) as err:
                call()
            assert err.value.status == 403

    def test_unknown_task_is_404(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("ana").task("t-missing")
        assert err.value.status == 404
        assert err.value.code == "NotFound"

    def test_cancel_running_task(self, svc_slow):
        ana = svc_slow.client("ana")
        task = ana.submit_task(svc_slow.version)
        assert wait_for(lambda: svc_slow.fake.started)
        canceled = ana.cancel(task["task_id"])
        assert canceled["state"] == "Canceled"
        svc_slow.blocker.set()
        final = svc_slow.wait_terminal(ana, task["task_id"])
        assert final["state"] == "Canceled" and final["result_ref"] is None
        with pytest.raises(ApiError) as err:  # cancel is not idempotent
            ana.cancel(task["task_id"])
        assert err.value.code == "AlreadyTerminal"

    def test_rerun_completed_task_merges_overrides(self, svc):
        ana = svc.client("ana")
        first = ana.submit_task(svc.version, overrides={"a": 1})
        svc.wait_terminal(ana, first["task_id"])
        second = ana.rerun(first["task_id"], overrides={"b": 2})
        assert second["task_id"] != first["task_id"]
        assert second["parameters"] == {"a": 1, "b": 2}
        assert svc.wait_terminal(ana, second["task_id"])["state"] == "Complete"

    def test_logs_endpoint_and_stream_filter(self, svc):
        ana = svc.client("ana")
        task = ana.submit_task(svc.version)
        svc.wait_terminal(ana, task["task_id"])
        entries = ana.logs(task["task_id"])
        assert [e["checkpoint"] for e in entries if e["checkpoint"]] == \
            [s.value for s in CHECKPOINTS]
        assert ana.logs(task["task_id"], stream="error") == []
        runtime = ana.logs(task["task_id"], stream="runtime")
        assert all(e["stream"] == "runtime" for e in runtime)


class TestLogStreaming:
    def test_replays_history_after_completion(self, svc):
        ana = svc.client("ana")
        task = ana.submit_task(svc.version)
        svc.wait_terminal(ana, task["task_id"])
        events = list(ana.follow_logs(task["task_id"]))
        parsed = [(kind, parse_log_line(data)) for kind, data in events]
        checkpoints = [e.checkpoint for kind, e in parsed
                       if kind == "checkpoint"]
        assert checkpoints == list(CHECKPOINTS)
        assert all(e.checkpoint is None for kind, e in parsed if kind == "log")
        assert any(kind == "log" for kind, _ in parsed)  # per-step entries

    def test_live_subscription_sees_completion(self, svc_slow):
        ana = svc_slow.client("ana")
        task = ana.submit_task(svc_slow.version)
        assert wait_for(lambda: svc_slow.fake.started)  # step in flight
        events = []
        done = threading.Event()

        def consume():
            events.extend(ana.follow_logs(task["task_id"]))
            done.set()

        follower = threading.Thread(target=consume, daemon=True)
        follower.start()
        assert not done.wait(0.3)  # stream stays open while task runs
        svc_slow.blocker.set()
        assert done.wait(10), "stream did not close after completion"
        checkpoints = [parse_log_line(data).checkpoint
                       for kind, data in events if kind == "checkpoint"]
        assert checkpoints == list(CHECKPOINTS)


class TestResultsOverHttp:
    def complete_task(self, svc):
        ana = svc.client("ana")
        task = ana.submit_task(svc.version)
        final = svc.wait_terminal(ana, task["task_id"])
        return ana, task["task_id"], final["result_ref"]

    def test_manifest_and_artifact_download(self, svc):
        ana, task_id, ref = self.complete_task(svc)
        body = ana.task_result(task_id)
        assert body["result_ref"] == ref
        files = [f["path"] for f in body["manifest"]["files"]]
        assert files == ["siteA/notes.txt", "siteA/stats.csv"]
        assert ana.result_file(task_id, "siteA/stats.csv") == CSV_BYTES

    def test_artifact_path_cannot_escape(self, svc):
        ana, task_id, _ = self.complete_task(svc)
        with pytest.raises(ApiError) as err:
            ana.result_file(task_id, "../../../../etc/passwd")
        assert err.value.status == 404

    def test_result_before_completion_conflicts(self, svc_slow):
        ana = svc_slow.client("ana")
        task = ana.submit_task(svc_slow.version)
        assert wait_for(lambda: svc_slow.fake.started)
        with pytest.raises(ApiError) as err:
            ana.task_result(task["task_id"])
        assert err.value.status == 409
        assert err.value.code == "NotComplete"
        svc_slow.blocker.set()
        svc_slow.wait_terminal(ana, task["task_id"])

    def test_profile_endpoint(self, svc):
        ana, _, ref = self.complete_task(svc)
        body = ana.profile(ref)
        assert body["table"] == "siteA/stats.csv"
        by_name = {p["name"]: p for p in body["profiles"]}
        assert by_name["x"]["type"] == "numeric"
        assert by_name["x"]["stats"]["mean"] == pytest.approx(2.5)
        assert by_name["label"]["type"] == "categorical"
        assert by_name["label"]["stats"]["distinct_count"] == 2

    def test_correlations_endpoint(self, svc):
        ana, _, ref = self.complete_task(svc)
        body = ana.correlations(ref)
        assert body["variables"] == ["x", "y"]
        (entry,) = body["entries"]
        assert {entry["a"], entry["b"]} == {"x", "y"}
        assert entry["r"] == pytest.approx(1.0)
        assert entry["label"] == "good"
        assert entry["color"].startswith("rgb(")

    def test_transform_endpoint(self, svc):
        ana, _, ref = self.complete_task(svc)
        body = ana.transform(ref, {"name": "doubled", "actions": [
            {"kind": "scale", "var": "x", "factor": 2}]})
        assert "x,y,label" in body["csv"]
        by_name = {p["name"]: p for p in body["profiles"]}
        assert by_name["x"]["stats"]["mean"] == pytest.approx(5.0)

    def test_recommendations_endpoint(self, svc):
        ana, _, ref = self.complete_task(svc)
        body = ana.recommendations(ref, variables=["x", "y"])
        kinds = [r["kind"] for r in body["recommendations"]]
        assert kinds[0] == "scatter"
        assert kinds[-1] == "tabular"

    def test_ambiguous_table_selection_asks_for_file(self, svc):
        ana, _, ref = self.complete_task(svc)
        extra = svc.manager.result_dir(ref) / "siteA" / "extra.csv"
        extra.write_bytes(b"q\n1\n")
        with pytest.raises(ApiError) as err:
            ana.profile(ref)
        assert err.value.status == 422
        assert err.value.detail["candidates"] == ["siteA/extra.csv",
                                                  "siteA/stats.csv"]
        assert ana.profile(ref, file="siteA/stats.csv")["table"] == \
            "siteA/stats.csv"


class TestIdempotentReads:
    def test_get_routes_leave_state_untouched(self, svc):
        ana = svc.client("ana")
        task = ana.submit_task(svc.version)
        task_id = task["task_id"]
        ref = svc.wait_terminal(ana, task_id)["result_ref"]
        conf_path = f"{svc.version}/conf.yml"
        reads = [
            ("repo listing", lambda: ana.repo_list("/shared")),
            ("repo file", lambda: ana.get_file(conf_path)),
            ("task list", ana.tasks),
            ("task detail", lambda: ana.task(task_id)),
            ("task logs", lambda: ana.logs(task_id)),
            ("log stream", lambda: list(ana.follow_logs(task_id))),
            ("result manifest", lambda: ana.task_result(task_id)),
            ("result file",
             lambda: ana.result_file(task_id, "siteA/stats.csv")),
            ("profile", lambda: ana.profile(ref)),
            ("correlations", lambda: ana.correlations(ref)),
            ("recommendations", lambda: ana.recommendations(ref)),
        ]
        for name, call in reads:
            before = state_hash(svc.root)
            call()
            assert state_hash(svc.root) == before, f"{name} mutated state"


class TestAdminOverHttp:
    def test_issue_key_registers_and_authenticates(self, svc):
        issued = svc.client("admin").issue_key(
            "kay", roles=["WorkflowDesigner"])
        assert issued["user"] == "kay" and issued["secret"]
        kay = svc.client("kay", key=(issued["key_id"], issued["secret"]))
        assert kay.create_use_case("kaycase", ["siteA"])["owner"] == "kay"

    def test_analyst_cannot_issue_keys(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("ana").issue_key("eve")
        assert err.value.status == 403

    def test_owner_issues_plain_key_but_not_roles(self, svc):
        oda = svc.client("oda")
        issued = oda.issue_key("helper")
        helper = svc.client("helper", key=(issued["key_id"],
                                           issued["secret"]))
        assert helper.tasks() == []  # key works; helper has no roles
        with pytest.raises(ApiError) as err:  # registration is admin-only
            oda.issue_key("helper2", roles=["DataAnalyst"])
        assert err.value.status == 403

    def test_permission_grant_unlocks_structure_write(self, svc):
        bob = svc.client("bob")
        with pytest.raises(ApiError) as err:
            bob.add_version("/shared/study/wf")
        assert err.value.status == 403
        granted = svc.client("admin").add_permission(
            "bob", "/shared/study", ["write"])
        assert granted["actions"] == ["write"]
        assert bob.add_version("/shared/study/wf") == "/shared/study/wf/v2"

    def test_grants_are_not_for_analysts(self, svc):
        with pytest.raises(ApiError) as err:
            svc.client("ana").add_permission("bob", "/shared/study", ["read"])
        assert err.value.status == 403
