"""Execution planning, stopping rule, and multi-site loop tests."""

import threading

import pytest
from fastapi.testclient import TestClient

from datafabric.agent import RunnerSpec, SiteAgent
from datafabric.agent.service import create_agent_app
from datafabric.auth import AuthStore
from datafabric.errors import (
    Canceled,
    CyclicRouting,
    NoCoordinator,
    NotFound,
    SiteUnreachable,
    StepFailed,
)
from datafabric.model import (
    StoppingCondition,
    WorkflowConfig,
    WorkflowStep,
)
from datafabric.orchestrator import (
    ExecutionPlan,
    Orchestrator,
    SiteClient,
    evaluate_stop,
    plan,
)

FAST = RunnerSpec(cpu_seconds_limit=10, wall_clock_limit_seconds=15.0)


def make_config(steps, routing, *, max_iterations=1, metric="", rtol=0.0,
                datasets=()):
    return WorkflowConfig(
        workflow_name="wf", das_endpoint="http://hub", credential_ref="cred",
        dataset_ids=tuple(datasets),
        steps=tuple(WorkflowStep(site_id=s, script_name=n, params=dict(p))
                    for s, n, p in steps),
        results_destination="results/wf",
        stop=StoppingCondition(max_iterations=max_iterations,
                               metric_name=metric, relative_tolerance=rtol),
        routing={k: tuple(v) for k, v in routing.items()})


class TestEvaluateStop:
    STOP = StoppingCondition(max_iterations=25, metric_name="delta",
                             relative_tolerance=1e-3)

    def test_identical_values_stop(self):
        assert evaluate_stop([10.0, 10.0], self.STOP) is True

    def test_large_change_continues(self):
        assert evaluate_stop([10.0, 5.0], self.STOP) is False

    def test_small_relative_change_stops(self):
        assert evaluate_stop([1.0, 1.0005], self.STOP) is True

    def test_single_point_continues(self):
        assert evaluate_stop([10.0], self.STOP) is False

    def test_iteration_bound_stops(self):
        stop = StoppingCondition(max_iterations=3, metric_name="delta",
                                 relative_tolerance=1e-9)
        assert evaluate_stop([1.0, 2.0, 4.0], stop) is True

    def test_zero_tolerance_never_metric_stops(self):
        stop = StoppingCondition(max_iterations=100, metric_name="delta",
                                 relative_tolerance=0.0)
        assert evaluate_stop([5.0, 5.0], stop) is False

    def test_near_zero_previous_uses_epsilon_floor(self):
        # |1e-6 - 0| / max(0, 1e-12) is huge, so the loop must continue.
        assert evaluate_stop([0.0, 1e-6], self.STOP) is False


class TestPlan:
    def hub_and_spokes(self, max_iterations=25):
        return make_config(
            [("A", "prepare.py", {}), ("A", "worker.py", {"value": 1}),
             ("B", "prepare.py", {}), ("B", "worker.py", {"value": 2}),
             ("C", "prepare.py", {}), ("C", "aggregate.py", {})],
            {"A": ["C"], "B": ["C"], "C": ["A", "B"]},
            max_iterations=max_iterations, metric="delta", rtol=1e-3)

    def test_hub_and_spokes_shape(self):
        p = plan("t1", self.hub_and_spokes())
        assert p.iterative is True
        assert p.coordinator == "C"
        assert set(p.feedback_edges) == {("C", "A"), ("C", "B")}
        assert set(p.forward_edges) == {("A", "C"), ("B", "C")}
        init_sites = [sp.site_id for sp in p.init_phase]
        assert init_sites == ["A", "B", "C"]
        assert all(len(sp.steps) == 1 for sp in p.init_phase)
        levels = [[sp.site_id for sp in phase] for phase in p.loop_phases]
        assert levels == [["A", "B"], ["C"]]

    def test_planned_step_totals(self):
        p = plan("t1", self.hub_and_spokes(max_iterations=25))
        assert p.init_step_count == 3
        assert p.loop_steps_per_iteration == 3
        assert p.planned_step_total == 3 + 3 * 25

    def test_two_site_cycle_rejected(self):
        cfg = make_config(
            [("A", "a.py", {}), ("B", "b.py", {})],
            {"A": ["B"], "B": ["A"]}, max_iterations=5)
        with pytest.raises(CyclicRouting):
            plan("t1", cfg)

    def test_iterative_multi_sink_rejected(self):
        cfg = make_config(
            [("A", "a.py", {}), ("B", "b.py", {}), ("C", "c.py", {})],
            {"A": ["B"]}, max_iterations=5)
        with pytest.raises(NoCoordinator):
            plan("t1", cfg)

    def test_non_iterative_pipeline(self):
        cfg = make_config(
            [("A", "extract.py", {}), ("B", "load.py", {})],
            {"A": ["B"]}, max_iterations=1)
        p = plan("t1", cfg)
        assert p.iterative is False
        assert p.coordinator is None
        assert p.init_phase == ()
        levels = [[sp.site_id for sp in phase] for phase in p.loop_phases]
        assert levels == [["A"], ["B"]]
        assert p.planned_step_total == 2

    def test_single_site_iterative(self):
        cfg = make_config(
            [("A", "prepare.py", {}), ("A", "refine.py", {})], {},
            max_iterations=5, metric="loss", rtol=1e-2)
        p = plan("t1", cfg)
        assert p.iterative and p.coordinator == "A"
        assert [sp.site_id for sp in p.init_phase] == ["A"]
        assert p.loop_phases[0][0].steps[0].script_name == "refine.py"

    def test_single_step_site_iterates_without_init(self):
        cfg = make_config(
            [("A", "worker.py", {}),
             ("B", "prepare.py", {}), ("B", "worker.py", {}),
             ("C", "prepare.py", {}), ("C", "aggregate.py", {})],
            {"A": ["C"], "B": ["C"], "C": ["A", "B"]},
            max_iterations=3, metric="m", rtol=0.0)
        p = plan("t1", cfg)
        assert [sp.site_id for sp in p.init_phase] == ["B", "C"]
        flat = [(sp.site_id, sp.steps[0].script_name)
                for phase in p.loop_phases for sp in phase]
        assert flat == [("A", "worker.py"), ("B", "worker.py"),
                        ("C", "aggregate.py")]

    def test_cycle_forces_iterative_despite_single_iteration(self):
        cfg = make_config(
            [("A", "a.py", {}), ("A", "a2.py", {}),
             ("B", "b.py", {}), ("B", "b2.py", {}),
             ("C", "c.py", {}), ("C", "c2.py", {})],
            {"A": ["C"], "B": ["C"], "C": ["A", "B"]}, max_iterations=1)
        p = plan("t1", cfg)
        assert p.iterative is True
        assert p.coordinator == "C"


PREPARE = """\
import json
json.dump({"ready": True}, open("out/cached.json", "w"))
"""

WORKER = """\
import json, os, pathlib

site = os.environ["SITE_ID"]
iteration = int(os.environ["FABRIC_ITERATION"])

command_file = pathlib.Path("command").read_text()
file_cmd = command_file.splitlines()[0].split("=", 1)[1]
assert file_cmd == os.environ["FABRIC_COMMAND"], (
    f"command file {file_cmd!r} disagrees with env")
expected = "Fit" if iteration == 1 else "Predict"
assert file_cmd == expected, f"iteration {iteration}: got {file_cmd!r}"

assert json.load(open("cached.json"))["ready"] is True
if iteration >= 2:
    model = json.load(open("model.json"))
    assert model["iteration"] == iteration - 1, model

value = json.loads(os.environ["FABRIC_PARAMS"])["value"]
json.dump({"site": site, "value": value},
          open(f"out/partial_{site}.json", "w"))
open("metrics", "w").write(f"seen_command={file_cmd}\\n")
"""

AGGREGATE = """\
import json, os, pathlib

iteration = int(os.environ["FABRIC_ITERATION"])
assert os.environ["FABRIC_COMMAND"] == "Aggregate"
assert json.load(open("cached.json"))["ready"] is True

parts = sorted(pathlib.Path(".").glob("partial_*.json"))
total = sum(json.load(open(p))["value"] for p in parts)
json.dump({"iteration": iteration, "total": total},
          open("out/model.json", "w"))
lines = [f"delta={total}\\n", f"nparts={len(parts)}\\n"]
if iteration == 1:
    lines.append("command=Predict\\n")
open("metrics", "w").write("".join(lines))
"""


@pytest.fixture
def fabric_sites(tmp_path):
    """Three HTTP agents (A, B as workers, C as coordinator) reachable
    through signed TestClient-backed site clients."""
    clients = {}
    agents = {}
    for site_id in ("A", "B", "C"):
        (tmp_path / site_id).mkdir()
        auth = AuthStore(tmp_path / site_id / "auth.json")
        key_id, secret = auth.bootstrap("hub")
        agent = SiteAgent(site_id, tmp_path / site_id / "site", auth,
                          runner_spec=FAST)
        app = create_agent_app(agent)
        client = SiteClient(site_id, "http://testserver", key_id, secret)
        client._client = TestClient(app, raise_server_exceptions=False)
        clients[site_id] = client
        agents[site_id] = agent
    return clients, agents


def hub_scripts():
    return {"prepare.py": PREPARE.encode(), "worker.py": WORKER.encode(),
            "aggregate.py": AGGREGATE.encode()}


class TestExecute:
    def config(self, **overrides):
        kwargs = dict(max_iterations=10, metric="delta", rtol=1e-3)
        kwargs.update(overrides)
        return make_config(
            [("A", "prepare.py", {}), ("A", "worker.py", {"value": 1.5}),
             ("B", "prepare.py", {}), ("B", "worker.py", {"value": 2.5}),
             ("C", "prepare.py", {}), ("C", "aggregate.py", {})],
            {"A": ["C"], "B": ["C"], "C": ["A", "B"]}, **kwargs)

    def test_iterative_loop_converges(self, fabric_sites):
        clients, agents = fabric_sites
        p = plan("task-loop", self.config())
        seen = []
        result = Orchestrator(clients).execute(
            p, user="ana", scripts=hub_scripts(),
            on_step=lambda site, step: seen.append((site, step)))

        # constant metric: iteration 2 matches iteration 1, so the loop stops
        assert result.iterations == 2
        assert result.metric_history == [4.0, 4.0]

        # exactly one init step per site, then two loop iterations
        init_steps = [s for s in seen if s[1].startswith("init/")]
        assert sorted(init_steps) == [("A", "init/prepare.py"),
                                      ("B", "init/prepare.py"),
                                      ("C", "init/prepare.py")]
        assert not any(step.startswith("it3/") for _, step in seen)

        coord = result.final_outputs[("C", "it2/aggregate.py")]
        assert coord.metrics["nparts"] == 2.0
        worker = result.final_outputs[("A", "it2/worker.py")]
        assert worker.metrics["seen_command"] == "Predict"

        for agent in agents.values():
            status = agent.status("task-loop")
            assert status["terminated"] is True
            states = {s["step_key"]: s["state"] for s in status["steps"]}
            assert all(v == "Complete" for v in states.values())

    def test_iteration_bound_respected(self, fabric_sites):
        clients, _ = fabric_sites
        p = plan("task-bound", self.config(max_iterations=1, rtol=0.0))
        result = Orchestrator(clients).execute(p, user="ana",
                                               scripts=hub_scripts())
        assert result.iterations == 1
        assert result.metric_history == [4.0]

    def test_missing_metric_is_step_failure(self, fabric_sites):
        clients, _ = fabric_sites
        scripts = hub_scripts()
        scripts["aggregate.py"] = (
            b"import json, pathlib\n"
            b"json.dump({}, open('out/model.json', 'w'))\n")
        p = plan("task-nometric", self.config())
        with pytest.raises(StepFailed) as err:
            Orchestrator(clients).execute(p, user="ana", scripts=scripts)
        assert "delta" in str(err.value.detail)

    def test_worker_crash_surfaces_stderr(self, fabric_sites):
        clients, _ = fabric_sites
        scripts = hub_scripts()
        scripts["worker.py"] = b"raise RuntimeError('worker exploded')\n"
        p = plan("task-crash", self.config())
        with pytest.raises(StepFailed) as err:
            Orchestrator(clients).execute(p, user="ana", scripts=scripts)
        assert "worker exploded" in str(err.value.detail)

    def test_pre_set_cancel_contacts_no_site(self, fabric_sites):
        clients, agents = fabric_sites
        cancel = threading.Event()
        cancel.set()
        p = plan("task-cancel", self.config())
        with pytest.raises(Canceled):
            Orchestrator(clients).execute(p, user="ana",
                                          scripts=hub_scripts(),
                                          cancel=cancel)
        for agent in agents.values():
            with pytest.raises(NotFound):
                agent.status("task-cancel")

    def test_dataset_ids_filtered_per_site(self, fabric_sites):
        clients, agents = fabric_sites
        for site_id, agent in agents.items():
            (agent.data_root / "local.csv").write_text("x\n1\n")
            admin = agent.auth.principal("hub")
            agent.register_dataset(admin, f"ds-{site_id}", "local.csv")
            agent.grant(admin, f"ds-{site_id}", "ana")
        cfg = self.config(datasets=("ds-A", "ds-B", "ds-C"))
        p = plan("task-data", cfg)
        orch = Orchestrator(clients, site_datasets={
            "A": ("ds-A",), "B": ("ds-B",), "C": ("ds-C",)})
        result = orch.execute(p, user="ana", scripts=hub_scripts())
        assert result.iterations == 2

    def test_unreachable_site(self):
        cfg = make_config([("A", "noop.py", {})], {}, max_iterations=1)
        p = plan("task-gone", cfg)
        client = SiteClient("A", "http://127.0.0.1:9", "k", "s", timeout=0.5)
        with pytest.raises(SiteUnreachable):
            Orchestrator({"A": client}).execute(
                p, user="ana", scripts={"noop.py": b"print('hi')\n"})

    def test_missing_client_detected_before_dispatch(self, fabric_sites):
        clients, _ = fabric_sites
        p = plan("task-absent", self.config())
        partial = {"A": clients["A"], "B": clients["B"]}
        with pytest.raises(SiteUnreachable):
            Orchestrator(partial).execute(p, user="ana",
                                          scripts=hub_scripts())
