"""Multi-site workflow orchestration.

Turns a validated WorkflowConfig into a deterministic ExecutionPlan and runs
it against the data-site agents: per-site first steps execute exactly once,
remaining steps iterate under a coordinator-driven stopping condition, and
intermediate artifacts move between sites along the configured routing edges
(hub-and-spoke through the orchestrator). Each iteration every site receives
exactly one command file; workers run the command the coordinator chose for
them, the coordinator aggregates.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import httpx

from . import wire
from .auth import signed_headers
from .errors import (
    Canceled,
    CyclicRouting,
    NoCoordinator,
    SiteUnreachable,
    StepFailed,
)
from .model import Command, StepOutput, StoppingCondition, WorkflowConfig

EPSILON = 1e-12


# -- stopping rule ------------------------------------------------------------

def evaluate_stop(history: Sequence[float], stop: StoppingCondition) -> bool:
    """Stop when the metric's relative change falls below rtol, or when the
    iteration bound is reached. ``history`` holds one metric value per
    completed iteration."""
    k = len(history)
    if k >= stop.max_iterations:
        return True
    if k >= 2 and stop.relative_tolerance > 0:
        previous, current = history[-2], history[-1]
        change = abs(current - previous) / max(abs(previous), EPSILON)
        return change < stop.relative_tolerance
    return False


# -- planning -----------------------------------------------------------------

@dataclass(frozen=True)
class PlannedStep:
    site_id: str
    step_index: int  # position in config.steps
    script_name: str
    params: dict


@dataclass(frozen=True)
class SitePlan:
    """One site's work inside a phase: steps run sequentially in this order."""
    site_id: str
    steps: tuple[PlannedStep, ...]


@dataclass(frozen=True)
class ExecutionPlan:
    task_id: str
    config: WorkflowConfig
    iterative: bool
    coordinator: Optional[str]
    init_phase: tuple[SitePlan, ...]          # first steps, run exactly once
    loop_phases: tuple[tuple[SitePlan, ...], ...]  # topologically ordered
    forward_edges: tuple[tuple[str, str], ...]
    feedback_edges: tuple[tuple[str, str], ...]
    stop: StoppingCondition

    @property
    def init_step_count(self) -> int:
        return sum(len(sp.steps) for sp in self.init_phase)

    @property
    def loop_steps_per_iteration(self) -> int:
        return sum(len(sp.steps) for phase in self.loop_phases for sp in phase)

    @property
    def planned_step_total(self) -> int:
        return (self.init_step_count
                + self.loop_steps_per_iteration * self.stop.max_iterations)


def _edges_of(routing: Mapping[str, Sequence[str]]) -> list[tuple[str, str]]:
    return [(src, dst) for src, dsts in routing.items() for dst in dsts]


def _is_acyclic(nodes: Sequence[str], edges: Sequence[tuple[str, str]]) -> bool:
    return _topo_levels(nodes, edges) is not None


def _topo_levels(nodes: Sequence[str], edges: Sequence[tuple[str, str]]
                 ) -> Optional[list[list[str]]]:
    """Kahn's algorithm, grouping nodes into levels; None if cyclic."""
    indegree = {n: 0 for n in nodes}
    out: dict[str, list[str]] = {n: [] for n in nodes}
    for src, dst in edges:
        indegree[dst] += 1
        out[src].append(dst)
    frontier = [n for n in nodes if indegree[n] == 0]
    levels, seen = [], 0
    while frontier:
        levels.append(sorted(frontier))
        seen += len(frontier)
        nxt = []
        for node in frontier:
            for dst in out[node]:
                indegree[dst] -= 1
                if indegree[dst] == 0:
                    nxt.append(dst)
        frontier = nxt
    return levels if seen == len(nodes) else None


def _sinks(nodes: Sequence[str], edges: Sequence[tuple[str, str]]) -> set[str]:
    with_out = {src for src, _ in edges}
    return {n for n in nodes if n not in with_out}


def _find_coordinator(nodes: Sequence[str], edges: list[tuple[str, str]]
                      ) -> tuple[str, list[tuple[str, str]]]:
    """The coordinator is the unique site whose outgoing edges, once removed,
    leave an acyclic graph with that site as the only sink. Its outgoing
    edges are the feedback edges closing the iteration loop."""
    if _is_acyclic(nodes, edges):
        sinks = _sinks(nodes, edges)
        if len(sinks) != 1:
            raise NoCoordinator(
                f"iterative routing needs exactly one aggregation site, "
                f"found sinks {sorted(sinks)}")
        return sinks.pop(), []
    candidates = []
    for node in nodes:
        kept = [(s, d) for s, d in edges if s != node]
        if _is_acyclic(nodes, kept) and _sinks(nodes, kept) == {node}:
            candidates.append(node)
    if len(candidates) != 1:
        raise CyclicRouting(
            f"routing cycle has no unique aggregation site "
            f"(candidates: {sorted(candidates)})")
    coordinator = candidates[0]
    feedback = [(s, d) for s, d in edges if s == coordinator]
    return coordinator, feedback


def plan(task_id: str, config: WorkflowConfig) -> ExecutionPlan:
    sites = list(config.site_ids)
    per_site: dict[str, list[PlannedStep]] = {s: [] for s in sites}
    for index, step in enumerate(config.steps):
        per_site[step.site_id].append(
            PlannedStep(step.site_id, index, step.script_name,
                        dict(step.params)))

    edges = _edges_of(config.routing)
    iterative = config.stop.max_iterations > 1 or not _is_acyclic(sites, edges)

    coordinator: Optional[str] = None
    feedback: list[tuple[str, str]] = []
    if iterative:
        coordinator, feedback = _find_coordinator(sites, edges)
    forward = [e for e in edges if e not in feedback]

    init_phase: list[SitePlan] = []
    loop_per_site: dict[str, list[PlannedStep]] = {}
    for site in sites:
        steps = per_site[site]
        if iterative and len(steps) >= 2:
            init_phase.append(SitePlan(site, (steps[0],)))
            loop_per_site[site] = steps[1:]
        else:
            loop_per_site[site] = steps

    levels = _topo_levels(sites, forward)
    assert levels is not None  # forward graph is acyclic by construction
    loop_phases = []
    for level in levels:
        phase = tuple(SitePlan(site, tuple(loop_per_site[site]))
                      for site in level if loop_per_site[site])
        if phase:
            loop_phases.append(phase)

    return ExecutionPlan(
        task_id=task_id, config=config, iterative=iterative,
        coordinator=coordinator, init_phase=tuple(init_phase),
        loop_phases=tuple(loop_phases), forward_edges=tuple(forward),
        feedback_edges=tuple(feedback), stop=config.stop)


# -- site client --------------------------------------------------------------

class SiteClient:
    """Signed HTTP client for one data-site agent."""

    def __init__(self, site_id: str, endpoint: str, key_id: str, secret: str,
                 timeout: float = 120.0):
        self.site_id = site_id
        self.endpoint = endpoint.rstrip("/")
        self._key_id = key_id
        self._secret = secret
        self._client = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _request(self, method: str, path: str, body: bytes = b"",
                 content_type: Optional[str] = None) -> httpx.Response:
        headers = signed_headers(self._key_id, self._secret, method, path, body)
        if content_type:
            headers["Content-Type"] = content_type
        try:
            return self._client.request(method, path, content=body,
                                        headers=headers)
        except httpx.HTTPError as exc:
            raise SiteUnreachable(
                f"site {self.site_id!r} at {self.endpoint}: {exc}") from None

    def run_step(self, bundle) -> StepOutput:
        content_type, body = wire.encode_form_data(wire.request_files(bundle))
        response = self._request("POST", "/v1/steps", body, content_type)
        if response.status_code != 200:
            raise _step_failure(self.site_id, bundle.step_key, response)
        manifest, blobs = wire.decode_multipart(
            response.headers.get("content-type", ""), response.content)
        return wire.output_from_manifest(manifest, blobs)

    def status(self, task_id: str) -> dict:
        response = self._request("GET", f"/v1/tasks/{task_id}/status")
        return response.json()

    def terminate(self, task_id: str) -> None:
        self._request("POST", f"/v1/tasks/{task_id}/terminate")

    def register_dataset(self, dataset_id: str, locator: str) -> dict:
        import json

        body = json.dumps({"dataset_id": dataset_id,
                           "locator": locator}).encode()
        response = self._request("POST", "/v1/datasets", body,
                                 "application/json")
        return response.json()

    def grant(self, dataset_id: str, user: str) -> dict:
        import json

        body = json.dumps({"user": user}).encode()
        response = self._request("POST", f"/v1/datasets/{dataset_id}/grants",
                                 body, "application/json")
        return response.json()


def _step_failure(site_id: str, step_key: str,
                  response: httpx.Response) -> Exception:
    try:
        payload = response.json()
    except ValueError:
        payload = {}
    if payload.get("code") == "Terminated":
        return Canceled(f"site {site_id!r} reports the task terminated")
    detail = payload.get("detail") or {}
    stderr = detail.get("stderr") or payload.get("message") or response.text
    return StepFailed(site_id, step_key, str(stderr)[-2000:])


# -- execution ----------------------------------------------------------------

@dataclass
class ExecutionResult:
    iterations: int
    metric_history: list[float] = field(default_factory=list)
    final_outputs: dict = field(default_factory=dict)  # (site, step_key) -> StepOutput


class Orchestrator:
    def __init__(self, clients: Mapping[str, "SiteClient"],
                 site_datasets: Optional[Mapping[str, Sequence[str]]] = None):
        self.clients = dict(clients)
        # Which datasets each site hosts; bundles only name datasets local to
        # their target site. None means "send the full list everywhere".
        self.site_datasets = (None if site_datasets is None
                              else {s: tuple(d) for s, d in
                                    site_datasets.items()})

    def execute(self, exec_plan: ExecutionPlan, user: str,
                scripts: Mapping[str, bytes],
                cancel: Optional[threading.Event] = None,
                on_step: Optional[Callable[[str, str], None]] = None,
                ) -> ExecutionResult:
        for sp in exec_plan.init_phase:
            if sp.site_id not in self.clients:
                raise SiteUnreachable(f"no client for site {sp.site_id!r}")
        for phase in exec_plan.loop_phases:
            for sp in phase:
                if sp.site_id not in self.clients:
                    raise SiteUnreachable(f"no client for site {sp.site_id!r}")

        contacted: set[str] = set()
        init_outputs: dict[str, dict[str, bytes]] = {}
        feedback_pool: dict[str, dict[str, bytes]] = {}
        history: list[float] = []
        result = ExecutionResult(iterations=0)
        notify = on_step or (lambda site, step: None)

        pool = ThreadPoolExecutor(max_workers=max(len(self.clients), 1))
        try:
            if exec_plan.init_phase:
                self._check_cancel(cancel, exec_plan, contacted)
                outputs = self._run_phase(
                    pool, exec_plan, exec_plan.init_phase, iteration=0,
                    label="init", commands={}, default_command=Command.FIT,
                    inputs_for=lambda site: {}, user=user, scripts=scripts,
                    contacted=contacted, notify=notify)
                for (site, _), out in outputs.items():
                    merged = init_outputs.setdefault(site, {})
                    merged.update(out.artifacts)

            next_commands: dict[str, Command] = {}
            for iteration in range(1, exec_plan.stop.max_iterations + 1):
                result.iterations = iteration
                routed: dict[str, dict[str, bytes]] = {}
                local: dict[str, dict[str, bytes]] = {}
                iteration_outputs: dict = {}
                for phase in exec_plan.loop_phases:
                    self._check_cancel(cancel, exec_plan, contacted)

                    def inputs_for(site: str) -> dict[str, bytes]:
                        merged: dict[str, bytes] = {}
                        merged.update(init_outputs.get(site, {}))
                        merged.update(feedback_pool.get(site, {}))
                        merged.update(routed.get(site, {}))
                        merged.update(local.get(site, {}))
                        return merged

                    outputs = self._run_phase(
                        pool, exec_plan, phase, iteration=iteration,
                        label=f"it{iteration}", commands=next_commands,
                        default_command=Command.FIT, inputs_for=inputs_for,
                        user=user, scripts=scripts, contacted=contacted,
                        notify=notify)
                    iteration_outputs.update(outputs)
                    for (site, _), out in outputs.items():
                        local.setdefault(site, {}).update(out.artifacts)
                        for src, dst in exec_plan.forward_edges:
                            if src == site:
                                routed.setdefault(dst, {}).update(out.artifacts)

                result.final_outputs = iteration_outputs
                feedback_pool = {}
                if exec_plan.coordinator is not None:
                    coord_out = self._coordinator_output(
                        exec_plan, iteration_outputs)
                    if coord_out is not None:
                        for src, dst in exec_plan.feedback_edges:
                            feedback_pool.setdefault(dst, {}).update(
                                coord_out.artifacts)
                        next_commands = self._worker_commands(
                            exec_plan, coord_out)
                        if exec_plan.stop.metric_name:
                            history.append(self._metric(exec_plan, coord_out))
                if evaluate_stop(history, exec_plan.stop):
                    break

            result.metric_history = history
            self._terminate_sites(exec_plan, contacted)
            return result
        finally:
            pool.shutdown(wait=False)

    # -- helpers --------------------------------------------------------------

    def _run_phase(self, pool, exec_plan, phase, *, iteration, label, commands,
                   default_command, inputs_for, user, scripts, contacted,
                   notify) -> dict:
        futures = {}
        for site_plan in phase:
            futures[site_plan.site_id] = pool.submit(
                self._run_site_steps, exec_plan, site_plan, iteration, label,
                commands, default_command, inputs_for(site_plan.site_id),
                user, scripts, contacted, notify)
        outputs: dict = {}
        errors: list[Exception] = []
        for future in futures.values():
            try:
                outputs.update(future.result())
            except Exception as exc:  # noqa: BLE001 - propagated below
                errors.append(exc)
        if errors:
            for exc in errors:
                if isinstance(exc, Canceled):
                    raise exc
            raise errors[0]
        return outputs

    def _run_site_steps(self, exec_plan, site_plan, iteration, label, commands,
                        default_command, base_inputs, user, scripts, contacted,
                        notify) -> dict:
        site = site_plan.site_id
        if site == exec_plan.coordinator and label != "init":
            command = Command.AGGREGATE
        else:
            command = commands.get(site, default_command)
        outputs: dict = {}
        inputs = dict(base_inputs)
        for planned in site_plan.steps:
            step_key = f"{label}/{planned.script_name}"
            bundle = self._bundle(exec_plan, planned, iteration, step_key,
                                  command, inputs, user, scripts)
            contacted.add(site)
            output = self.clients[site].run_step(bundle)
            notify(site, step_key)
            outputs[(site, step_key)] = output
            inputs.update(output.artifacts)  # later own steps see earlier output
        return outputs

    def _bundle(self, exec_plan, planned, iteration, step_key, command,
                inputs, user, scripts):
        from .model import StepBundle

        cfg = exec_plan.config
        all_inputs = {wire.COMMAND_FILE: wire.command_file_bytes(command,
                                                                 iteration)}
        all_inputs.update(inputs)
        dataset_ids = cfg.dataset_ids
        if self.site_datasets is not None:
            local = set(self.site_datasets.get(planned.site_id, ()))
            dataset_ids = tuple(d for d in cfg.dataset_ids if d in local)
        return StepBundle(
            task_id=exec_plan.task_id, iteration=iteration,
            site_id=planned.site_id, step_key=step_key,
            entry_script=planned.script_name, scripts=dict(scripts),
            params=dict(planned.params), command=command, inputs=all_inputs,
            user=user, dataset_ids=dataset_ids,
            keep_local_copy=cfg.keep_local_copy,
            timestamp_results=cfg.timestamp_results)

    def _coordinator_output(self, exec_plan, iteration_outputs):
        for (site, step_key), output in reversed(list(iteration_outputs.items())):
            if site == exec_plan.coordinator:
                return output
        return None

    def _worker_commands(self, exec_plan, coord_out) -> dict:
        raw = coord_out.metrics.get("command", Command.FIT.value)
        try:
            chosen = Command(str(raw))
        except ValueError:
            chosen = Command.FIT
        return {site: chosen for site in exec_plan.config.site_ids
                if site != exec_plan.coordinator}

    def _metric(self, exec_plan, coord_out) -> float:
        name = exec_plan.stop.metric_name
        if name not in coord_out.metrics:
            raise StepFailed(exec_plan.coordinator or "?", "metric",
                             f"stopping metric {name!r} missing from "
                             f"coordinator metrics {sorted(coord_out.metrics)}")
        try:
            return float(coord_out.metrics[name])
        except (TypeError, ValueError):
            raise StepFailed(exec_plan.coordinator or "?", "metric",
                             f"stopping metric {name!r} is not numeric") from None

    def _check_cancel(self, cancel, exec_plan, contacted) -> None:
        if cancel is not None and cancel.is_set():
            self._terminate_sites(exec_plan, contacted)
            raise Canceled(f"task {exec_plan.task_id} canceled")

    def _terminate_sites(self, exec_plan, contacted) -> None:
        for site in sorted(contacted):
            try:
                self.clients[site].terminate(exec_plan.task_id)
            except SiteUnreachable:
                pass
