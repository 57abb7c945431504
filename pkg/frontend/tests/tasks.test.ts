/** Task dashboard conformance: live progress bars, result/cancel gating,
 * rerun confirmation semantics, and ordered checkpoint events. */

import { beforeEach, describe, expect, it } from "vitest";
import { TaskDashboardPanel } from "../src/panels/tasks";
import { EditorPanel } from "../src/panels/editor";
import { ViewStateStore } from "../src/state/store";
import { buildScenario, designerApi } from "./support/scenario";
import { FakeFabric } from "./support/fake-fabric";
import { FabricApi } from "../src/api/client";
import { TaskInfo } from "../src/api/types";

let fabric: FakeFabric;
let store: ViewStateStore;
let api: FabricApi;
let panel: TaskDashboardPanel;
let openedResults: TaskInfo[];

beforeEach(() => {
  fabric = buildScenario();
  store = new ViewStateStore();
  api = designerApi(fabric);
  openedResults = [];
  panel = new TaskDashboardPanel(api, store, {
    onOpenResult: (task) => openedResults.push(task),
  });
  document.body.replaceChildren(panel.root);
});

function barPercent(taskId: string): number {
  const bar = panel.taskRow(taskId)!.querySelector<HTMLElement>(".progress-bar")!;
  return Number.parseInt(bar.getAttribute("aria-valuenow") ?? "-1", 10);
}

async function settle(): Promise<void> {
  // let queued stream callbacks and refreshes land
  for (let i = 0; i < 10; i++) await new Promise((r) => setTimeout(r, 5));
}

describe("run-to-dashboard flow", () => {
  it("a conf.yml run appears on the dashboard with a live progress bar", async () => {
    const editor = new EditorPanel(api, store);
    const task = await editor.runConfigAt("/shared/study/flow/v1/conf.yml");
    expect(store.get().activePanel).toBe("tasks");

    await panel.refresh();
    const row = panel.taskRow(task.task_id);
    expect(row).not.toBeNull();
    expect(row!.dataset.state).toBe("Queued");
    const initial = barPercent(task.task_id);
    expect(initial).toBeGreaterThanOrEqual(0);

    // the task advances; the SSE subscription drives the bar without a manual refresh
    const observed: number[] = [initial];
    for (const _ of Array(5)) {
      fabric.advanceTask(task.task_id);
      await settle();
      observed.push(barPercent(task.task_id));
    }
    for (let i = 1; i < observed.length; i++) {
      expect(observed[i]).toBeGreaterThanOrEqual(observed[i - 1]!);
    }
    expect(observed[observed.length - 1]).toBe(100);
    expect(panel.taskRow(task.task_id)!.dataset.state).toBe("Complete");
  });
});

describe("action gating", () => {
  it("enables Result only once the task completes", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    store.followTask(task.task_id);
    await panel.refresh();
    const result = () =>
      panel.taskRow(task.task_id)!.querySelector<HTMLButtonElement>("button.result")!;
    expect(result().disabled).toBe(true);

    fabric.completeTask(task.task_id);
    await settle();
    await panel.refresh();
    expect(result().disabled).toBe(false);
    result().click();
    expect(openedResults.map((t) => t.task_id)).toEqual([task.task_id]);
  });

  it("disables Cancel on terminal tasks", async () => {
    const running = await api.submitTask("/shared/study/flow/v1");
    const finished = await api.submitTask("/shared/study/flow/v1");
    fabric.completeTask(finished.task_id);
    await panel.refresh();
    expect(
      panel.taskRow(running.task_id)!.querySelector<HTMLButtonElement>("button.cancel")!
        .disabled,
    ).toBe(false);
    expect(
      panel.taskRow(finished.task_id)!.querySelector<HTMLButtonElement>("button.cancel")!
        .disabled,
    ).toBe(true);
  });

  it("cancelling a running task turns its row terminal", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    await panel.refresh();
    await panel.requestCancel(task.task_id);
    const row = panel.taskRow(task.task_id)!;
    expect(row.dataset.state).toBe("Canceled");
    expect(row.querySelector<HTMLButtonElement>("button.cancel")!.disabled).toBe(true);
  });
});

describe("rerun confirmation", () => {
  it("asks before rerunning, then shows old row Canceled and new row Queued", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    await panel.refresh();

    panel.taskRow(task.task_id)!.querySelector<HTMLButtonElement>("button.rerun")!.click();
    const confirm = panel.taskRow(task.task_id)!.querySelector(".rerun-confirm");
    expect(confirm).not.toBeNull();
    expect(fabric.tasks.size).toBe(1); // nothing happened yet

    const clone = await panel.confirmRerun(task.task_id);
    expect(clone.task_id).not.toBe(task.task_id);
    expect(panel.taskRow(task.task_id)!.dataset.state).toBe("Canceled");
    expect(panel.taskRow(clone.task_id)!.dataset.state).toBe("Queued");
    expect(store.get().followedTaskIds).toContain(clone.task_id);
  });

  it("dismissing the confirmation leaves the task untouched", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    await panel.refresh();
    panel.requestRerun(task.task_id);
    panel.dismissRerun();
    expect(panel.taskRow(task.task_id)!.querySelector(".rerun-confirm")).toBeNull();
    expect(panel.taskRow(task.task_id)!.dataset.state).toBe("Queued");
    expect(fabric.tasks.size).toBe(1);
  });
});

describe("checkpoint events", () => {
  it("appends a followed task's checkpoint events in order", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    store.followTask(task.task_id);
    await panel.refresh();
    fabric.completeTask(task.task_id);
    await settle();

    const lines = panel.eventLines(task.task_id);
    const checkpoints = lines.map((line) => line.split(" ")[3]);
    expect(checkpoints).toEqual([
      "Queued", "Queuing", "Created", "Sending", "Sent", "Complete",
    ]);
    const rendered = [
      ...panel.root.querySelectorAll(
        `.event-block[data-task="${task.task_id}"] .event-line`,
      ),
    ].map((el) => el.textContent ?? "");
    expect(rendered).toEqual(lines);
  });
});

describe("poll loop", () => {
  it("keeps rows fresh without SSE when polling fires", async () => {
    const task = await api.submitTask("/shared/study/flow/v1");
    panel.start(20); // fast poll for the test; default is 5 s
    await settle();
    expect(panel.taskRow(task.task_id)).not.toBeNull();
    fabric.completeTask(task.task_id);
    await new Promise((r) => setTimeout(r, 60));
    expect(panel.taskRow(task.task_id)!.dataset.state).toBe("Complete");
    panel.stop();
  });
});
