/** Task dashboard: one row per task with a live progress bar and lifecycle
 * actions. Followed tasks stream checkpoint events over SSE; the task list
 * itself refreshes on a slow poll, which also covers environments where the
 * event stream cannot be held open. */

import { FabricApi } from "../api/client";
import { TaskInfo, TERMINAL_TASK_STATES } from "../api/types";
import { ViewStateStore } from "../state/store";

export const POLL_INTERVAL_MS = 5000;

export interface DashboardHooks {
  onOpenResult?: (task: TaskInfo) => void;
}

export class TaskDashboardPanel {
  readonly root: HTMLElement;
  private tasks: TaskInfo[] = [];
  private events = new Map<string, string[]>();
  private streams = new Set<string>();
  private pendingRerun: string | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private unsubscribe: (() => void) | null = null;
  private tbody: HTMLElement;
  private eventsPane: HTMLElement;

  constructor(
    private readonly api: FabricApi,
    private readonly store: ViewStateStore,
    private readonly hooks: DashboardHooks = {},
  ) {
    this.root = document.createElement("section");
    this.root.className = "panel tasks-panel";
    this.root.innerHTML = `
      <header class="panel-header">
        <h2>Tasks</h2>
        <button type="button" class="refresh">Refresh</button>
      </header>
      <table class="task-table">
        <thead>
          <tr><th>Task</th><th>State</th><th>Progress</th><th>Version</th><th></th></tr>
        </thead>
        <tbody></tbody>
      </table>
      <div class="task-events">
        <h3>Checkpoint events</h3>
        <div class="event-lines"></div>
      </div>
    `;
    this.tbody = this.root.querySelector("tbody")!;
    this.eventsPane = this.root.querySelector(".event-lines")!;
    this.root.querySelector(".refresh")!.addEventListener("click", () => {
      void this.refresh();
    });
  }

  /** Begin the poll loop and react to newly followed tasks immediately. */
  start(intervalMs: number = POLL_INTERVAL_MS): void {
    this.stop();
    this.timer = setInterval(() => void this.refresh(), intervalMs);
    this.unsubscribe = this.store.subscribe(() => {
      const waiting = this.store
        .get()
        .followedTaskIds.some(
          (id) => !this.streams.has(id) && !this.isTerminal(id),
        );
      if (waiting) void this.refresh();
    });
    void this.refresh();
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
    this.unsubscribe?.();
    this.unsubscribe = null;
  }

  async refresh(): Promise<void> {
    this.tasks = await this.api.listTasks();
    for (const id of this.store.get().followedTaskIds) {
      this.follow(id);
    }
    this.render();
  }

  private isTerminal(taskId: string): boolean {
    const known = this.tasks.find((t) => t.task_id === taskId);
    return known !== undefined && TERMINAL_TASK_STATES.has(known.state);
  }

  /** Subscribe to a task's event stream once; polling remains the fallback.
   * Terminal tasks are never re-attached: their history is already in hand. */
  follow(taskId: string): void {
    if (this.streams.has(taskId) || this.isTerminal(taskId)) return;
    this.streams.add(taskId);
    // the stream replays history from the first entry, so start clean
    this.events.set(taskId, []);
    void (async () => {
      try {
        for await (const event of this.api.streamLogs(taskId)) {
          this.events.get(taskId)!.push(event.line);
          if (event.kind === "checkpoint") await this.refreshTask(taskId);
          this.renderEvents();
        }
      } catch {
        // stream unavailable: the poll loop keeps the row honest
      } finally {
        this.streams.delete(taskId);
        await this.refresh();
      }
    })();
  }

  private async refreshTask(taskId: string): Promise<void> {
    const fresh = await this.api.getTask(taskId);
    const at = this.tasks.findIndex((t) => t.task_id === taskId);
    if (at >= 0) this.tasks[at] = fresh;
    else this.tasks.unshift(fresh);
    this.render();
  }

  taskRow(taskId: string): HTMLTableRowElement | null {
    return this.tbody.querySelector(`tr[data-task="${taskId}"]`);
  }

  eventLines(taskId: string): string[] {
    return [...(this.events.get(taskId) ?? [])];
  }

  async requestCancel(taskId: string): Promise<void> {
    await this.api.cancelTask(taskId);
    await this.refresh();
  }

  /** First click arms the confirmation; `confirmRerun` performs it. */
  requestRerun(taskId: string): void {
    this.pendingRerun = taskId;
    this.render();
  }

  async confirmRerun(taskId: string): Promise<TaskInfo> {
    this.pendingRerun = null;
    const clone = await this.api.rerunTask(taskId);
    this.store.followTask(clone.task_id);
    await this.refresh();
    return clone;
  }

  dismissRerun(): void {
    this.pendingRerun = null;
    this.render();
  }

  private render(): void {
    this.tbody.replaceChildren(...this.tasks.map((task) => this.renderRow(task)));
    this.renderEvents();
  }

  private renderRow(task: TaskInfo): HTMLTableRowElement {
    const row = document.createElement("tr");
    row.dataset.task = task.task_id;
    row.dataset.state = task.state;
    const terminal = TERMINAL_TASK_STATES.has(task.state);

    const id = document.createElement("td");
    id.className = "task-id";
    id.textContent = task.task_id;

    const state = document.createElement("td");
    const badge = document.createElement("span");
    badge.className = `state-badge state-${task.state.toLowerCase()}`;
    badge.textContent = task.state;
    state.append(badge);

    const progress = document.createElement("td");
    const track = document.createElement("div");
    track.className = "progress-track";
    const bar = document.createElement("div");
    bar.className = "progress-bar";
    const percent = Math.round(task.progress * 100);
    bar.style.width = `${percent}%`;
    bar.setAttribute("aria-valuenow", String(percent));
    bar.textContent = `${percent}%`;
    track.append(bar);
    progress.append(track);

    const version = document.createElement("td");
    version.className = "task-version";
    version.textContent = task.version_path;

    const actions = document.createElement("td");
    actions.className = "task-actions";

    const result = document.createElement("button");
    result.type = "button";
    result.className = "action result";
    result.textContent = "Result";
    result.disabled = task.state !== "Complete";
    if (result.disabled) result.title = "Available when the task completes";
    result.addEventListener("click", () => this.hooks.onOpenResult?.(task));

    const cancel = document.createElement("button");
    cancel.type = "button";
    cancel.className = "action cancel";
    cancel.textContent = "Cancel";
    cancel.disabled = terminal;
    if (cancel.disabled) cancel.title = "Already finished";
    cancel.addEventListener("click", () => void this.requestCancel(task.task_id));

    const rerun = document.createElement("button");
    rerun.type = "button";
    rerun.className = "action rerun";
    rerun.textContent = "Rerun";
    rerun.addEventListener("click", () => this.requestRerun(task.task_id));

    actions.append(result, cancel, rerun);

    if (this.pendingRerun === task.task_id) {
      const confirm = document.createElement("span");
      confirm.className = "rerun-confirm";
      confirm.append("Cancel the original and run a copy? ");
      const yes = document.createElement("button");
      yes.type = "button";
      yes.className = "action rerun-yes";
      yes.textContent = "Rerun it";
      yes.addEventListener("click", () => void this.confirmRerun(task.task_id));
      const no = document.createElement("button");
      no.type = "button";
      no.className = "action rerun-no";
      no.textContent = "Keep it";
      no.addEventListener("click", () => this.dismissRerun());
      confirm.append(yes, no);
      actions.append(confirm);
    }

    row.append(id, state, progress, version, actions);
    return row;
  }

  private renderEvents(): void {
    const followed = this.store.get().followedTaskIds;
    const blocks: HTMLElement[] = [];
    for (const taskId of followed) {
      const lines = this.events.get(taskId) ?? [];
      const block = document.createElement("div");
      block.className = "event-block";
      block.dataset.task = taskId;
      for (const line of lines) {
        const el = document.createElement("div");
        el.className = "event-line";
        el.textContent = line;
        block.append(el);
      }
      blocks.push(block);
    }
    this.eventsPane.replaceChildren(...blocks);
  }
}
