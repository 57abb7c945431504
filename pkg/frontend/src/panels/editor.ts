/** Script editor with an attached terminal.
 *
 * Saving sends the buffer with the revision it was loaded from; if someone
 * else saved in between, the server's stale-write rejection opens a
 * reload-and-merge prompt instead of silently overwriting. Permission
 * rejections (an analyst touching routing, say) render inline next to the
 * save button. Running a conf.yml submits the version as a task and switches
 * to the dashboard; the terminal follows that task's event stream.
 */

import { ApiError, FabricApi } from "../api/client";
import { RepoEntry, TaskInfo } from "../api/types";
import { ViewStateStore } from "../state/store";

export interface EditorHooks {
  onTaskStarted?: (task: TaskInfo) => void;
}

export function versionPathOf(filePath: string): string {
  const segments = filePath.split("/").filter(Boolean);
  return "/" + segments.slice(0, -1).join("/");
}

export class EditorPanel {
  readonly root: HTMLElement;
  private currentPath: string | null = null;
  private textarea: HTMLTextAreaElement;
  private saveError: HTMLElement;
  private conflict: HTMLElement;
  private terminal: HTMLElement;
  private title: HTMLElement;

  constructor(
    private readonly api: FabricApi,
    private readonly store: ViewStateStore,
    private readonly hooks: EditorHooks = {},
  ) {
    this.root = document.createElement("section");
    this.root.className = "panel editor-panel";
    this.root.innerHTML = `
      <header class="panel-header">
        <h2 class="editor-title">No file open</h2>
        <span class="dirty-flag" hidden>●</span>
        <button type="button" class="save" disabled>Save</button>
        <button type="button" class="run-config" hidden>Run</button>
      </header>
      <div class="save-error" hidden></div>
      <div class="conflict-prompt" hidden>
        <p class="conflict-message"></p>
        <pre class="server-copy"></pre>
        <button type="button" class="reload-server">Load server copy into editor</button>
        <button type="button" class="keep-mine">Keep my text (save over it)</button>
      </div>
      <textarea class="editor-text" spellcheck="false"></textarea>
      <pre class="terminal" data-task=""></pre>
    `;
    this.textarea = this.root.querySelector(".editor-text")!;
    this.saveError = this.root.querySelector(".save-error")!;
    this.conflict = this.root.querySelector(".conflict-prompt")!;
    this.terminal = this.root.querySelector(".terminal")!;
    this.title = this.root.querySelector(".editor-title")!;

    this.textarea.addEventListener("input", () => {
      if (this.currentPath) {
        this.store.editBuffer(this.currentPath, this.textarea.value);
        this.syncDirtyFlag();
      }
    });
    this.root.querySelector(".save")!.addEventListener("click", () => {
      void this.save();
    });
    this.root.querySelector(".run-config")!.addEventListener("click", () => {
      void this.runCurrentConfig();
    });
    this.root.querySelector(".reload-server")!.addEventListener("click", () => {
      void this.loadServerCopy();
    });
    this.root.querySelector(".keep-mine")!.addEventListener("click", () => {
      void this.saveIgnoringConflict();
    });
  }

  async open(entry: RepoEntry): Promise<void> {
    const { data, modifiedAt } = await this.api.getFile(entry.path);
    const text = new TextDecoder().decode(data);
    this.store.openBuffer(entry.path, text, modifiedAt);
    this.currentPath = entry.path;
    this.title.textContent = entry.path;
    this.textarea.value = text;
    this.clearNotices();
    (this.root.querySelector(".save") as HTMLButtonElement).disabled = false;
    const runButton = this.root.querySelector(".run-config") as HTMLButtonElement;
    runButton.hidden = !entry.path.endsWith("/conf.yml");
    this.syncDirtyFlag();
  }

  private buffer() {
    if (!this.currentPath) return null;
    return this.store.get().buffers.get(this.currentPath) ?? null;
  }

  private syncDirtyFlag(): void {
    const flag = this.root.querySelector(".dirty-flag") as HTMLElement;
    flag.hidden = !(this.buffer()?.dirty ?? false);
  }

  async save(): Promise<boolean> {
    const buffer = this.buffer();
    if (!buffer) return false;
    this.clearNotices();
    try {
      const entry = await this.api.putFile(
        buffer.path,
        buffer.text,
        buffer.loadedModifiedAt,
      );
      this.store.markSaved(buffer.path, entry.modified_at ?? 0);
      this.syncDirtyFlag();
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.code === "StaleWrite") {
        await this.openConflictPrompt(error);
      } else if (error instanceof ApiError) {
        this.saveError.textContent = `${error.status} ${error.code}: ${error.body.message}`;
        this.saveError.hidden = false;
      } else {
        this.saveError.textContent = String(error);
        this.saveError.hidden = false;
      }
      return false;
    }
  }

  private async openConflictPrompt(error: ApiError): Promise<void> {
    const buffer = this.buffer();
    if (!buffer) return;
    const { data } = await this.api.getFile(buffer.path);
    const serverText = new TextDecoder().decode(data);
    this.conflict.querySelector(".conflict-message")!.textContent =
      `Someone saved ${buffer.path} after you loaded it (${error.body.message}). ` +
      "Review the server copy below, merge what you need into your text, then save again.";
    this.conflict.querySelector(".server-copy")!.textContent = serverText;
    this.conflict.hidden = false;
  }

  /** Replace the buffer with the server copy and clear the conflict. */
  async loadServerCopy(): Promise<void> {
    const buffer = this.buffer();
    if (!buffer) return;
    const { data, modifiedAt } = await this.api.getFile(buffer.path);
    const text = new TextDecoder().decode(data);
    this.store.openBuffer(buffer.path, text, modifiedAt);
    this.textarea.value = text;
    this.clearNotices();
    this.syncDirtyFlag();
  }

  /** Re-save the local text on top of the server revision. */
  async saveIgnoringConflict(): Promise<boolean> {
    const buffer = this.buffer();
    if (!buffer) return false;
    const { modifiedAt } = await this.api.getFile(buffer.path);
    this.store.markSaved(buffer.path, modifiedAt); // adopt server revision…
    this.store.editBuffer(buffer.path, this.textarea.value); // …keep local text
    this.conflict.hidden = true;
    return this.save();
  }

  async runCurrentConfig(): Promise<TaskInfo | null> {
    if (!this.currentPath || !this.currentPath.endsWith("/conf.yml")) return null;
    const buffer = this.buffer();
    if (buffer?.dirty) {
      const saved = await this.save();
      if (!saved) return null;
    }
    return this.runConfigAt(this.currentPath);
  }

  /** Submit the version containing `confPath` and switch to the dashboard. */
  async runConfigAt(confPath: string): Promise<TaskInfo> {
    const task = await this.api.submitTask(versionPathOf(confPath));
    this.store.followTask(task.task_id);
    this.store.showPanel("tasks");
    this.hooks.onTaskStarted?.(task);
    void this.followInTerminal(task.task_id);
    return task;
  }

  /** Append the task's event stream to the terminal; resolves at stream end. */
  async followInTerminal(taskId: string): Promise<void> {
    this.terminal.dataset.task = taskId;
    this.terminal.textContent = "";
    try {
      for await (const event of this.api.streamLogs(taskId)) {
        const line = document.createElement("div");
        line.className = `term-line ${event.kind}`;
        line.textContent = event.line;
        this.terminal.append(line);
      }
    } catch (error) {
      const line = document.createElement("div");
      line.className = "term-line error";
      line.textContent = `stream closed: ${String(error)}`;
      this.terminal.append(line);
    }
  }

  private clearNotices(): void {
    this.saveError.hidden = true;
    this.saveError.textContent = "";
    this.conflict.hidden = true;
  }
}
