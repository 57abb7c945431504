/** Application shell: sign-in, navigation, and the three coordinated panels.
 *
 * Panel 1 (workflow) pairs the repository browser with the editor and its
 * terminal; panel 2 is the task dashboard; panel 3 is result exploration.
 * All state the panels share lives in one ViewStateStore, and all traffic
 * flows through one FabricApi bound to the session credentials, which are
 * held in memory only.
 */

import { FetchLike } from "./api/client";
import { TaskInfo } from "./api/types";
import { FileBrowserPanel } from "./panels/browser";
import { EditorPanel } from "./panels/editor";
import { ExplorationPanel } from "./panels/explore";
import { TaskDashboardPanel } from "./panels/tasks";
import { closeSession, openSession, Session } from "./state/session";
import { PanelName, ViewStateStore } from "./state/store";

export interface AppOptions {
  fetchImpl?: FetchLike;
  pollIntervalMs?: number;
}

export class App {
  readonly root: HTMLElement;
  readonly store = new ViewStateStore();
  session: Session | null = null;
  browser: FileBrowserPanel | null = null;
  editor: EditorPanel | null = null;
  dashboard: TaskDashboardPanel | null = null;
  exploration: ExplorationPanel | null = null;

  private main: HTMLElement;
  private nav: HTMLElement;

  constructor(private readonly options: AppOptions = {}) {
    this.root = document.createElement("div");
    this.root.className = "app";
    this.root.innerHTML = `
      <nav class="topnav">
        <span class="brand">data fabric</span>
        <button type="button" class="nav-workflow" data-panel="workflow">Workflows</button>
        <button type="button" class="nav-tasks" data-panel="tasks">Tasks</button>
        <button type="button" class="nav-explore" data-panel="explore">Explore</button>
        <span class="whoami"></span>
        <button type="button" class="sign-out" hidden>Sign out</button>
      </nav>
      <main class="app-main"></main>
    `;
    this.nav = this.root.querySelector(".topnav")!;
    this.main = this.root.querySelector(".app-main")!;
    for (const button of this.nav.querySelectorAll<HTMLButtonElement>("[data-panel]")) {
      button.addEventListener("click", () => {
        this.store.showPanel(button.dataset.panel as PanelName);
      });
    }
    this.nav.querySelector(".sign-out")!.addEventListener("click", () => {
      this.signOut();
    });
    this.store.subscribe(() => this.syncVisibility());
    this.renderLogin();
  }

  private renderLogin(): void {
    const form = document.createElement("form");
    form.className = "login-form";
    form.innerHTML = `
      <h2>Sign in</h2>
      <label>Endpoint <input name="endpoint" value="${defaultEndpoint()}" /></label>
      <label>User <input name="user" autocomplete="username" /></label>
      <label>Key id <input name="keyId" /></label>
      <label>Secret <input name="secret" type="password" autocomplete="current-password" /></label>
      <button type="submit">Connect</button>
      <p class="login-error" hidden></p>
      <p class="login-note">The key is kept in this tab's memory only; closing the tab forgets it.</p>
    `;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const data = new FormData(form);
      void this.signIn(
        String(data.get("endpoint") ?? ""),
        String(data.get("user") ?? ""),
        String(data.get("keyId") ?? ""),
        String(data.get("secret") ?? ""),
      ).catch((error) => {
        const note = form.querySelector(".login-error") as HTMLElement;
        note.textContent = String(error);
        note.hidden = false;
      });
    });
    this.main.replaceChildren(form);
  }

  async signIn(
    endpoint: string,
    user: string,
    keyId: string,
    secret: string,
  ): Promise<void> {
    const session = openSession(
      endpoint.replace(/\/$/, ""),
      user,
      { keyId, secret },
      this.options.fetchImpl,
    );
    // prove the credentials before tearing down the login form
    await session.api.listTasks();
    this.session = session;
    this.mountPanels(session);
  }

  private mountPanels(session: Session): void {
    this.editor = new EditorPanel(session.api, this.store);
    this.browser = new FileBrowserPanel(session.api, this.store, {
      onOpenFile: (entry) => {
        void this.editor!.open(entry);
      },
      onRunConfig: (entry) => {
        void this.editor!.runConfigAt(entry.path);
      },
    });
    this.exploration = new ExplorationPanel(session.api, this.store);
    this.dashboard = new TaskDashboardPanel(session.api, this.store, {
      onOpenResult: (task: TaskInfo) => {
        this.store.showPanel("explore");
        void this.exploration!.openResult(task);
      },
    });

    const workflow = document.createElement("div");
    workflow.className = "panel-workflow split";
    workflow.append(this.browser.root, this.editor.root);

    this.main.replaceChildren(
      workflow,
      this.dashboard.root,
      this.exploration.root,
    );
    (this.nav.querySelector(".whoami") as HTMLElement).textContent =
      `${session.user} @ ${session.endpoint}`;
    (this.nav.querySelector(".sign-out") as HTMLElement).hidden = false;

    this.dashboard.start(this.options.pollIntervalMs);
    void this.browser.refresh();
    this.syncVisibility();
  }

  private syncVisibility(): void {
    if (!this.browser) return;
    const active = this.store.get().activePanel;
    const workflow = this.main.querySelector(".panel-workflow") as HTMLElement | null;
    if (workflow) workflow.hidden = active !== "workflow";
    if (this.dashboard) this.dashboard.root.hidden = active !== "tasks";
    if (this.exploration) this.exploration.root.hidden = active !== "explore";
    for (const button of this.nav.querySelectorAll<HTMLButtonElement>("[data-panel]")) {
      button.classList.toggle("active", button.dataset.panel === active);
    }
  }

  signOut(): void {
    this.dashboard?.stop();
    closeSession();
    this.session = null;
    this.browser = null;
    this.editor = null;
    this.dashboard = null;
    this.exploration = null;
    (this.nav.querySelector(".whoami") as HTMLElement).textContent = "";
    (this.nav.querySelector(".sign-out") as HTMLElement).hidden = true;
    this.renderLogin();
  }
}

function defaultEndpoint(): string {
  if (typeof location !== "undefined" && location.origin.startsWith("http")) {
    return location.origin;
  }
  return "http://127.0.0.1:8000";
}

export function mount(target: HTMLElement, options: AppOptions = {}): App {
  const app = new App(options);
  target.replaceChildren(app.root);
  return app;
}

declare global {
  interface Window {
    __fabricApp?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.__fabricApp = mount(document.getElementById("app")!);
}
