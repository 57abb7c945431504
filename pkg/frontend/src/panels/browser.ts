/** Workflow repository browser: a tree over /shared and /user with per-node
 * actions. Actions the server would reject are disabled up front (with a
 * tooltip saying why), but any rejection that does reach the server is
 * rendered in the banner rather than swallowed — the server stays the
 * authority. */

import { ApiError, FabricApi } from "../api/client";
import { RepoEntry, RepoKind } from "../api/types";
import { ViewStateStore } from "../state/store";

export const CLONE_TOOLTIP =
  "Duplicate starts from a workflow or version; use-case containers cannot be cloned";

export interface BrowserHooks {
  onOpenFile?: (entry: RepoEntry) => void;
  onRunConfig?: (entry: RepoEntry) => void;
}

interface TreeNode {
  entry: RepoEntry;
  expanded: boolean;
  children: TreeNode[] | null; // null = not fetched yet
}

function rootNode(path: string): TreeNode {
  return {
    entry: {
      path,
      kind: "use_case", // placeholder; roots are containers, never actionable
      size_bytes: null,
      modified_at: null,
      writable_by_caller: false,
    },
    expanded: false,
    children: null,
  };
}

function basename(path: string): string {
  const parts = path.split("/").filter(Boolean);
  return parts[parts.length - 1] ?? path;
}

export class FileBrowserPanel {
  readonly root: HTMLElement;
  private roots: TreeNode[];
  private banner: HTMLElement;
  private tree: HTMLElement;

  constructor(
    private readonly api: FabricApi,
    private readonly store: ViewStateStore,
    private readonly hooks: BrowserHooks = {},
  ) {
    this.root = document.createElement("section");
    this.root.className = "panel browser-panel";
    this.root.innerHTML = `
      <header class="panel-header">
        <h2>Workflows</h2>
        <button type="button" class="refresh">Refresh</button>
      </header>
      <div class="error-banner" hidden></div>
      <div class="tree" role="tree"></div>
    `;
    this.banner = this.root.querySelector(".error-banner")!;
    this.tree = this.root.querySelector(".tree")!;
    this.root.querySelector(".refresh")!.addEventListener("click", () => {
      void this.refresh();
    });
    this.roots = [rootNode("/shared"), rootNode("/user")];
  }

  async refresh(): Promise<void> {
    this.clearError();
    for (const node of this.roots) {
      if (node.expanded) await this.load(node);
    }
    this.renderTree();
  }

  private async load(node: TreeNode): Promise<void> {
    const entries = await this.api.listRepo(node.entry.path);
    const known = new Map(
      (node.children ?? []).map((child) => [child.entry.path, child]),
    );
    node.children = entries.map((entry) => {
      const prior = known.get(entry.path);
      return prior
        ? { ...prior, entry }
        : { entry, expanded: false, children: null };
    });
    for (const child of node.children) {
      if (child.expanded) await this.load(child);
    }
  }

  async toggle(node: TreeNode): Promise<void> {
    if (node.entry.kind === "file") return;
    node.expanded = !node.expanded;
    if (node.expanded && node.children === null) {
      try {
        await this.load(node);
      } catch (error) {
        node.expanded = false;
        this.showError(error);
      }
    }
    this.renderTree();
  }

  /** Duplicate the node's path; the server has the final say. */
  async attemptDuplicate(path: string): Promise<void> {
    this.clearError();
    try {
      await this.api.duplicate(path);
      await this.refresh();
    } catch (error) {
      this.showError(error);
    }
  }

  async attemptAddVersion(path: string): Promise<void> {
    this.clearError();
    try {
      await this.api.addVersion(path);
      await this.refresh();
    } catch (error) {
      this.showError(error);
    }
  }

  private showError(error: unknown): void {
    const text =
      error instanceof ApiError
        ? `${error.code}: ${error.body.message}`
        : String(error);
    this.banner.textContent = text;
    this.banner.hidden = false;
  }

  private clearError(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }

  private renderTree(): void {
    this.tree.replaceChildren(
      ...this.roots.map((node) => this.renderNode(node, 0)),
    );
  }

  private renderNode(node: TreeNode, depth: number): HTMLElement {
    const item = document.createElement("div");
    item.className = "tree-node";
    item.dataset.path = node.entry.path;
    item.dataset.kind = node.entry.kind;
    item.setAttribute("role", "treeitem");

    const row = document.createElement("div");
    row.className = "tree-row";
    row.style.paddingLeft = `${depth * 18}px`;

    const label = document.createElement("span");
    label.className = "tree-label";
    const isDir = node.entry.kind !== "file";
    label.textContent = `${isDir ? (node.expanded ? "▾ " : "▸ ") : "  "}${basename(node.entry.path)}`;
    label.addEventListener("click", () => {
      this.store.selectPath(node.entry.path);
      void this.toggle(node);
    });
    row.append(label);
    row.append(...this.actionsFor(node.entry, depth));
    item.append(row);

    if (node.expanded && node.children) {
      for (const child of node.children) {
        item.append(this.renderNode(child, depth + 1));
      }
    }
    return item;
  }

  private actionsFor(entry: RepoEntry, depth: number): HTMLElement[] {
    const actions: HTMLElement[] = [];
    const kind: RepoKind = entry.kind;
    if (depth > 0 && kind !== "file") {
      const dup = document.createElement("button");
      dup.type = "button";
      dup.className = "action duplicate";
      dup.textContent = "Duplicate";
      if (kind === "use_case") {
        dup.disabled = true;
        dup.title = CLONE_TOOLTIP;
      } else {
        dup.addEventListener("click", () => {
          void this.attemptDuplicate(entry.path);
        });
      }
      actions.push(dup);
    }
    if (kind === "workflow") {
      const addVersion = document.createElement("button");
      addVersion.type = "button";
      addVersion.className = "action add-version";
      addVersion.textContent = "Add folder";
      addVersion.title = "Create the next version folder";
      addVersion.addEventListener("click", () => {
        void this.attemptAddVersion(entry.path);
      });
      actions.push(addVersion);
    }
    if (kind === "file") {
      const open = document.createElement("button");
      open.type = "button";
      open.className = "action open";
      open.textContent = "Open";
      open.addEventListener("click", () => {
        this.store.selectPath(entry.path);
        this.hooks.onOpenFile?.(entry);
      });
      actions.push(open);
      if (basename(entry.path) === "conf.yml") {
        const run = document.createElement("button");
        run.type = "button";
        run.className = "action run";
        run.textContent = "Run";
        run.addEventListener("click", () => {
          this.hooks.onRunConfig?.(entry);
        });
        actions.push(run);
      }
    }
    return actions;
  }

  /** Expand down to a path so it is visible after programmatic changes. */
  async reveal(path: string): Promise<void> {
    const segments = path.split("/").filter(Boolean);
    let frontier = this.roots;
    let prefix = "";
    for (const segment of segments) {
      prefix += `/${segment}`;
      const node = frontier.find((candidate) => candidate.entry.path === prefix);
      if (!node) break;
      if (!node.expanded) {
        node.expanded = true;
        if (node.children === null) await this.load(node);
      }
      frontier = node.children ?? [];
    }
    this.renderTree();
  }
}
