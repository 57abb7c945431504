/** Application view state shared by the three panels, with a minimal
 * subscribe/notify store so panels re-render when state they show changes. */

import { TransformProfileJson } from "../api/types";

export type PanelName = "workflow" | "tasks" | "explore";

export interface EditorBuffer {
  path: string;
  text: string;
  /** Server mtime of the loaded revision; guards concurrent edits on save. */
  loadedModifiedAt: number;
  dirty: boolean;
}

export interface ExplorationState {
  resultRef: string | null;
  /** Variables pinned by click; hover previews do not alter this. */
  selectedVariables: string[];
  activeTransform: TransformProfileJson | null;
  visualization: string;
}

export interface ViewState {
  activePanel: PanelName;
  selectedPath: string | null;
  buffers: Map<string, EditorBuffer>;
  followedTaskIds: string[];
  exploration: ExplorationState;
}

export type Listener = (state: ViewState) => void;

export class ViewStateStore {
  private state: ViewState = {
    activePanel: "workflow",
    selectedPath: null,
    buffers: new Map(),
    followedTaskIds: [],
    exploration: {
      resultRef: null,
      selectedVariables: [],
      activeTransform: null,
      visualization: "matrix",
    },
  };
  private listeners = new Set<Listener>();

  get(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  update(mutate: (state: ViewState) => void): void {
    mutate(this.state);
    this.notify();
  }

  showPanel(panel: PanelName): void {
    this.update((s) => {
      s.activePanel = panel;
    });
  }

  selectPath(path: string | null): void {
    this.update((s) => {
      s.selectedPath = path;
    });
  }

  openBuffer(path: string, text: string, modifiedAt: number): void {
    this.update((s) => {
      s.buffers.set(path, {
        path,
        text,
        loadedModifiedAt: modifiedAt,
        dirty: false,
      });
    });
  }

  editBuffer(path: string, text: string): void {
    this.update((s) => {
      const buffer = s.buffers.get(path);
      if (!buffer) return;
      buffer.text = text;
      buffer.dirty = true;
    });
  }

  markSaved(path: string, modifiedAt: number): void {
    this.update((s) => {
      const buffer = s.buffers.get(path);
      if (!buffer) return;
      buffer.loadedModifiedAt = modifiedAt;
      buffer.dirty = false;
    });
  }

  followTask(taskId: string): void {
    this.update((s) => {
      if (!s.followedTaskIds.includes(taskId)) s.followedTaskIds.push(taskId);
    });
  }

  unfollowTask(taskId: string): void {
    this.update((s) => {
      s.followedTaskIds = s.followedTaskIds.filter((id) => id !== taskId);
    });
  }

  setExploration(patch: Partial<ExplorationState>): void {
    this.update((s) => {
      Object.assign(s.exploration, patch);
    });
  }

  togglePinnedVariable(name: string): void {
    this.update((s) => {
      const vars = s.exploration.selectedVariables;
      const at = vars.indexOf(name);
      if (at >= 0) vars.splice(at, 1);
      else vars.push(name);
    });
  }
}

// -- named transformation profiles --------------------------------------------
// Profiles hold no secrets (variable names and arithmetic only), so unlike
// session keys they persist across visits in localStorage.

const PROFILE_STORE_KEY = "fabric.transform.profiles";

export function savedProfiles(): Record<string, TransformProfileJson> {
  try {
    const raw = localStorage.getItem(PROFILE_STORE_KEY);
    return raw ? (JSON.parse(raw) as Record<string, TransformProfileJson>) : {};
  } catch {
    return {};
  }
}

export function saveProfile(name: string, profile: TransformProfileJson): void {
  const all = savedProfiles();
  all[name] = profile;
  localStorage.setItem(PROFILE_STORE_KEY, JSON.stringify(all));
}

export function deleteProfile(name: string): void {
  const all = savedProfiles();
  delete all[name];
  localStorage.setItem(PROFILE_STORE_KEY, JSON.stringify(all));
}
