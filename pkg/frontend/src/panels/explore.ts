/** Visual exploration of a result table.
 *
 * Left: the variable panel — every column with its profile; numeric
 * variables feed the correlation matrix, categorical ones preview as
 * frequency bars. Right: the visualization panel — the lower-triangular
 * correlation matrix, one cell per variable pair colored by coefficient.
 * Hovering previews (a cell previews the pair's scatter, a categorical
 * variable its bar chart); clicking pins the preview. Transformation
 * controls replay named action lists server-side and preview the returned
 * table. Use cases may register custom views that appear as an extra tab.
 */

import { FabricApi } from "../api/client";
import {
  CorrelationEntryJson,
  RecommendationJson,
  TaskInfo,
  TransformAction,
  TransformProfileJson,
  VariableProfileJson,
} from "../api/types";
import {
  deleteProfile,
  savedProfiles,
  saveProfile,
  ViewStateStore,
} from "../state/store";
import { renderBars } from "../viz/bars";
import { renderMatrix } from "../viz/matrix";
import { renderScatter } from "../viz/scatter";
import { levelCounts, numericPairs, parseCsv } from "../viz/table";
import { viewFor } from "../plugins/registry";

export class ExplorationPanel {
  readonly root: HTMLElement;
  private task: TaskInfo | null = null;
  private resultRef: string | null = null;
  private tableName: string | null = null;
  private columns = new Map<string, string[]>();
  private profiles: VariableProfileJson[] = [];
  private variables: string[] = [];
  private entries: CorrelationEntryJson[] = [];
  private recommendations: RecommendationJson[] = [];
  private pinnedChart: Element | null = null;

  private variablePane: HTMLElement;
  private vizPane: HTMLElement;
  private previewPane: HTMLElement;
  private transformPane: HTMLElement;
  private pluginPane: HTMLElement;
  private statusEl: HTMLElement;

  constructor(
    private readonly api: FabricApi,
    private readonly store: ViewStateStore,
  ) {
    this.root = document.createElement("section");
    this.root.className = "panel explore-panel";
    this.root.innerHTML = `
      <header class="panel-header">
        <h2>Exploration</h2>
        <span class="explore-status">No result loaded</span>
      </header>
      <div class="explore-body">
        <aside class="variable-pane"></aside>
        <div class="viz-stack">
          <div class="viz-pane"></div>
          <div class="preview-pane"></div>
          <div class="transform-pane"></div>
          <div class="plugin-pane" hidden></div>
        </div>
      </div>
    `;
    this.variablePane = this.root.querySelector(".variable-pane")!;
    this.vizPane = this.root.querySelector(".viz-pane")!;
    this.previewPane = this.root.querySelector(".preview-pane")!;
    this.transformPane = this.root.querySelector(".transform-pane")!;
    this.pluginPane = this.root.querySelector(".plugin-pane")!;
    this.statusEl = this.root.querySelector(".explore-status")!;
  }

  /** Load a completed task's result table and render every pane. */
  async openResult(task: TaskInfo): Promise<void> {
    if (!task.result_ref) throw new Error("task has no stored result");
    this.task = task;
    this.resultRef = task.result_ref;
    this.store.setExploration({ resultRef: task.result_ref });

    const [correlations, profile, recs] = await Promise.all([
      this.api.getCorrelations(task.result_ref),
      this.api.getProfile(task.result_ref),
      this.api.getRecommendations(task.result_ref),
    ]);
    this.tableName = correlations.table;
    this.variables = correlations.variables;
    this.entries = correlations.entries;
    this.profiles = profile.profiles;
    this.recommendations = recs.recommendations;

    const csv = await this.api.getResultFile(task.task_id, correlations.table);
    this.columns = parseCsv(new TextDecoder().decode(csv));

    this.statusEl.textContent = `${task.task_id} · ${correlations.table}`;
    this.seedFromRecommendations();
    this.renderAll();
  }

  /** The first recommendation picks the opening visualization and pins its
   * variables, so the panel starts on something worth looking at. */
  private seedFromRecommendations(): void {
    const state = this.store.get().exploration;
    const top = this.recommendations[0];
    if (!top || state.selectedVariables.length > 0) return;
    this.store.setExploration({
      selectedVariables: [...top.variables],
      visualization: top.kind,
    });
  }

  private renderAll(): void {
    this.renderVariables();
    this.renderMatrixPane();
    this.renderTransformPane();
    this.renderPluginPane();
    this.restorePinned();
  }

  // -- variable panel ---------------------------------------------------------

  private renderVariables(): void {
    const pinned = new Set(this.store.get().exploration.selectedVariables);
    const list = document.createElement("ul");
    list.className = "variable-list";
    for (const profile of this.profiles) {
      const item = document.createElement("li");
      item.className = "variable-item" + (pinned.has(profile.name) ? " pinned" : "");
      item.dataset.variable = profile.name;
      item.dataset.type = profile.type;

      const name = document.createElement("span");
      name.className = "variable-name";
      name.textContent = profile.name;
      const kind = document.createElement("span");
      kind.className = "variable-type";
      kind.textContent = profile.type;
      const summary = document.createElement("span");
      summary.className = "variable-summary";
      summary.textContent = describeProfile(profile);
      item.append(name, kind, summary);

      if (profile.type === "categorical") {
        item.addEventListener("mouseenter", () => {
          this.showPreview(renderBars({
            name: profile.name,
            counts: levelCounts(this.columns, profile.name),
          }));
        });
        item.addEventListener("mouseleave", () => this.restorePinned());
      }
      item.addEventListener("click", () => {
        if (profile.type === "categorical") {
          this.pin(renderBars({
            name: profile.name,
            counts: levelCounts(this.columns, profile.name),
          }));
        }
        this.store.togglePinnedVariable(profile.name);
        this.renderVariables();
      });
      list.append(item);
    }
    const heading = document.createElement("h3");
    heading.textContent = "Variables";
    this.variablePane.replaceChildren(heading, list, this.renderRecommendations());
  }

  private renderRecommendations(): HTMLElement {
    const box = document.createElement("div");
    box.className = "recommendations";
    const heading = document.createElement("h3");
    heading.textContent = "Suggested views";
    box.append(heading);
    for (const rec of this.recommendations) {
      const row = document.createElement("button");
      row.type = "button";
      row.className = "recommendation";
      row.dataset.kind = rec.kind;
      row.textContent = `${rec.kind}: ${rec.variables.join(", ")}`;
      row.title = rec.reason;
      row.addEventListener("click", () => {
        this.store.setExploration({
          selectedVariables: [...rec.variables],
          visualization: rec.kind,
        });
        this.renderVariables();
        this.applyRecommendation(rec);
      });
      box.append(row);
    }
    return box;
  }

  private applyRecommendation(rec: RecommendationJson): void {
    const [a, b] = rec.variables;
    if (rec.kind === "scatter" && a && b) {
      this.pin(renderScatter({
        xName: a,
        yName: b,
        points: numericPairs(this.columns, a, b),
      }));
    } else if (a && this.profileOf(a)?.type === "categorical") {
      this.pin(renderBars({ name: a, counts: levelCounts(this.columns, a) }));
    }
  }

  private profileOf(name: string): VariableProfileJson | undefined {
    return this.profiles.find((p) => p.name === name);
  }

  // -- matrix + previews ------------------------------------------------------

  private renderMatrixPane(): void {
    const matrix = renderMatrix(this.variables, this.entries, {
      onHover: (entry) => this.previewPair(entry),
      onPin: (entry) => this.pinPair(entry),
    });
    const note = document.createElement("p");
    note.className = "matrix-note";
    note.textContent =
      `${this.variables.length} numeric variables · ` +
      `${this.entries.length} pairs · hover a cell to preview, click to pin`;
    this.vizPane.replaceChildren(matrix, note);
    const matrixLeave = () => this.restorePinned();
    matrix.addEventListener("mouseleave", matrixLeave);
  }

  private pairScatter(entry: CorrelationEntryJson): SVGSVGElement {
    return renderScatter({
      xName: entry.b,
      yName: entry.a,
      points: numericPairs(this.columns, entry.b, entry.a),
    });
  }

  previewPair(entry: CorrelationEntryJson): void {
    this.showPreview(this.pairScatter(entry));
  }

  pinPair(entry: CorrelationEntryJson): void {
    this.pin(this.pairScatter(entry));
  }

  private showPreview(chart: Element): void {
    this.previewPane.replaceChildren(chart);
  }

  private pin(chart: Element): void {
    this.pinnedChart = chart;
    this.showPreview(chart);
  }

  restorePinned(): void {
    if (this.pinnedChart) this.showPreview(this.pinnedChart);
    else this.previewPane.replaceChildren();
  }

  // -- transformations --------------------------------------------------------

  private renderTransformPane(): void {
    this.transformPane.innerHTML = `
      <h3>Transform</h3>
      <form class="transform-form">
        <select class="t-var"></select>
        <select class="t-action">
          <option value="scale">scale by factor</option>
          <option value="standardize">standardize</option>
          <option value="formula">formula column</option>
        </select>
        <input class="t-arg" placeholder="factor or expression" />
        <button type="submit" class="t-apply">Apply</button>
      </form>
      <div class="profile-controls">
        <input class="profile-name" placeholder="profile name" />
        <button type="button" class="profile-save">Save profile</button>
        <select class="profile-pick"></select>
        <button type="button" class="profile-load">Replay</button>
        <button type="button" class="profile-delete">Delete</button>
      </div>
      <div class="transform-status"></div>
    `;
    const varSelect = this.transformPane.querySelector(".t-var") as HTMLSelectElement;
    for (const profile of this.profiles) {
      const option = document.createElement("option");
      option.value = profile.name;
      option.textContent = profile.name;
      varSelect.append(option);
    }
    this.refreshProfilePicker();
    this.transformPane.querySelector(".transform-form")!
      .addEventListener("submit", (event) => {
        event.preventDefault();
        void this.applyFormTransform();
      });
    this.transformPane.querySelector(".profile-save")!
      .addEventListener("click", () => this.saveCurrentProfile());
    this.transformPane.querySelector(".profile-load")!
      .addEventListener("click", () => void this.replaySavedProfile());
    this.transformPane.querySelector(".profile-delete")!
      .addEventListener("click", () => {
        const pick = this.transformPane.querySelector(".profile-pick") as HTMLSelectElement;
        if (pick.value) deleteProfile(pick.value);
        this.refreshProfilePicker();
      });
  }

  private refreshProfilePicker(): void {
    const pick = this.transformPane.querySelector(".profile-pick") as HTMLSelectElement;
    pick.replaceChildren();
    for (const name of Object.keys(savedProfiles())) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      pick.append(option);
    }
  }

  private formAction(): TransformAction | null {
    const variable = (this.transformPane.querySelector(".t-var") as HTMLSelectElement).value;
    const action = (this.transformPane.querySelector(".t-action") as HTMLSelectElement).value;
    const arg = (this.transformPane.querySelector(".t-arg") as HTMLInputElement).value;
    if (action === "scale") {
      const factor = Number.parseFloat(arg);
      if (!Number.isFinite(factor)) return null;
      return { kind: "scale", var: variable, factor };
    }
    if (action === "standardize") {
      return { kind: "scale", var: variable, factor: "standardize" };
    }
    if (action === "formula" && arg) {
      return { kind: "formula", new_var: variable ? `${variable}_f` : "derived", expression: arg };
    }
    return null;
  }

  async applyFormTransform(): Promise<void> {
    const action = this.formAction();
    if (!action) {
      this.setTransformStatus("enter a numeric factor or an expression");
      return;
    }
    await this.applyTransformProfile({ actions: [action] });
  }

  /** POST a profile and preview the transformed table it returns; the stored
   * result itself is immutable. */
  async applyTransformProfile(profile: TransformProfileJson): Promise<void> {
    if (!this.resultRef) return;
    this.store.setExploration({ activeTransform: profile });
    const response = await this.api.applyTransform(
      this.resultRef,
      profile,
      this.tableName ?? undefined,
    );
    this.columns = parseCsv(response.csv);
    this.profiles = response.profiles;
    this.setTransformStatus(
      `applied ${profile.actions.length} action(s); previewing transformed table`,
    );
    this.renderVariables();
  }

  private saveCurrentProfile(): void {
    const nameInput = this.transformPane.querySelector(".profile-name") as HTMLInputElement;
    const active = this.store.get().exploration.activeTransform;
    if (!nameInput.value || !active) {
      this.setTransformStatus("apply a transform first, then name it");
      return;
    }
    saveProfile(nameInput.value, { ...active, name: nameInput.value });
    this.refreshProfilePicker();
    this.setTransformStatus(`saved profile ${nameInput.value}`);
  }

  private async replaySavedProfile(): Promise<void> {
    const pick = this.transformPane.querySelector(".profile-pick") as HTMLSelectElement;
    const profile = savedProfiles()[pick.value];
    if (profile) await this.applyTransformProfile(profile);
  }

  private setTransformStatus(text: string): void {
    this.transformPane.querySelector(".transform-status")!.textContent = text;
  }

  // -- plug-in views ----------------------------------------------------------

  private renderPluginPane(): void {
    if (!this.task || !this.resultRef) return;
    const factory = viewFor(this.task.use_case_key);
    if (!factory) {
      this.pluginPane.hidden = true;
      this.pluginPane.replaceChildren();
      return;
    }
    const heading = document.createElement("h3");
    heading.textContent = `Custom view: ${this.task.use_case_key}`;
    const view = factory({
      resultRef: this.resultRef,
      taskId: this.task.task_id,
      useCaseKey: this.task.use_case_key,
      profiles: this.profiles,
      columns: this.columns,
      api: this.api,
    });
    this.pluginPane.hidden = false;
    this.pluginPane.replaceChildren(heading, view);
  }
}

function describeProfile(profile: VariableProfileJson): string {
  const stats = profile.stats;
  if (stats && "mean" in stats) {
    return `mean ${short(stats.mean)} · [${short(stats.min)}, ${short(stats.max)}]`;
  }
  if (stats && "distinct_count" in stats) {
    const n = stats.distinct_count;
    return `${n} level${n === 1 ? "" : "s"}`;
  }
  return profile.missing_count > 0 ? "all missing" : "";
}

function short(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return value.toPrecision(3);
}
