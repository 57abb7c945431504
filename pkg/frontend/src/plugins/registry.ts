/** Per-use-case visualization plug-ins.
 *
 * A plug-in maps a use-case key to a view factory; when the exploration
 * panel opens a result whose task belongs to that use case, the custom view
 * is offered alongside the built-in matrix. Registration is a plain manifest
 * call, so bundles can ship views for the use cases they care about.
 */

import { FabricApi } from "../api/client";
import { VariableProfileJson } from "../api/types";

export interface PluginContext {
  resultRef: string;
  taskId: string;
  useCaseKey: string;
  profiles: VariableProfileJson[];
  /** Parsed rows of the result table, column name -> values. */
  columns: Map<string, string[]>;
  api: FabricApi;
}

export type ViewFactory = (context: PluginContext) => HTMLElement;

const registry = new Map<string, ViewFactory>();

export function registerView(useCaseKey: string, factory: ViewFactory): void {
  registry.set(useCaseKey, factory);
}

export function viewFor(useCaseKey: string): ViewFactory | undefined {
  return registry.get(useCaseKey);
}

export function registeredUseCases(): string[] {
  return [...registry.keys()];
}

export function clearViews(): void {
  registry.clear();
}
