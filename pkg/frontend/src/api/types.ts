/** Wire types for the middleware's /v1 REST surface. */

// -- repository ---------------------------------------------------------------

export type RepoKind = "use_case" | "workflow" | "version" | "file";

export interface RepoEntry {
  path: string;
  kind: RepoKind;
  size_bytes: number | null;
  modified_at: number | null;
  writable_by_caller: boolean;
}

export interface RepoListing {
  entries: RepoEntry[];
}

export interface UseCaseCreated {
  key: string;
  name: string;
  owner: string;
  site_ids: string[];
  created_at: number;
}

export interface ConfigSummary {
  ok: boolean;
  workflow_name: string;
  sites: string[];
  steps: number;
  max_iterations: number;
}

// -- tasks --------------------------------------------------------------------

export type TaskStateName =
  | "Queued"
  | "Queuing"
  | "Created"
  | "Sending"
  | "Sent"
  | "Complete"
  | "Canceled"
  | "Failed";

export const TERMINAL_TASK_STATES: ReadonlySet<TaskStateName> = new Set([
  "Complete",
  "Canceled",
  "Failed",
]);

export interface LogEntryJson {
  timestamp: number;
  time: string;
  stream: "runtime" | "error";
  checkpoint: string | null;
  message: string;
  line: string;
}

export interface TaskInfo {
  task_id: string;
  user: string;
  use_case_key: string;
  version_path: string;
  state: TaskStateName;
  progress: number;
  result_ref: string | null;
  parameters: Record<string, unknown>;
  checkpoints: LogEntryJson[];
}

export interface TaskList {
  tasks: TaskInfo[];
}

export interface LogEntries {
  entries: LogEntryJson[];
}

/** One frame of the task log SSE stream. */
export interface LogEvent {
  kind: "checkpoint" | "log";
  line: string;
}

export interface ResultManifest {
  result_ref: string;
  manifest: {
    task_id: string;
    iterations: number;
    metric_history?: number[];
    files: { path: string; sha256: string; size_bytes: number }[];
    [key: string]: unknown;
  };
}

// -- result analytics ---------------------------------------------------------

export interface NumericStatsJson {
  min: number;
  max: number;
  mean: number;
  std: number;
}

export interface CategoricalStatsJson {
  distinct_count: number;
  frequencies: Record<string, number>;
}

export type ColTypeName = "numeric" | "categorical" | "temporal" | "geospatial";

export interface VariableProfileJson {
  name: string;
  type: ColTypeName;
  missing_count: number;
  /** Absent when every value is missing. */
  stats?: NumericStatsJson | CategoricalStatsJson;
}

export interface ProfileResponse {
  table: string;
  row_count: number;
  sampled_rows: number;
  profiles: VariableProfileJson[];
}

export interface CorrelationEntryJson {
  a: string;
  b: string;
  r: number | null;
  /** Present only when r is defined. */
  color?: string;
  label?: "good" | "moderate" | "poor";
}

export interface CorrelationsResponse {
  table: string;
  variables: string[];
  sampled_rows: number;
  entries: CorrelationEntryJson[];
}

export type TransformAction =
  | { kind: "scale"; var: string; factor: number | "standardize" }
  | { kind: "summarize"; var: string; stat: string }
  | { kind: "formula"; new_var: string; expression: string };

export interface TransformProfileJson {
  name?: string;
  actions: TransformAction[];
  thresholds?: { good: number; moderate: number };
}

export interface TransformResponse {
  table: string;
  csv: string;
  manifest: Record<string, unknown>;
  profiles: VariableProfileJson[];
}

export interface RecommendationJson {
  kind: string;
  variables: string[];
  reason: string;
}

export interface RecommendationsResponse {
  recommendations: RecommendationJson[];
}

// -- administration -----------------------------------------------------------

export interface IssuedKey {
  key_id: string;
  secret: string;
  user: string;
}

export interface PermissionGranted {
  ok: boolean;
  user: string;
  resource: string;
  actions: string[];
}

// -- errors -------------------------------------------------------------------

/** Body every non-2xx fabric response carries. */
export interface ErrorBody {
  code: string;
  message: string;
  detail?: unknown;
}
