/** Typed client for the middleware /v1 API.
 *
 * This module is the UI's only doorway to the fabric: every byte the app
 * sends or receives goes through `FabricApi`, and `FabricApi` only ever
 * requests paths in `V1_ROUTES`. The fetch implementation is injectable so
 * tests can intercept or fake the transport.
 */

import { Credential, signedHeaders } from "./signing";
import {
  ConfigSummary,
  CorrelationsResponse,
  ErrorBody,
  IssuedKey,
  LogEntries,
  LogEvent,
  PermissionGranted,
  ProfileResponse,
  RecommendationsResponse,
  RepoEntry,
  RepoListing,
  ResultManifest,
  TaskInfo,
  TaskList,
  TransformProfileJson,
  TransformResponse,
  UseCaseCreated,
} from "./types";

/** Every path the client may request, beyond /healthz. */
export const V1_ROUTES: readonly RegExp[] = [
  /^\/v1\/usecases$/,
  /^\/v1\/repo$/,
  /^\/v1\/repo\/versions$/,
  /^\/v1\/repo\/duplicate$/,
  /^\/v1\/repo\/files$/,
  /^\/v1\/config\/validate$/,
  /^\/v1\/tasks$/,
  /^\/v1\/tasks\/[^/]+$/,
  /^\/v1\/tasks\/[^/]+\/cancel$/,
  /^\/v1\/tasks\/[^/]+\/rerun$/,
  /^\/v1\/tasks\/[^/]+\/logs$/,
  /^\/v1\/tasks\/[^/]+\/logs\/stream$/,
  /^\/v1\/tasks\/[^/]+\/result$/,
  /^\/v1\/results\/.+\/profile$/,
  /^\/v1\/results\/.+\/correlations$/,
  /^\/v1\/results\/.+\/transform$/,
  /^\/v1\/results\/.+\/recommendations$/,
  /^\/v1\/keys$/,
  /^\/v1\/permissions$/,
];

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
    this.name = "ApiError";
  }

  get code(): string {
    return this.body.code;
  }
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

const encoder = new TextEncoder();

function toQuery(params: Record<string, string | number | undefined>): string {
  const q = new URLSearchParams();
  for (const [key, value] of Object.entries(params)) {
    if (value !== undefined) q.set(key, String(value));
  }
  const rendered = q.toString();
  return rendered ? `?${rendered}` : "";
}

export interface FileDownload {
  data: Uint8Array;
  modifiedAt: number;
}

export class FabricApi {
  constructor(
    public readonly endpoint: string,
    private readonly credential: Credential,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  /** Sign and send; the signature covers the path without the query string. */
  private async request(
    method: string,
    path: string,
    options: {
      query?: Record<string, string | number | undefined>;
      body?: Uint8Array | object;
      accept?: string;
    } = {},
  ): Promise<Response> {
    let bodyBytes: Uint8Array = new Uint8Array(0);
    const headers: Record<string, string> = {};
    if (options.body !== undefined) {
      if (options.body instanceof Uint8Array) {
        bodyBytes = options.body;
        headers["Content-Type"] = "application/octet-stream";
      } else {
        bodyBytes = encoder.encode(JSON.stringify(options.body));
        headers["Content-Type"] = "application/json";
      }
    }
    Object.assign(headers, await signedHeaders(this.credential, method, path, bodyBytes));
    if (options.accept) headers["Accept"] = options.accept;
    const url = this.endpoint + path + toQuery(options.query ?? {});
    const response = await this.fetchImpl(url, {
      method,
      headers,
      body: options.body === undefined ? undefined : (bodyBytes as unknown as BodyInit),
    });
    if (!response.ok) {
      let body: ErrorBody;
      try {
        body = (await response.json()) as ErrorBody;
      } catch {
        body = { code: "TransportError", message: `HTTP ${response.status}` };
      }
      throw new ApiError(response.status, body);
    }
    return response;
  }

  private async json<T>(method: string, path: string, options: {
    query?: Record<string, string | number | undefined>;
    body?: Uint8Array | object;
  } = {}): Promise<T> {
    const response = await this.request(method, path, options);
    return (await response.json()) as T;
  }

  // -- repository -------------------------------------------------------------

  createUseCase(name: string, siteIds: string[], root: "shared" | "user" = "shared"):
      Promise<UseCaseCreated> {
    return this.json("POST", "/v1/usecases", {
      body: { name, site_ids: siteIds, root },
    });
  }

  async listRepo(path: string): Promise<RepoEntry[]> {
    const listing = await this.json<RepoListing>("GET", "/v1/repo", {
      query: { path },
    });
    return listing.entries;
  }

  async addVersion(workflowPath: string): Promise<string> {
    const body = await this.json<{ path: string }>("POST", "/v1/repo/versions", {
      body: { path: workflowPath },
    });
    return body.path;
  }

  async duplicate(path: string): Promise<string> {
    const body = await this.json<{ path: string }>("POST", "/v1/repo/duplicate", {
      body: { path },
    });
    return body.path;
  }

  putFile(
    path: string,
    content: Uint8Array | string,
    expectedModifiedAt?: number,
  ): Promise<RepoEntry> {
    const data = typeof content === "string" ? encoder.encode(content) : content;
    return this.json("PUT", "/v1/repo/files", {
      query: { path, expected_modified_at: expectedModifiedAt },
      body: data,
    });
  }

  async getFile(path: string): Promise<FileDownload> {
    const response = await this.request("GET", "/v1/repo/files", {
      query: { path },
    });
    const modifiedAt = Number.parseFloat(
      response.headers.get("X-Fabric-Modified-At") ?? "0",
    );
    return { data: new Uint8Array(await response.arrayBuffer()), modifiedAt };
  }

  validateConfig(text: string, versionPath?: string): Promise<ConfigSummary> {
    return this.json("POST", "/v1/config/validate", {
      body: { text, version_path: versionPath },
    });
  }

  // -- tasks ------------------------------------------------------------------

  submitTask(versionPath: string, overrides: Record<string, unknown> = {}):
      Promise<TaskInfo> {
    return this.json("POST", "/v1/tasks", {
      body: { version_path: versionPath, overrides },
    });
  }

  async listTasks(): Promise<TaskInfo[]> {
    const body = await this.json<TaskList>("GET", "/v1/tasks");
    return body.tasks;
  }

  getTask(taskId: string): Promise<TaskInfo> {
    return this.json("GET", `/v1/tasks/${taskId}`);
  }

  cancelTask(taskId: string): Promise<TaskInfo> {
    return this.json("POST", `/v1/tasks/${taskId}/cancel`, { body: {} });
  }

  rerunTask(taskId: string, overrides: Record<string, unknown> = {}):
      Promise<TaskInfo> {
    return this.json("POST", `/v1/tasks/${taskId}/rerun`, {
      body: { overrides },
    });
  }

  async getLogs(taskId: string, stream?: "runtime" | "error"):
      Promise<LogEntries> {
    return this.json("GET", `/v1/tasks/${taskId}/logs`, {
      query: { stream },
    });
  }

  /** Server-sent checkpoint/log events, yielded as they arrive. */
  async *streamLogs(taskId: string): AsyncGenerator<LogEvent> {
    const response = await this.request(
      "GET",
      `/v1/tasks/${taskId}/logs/stream`,
      { accept: "text/event-stream" },
    );
    if (!response.body) throw new Error("log stream has no body");
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let sep;
        while ((sep = buffer.indexOf("\n\n")) >= 0) {
          const frame = buffer.slice(0, sep);
          buffer = buffer.slice(sep + 2);
          const event = parseSseFrame(frame);
          if (event) yield event;
        }
      }
    } finally {
      reader.releaseLock();
    }
  }

  getResult(taskId: string): Promise<ResultManifest> {
    return this.json("GET", `/v1/tasks/${taskId}/result`);
  }

  async getResultFile(taskId: string, file: string): Promise<Uint8Array> {
    const response = await this.request("GET", `/v1/tasks/${taskId}/result`, {
      query: { file },
    });
    return new Uint8Array(await response.arrayBuffer());
  }

  // -- result analytics -------------------------------------------------------

  getProfile(resultRef: string, file?: string): Promise<ProfileResponse> {
    return this.json("GET", `/v1/results/${resultRef}/profile`, {
      query: { file },
    });
  }

  getCorrelations(
    resultRef: string,
    options: { file?: string; good?: number; moderate?: number } = {},
  ): Promise<CorrelationsResponse> {
    return this.json("GET", `/v1/results/${resultRef}/correlations`, {
      query: { file: options.file, good: options.good, moderate: options.moderate },
    });
  }

  applyTransform(
    resultRef: string,
    profile: TransformProfileJson,
    file?: string,
  ): Promise<TransformResponse> {
    return this.json("POST", `/v1/results/${resultRef}/transform`, {
      body: { profile, file },
    });
  }

  getRecommendations(resultRef: string, vars?: string[], file?: string):
      Promise<RecommendationsResponse> {
    return this.json("GET", `/v1/results/${resultRef}/recommendations`, {
      query: { vars: vars?.length ? vars.join(",") : undefined, file },
    });
  }

  // -- administration ---------------------------------------------------------

  issueKey(
    user: string,
    options: { roles?: string[]; admin?: boolean; ttlSeconds?: number } = {},
  ): Promise<IssuedKey> {
    return this.json("POST", "/v1/keys", {
      body: {
        user,
        roles: options.roles,
        admin: options.admin ?? false,
        ttl_seconds: options.ttlSeconds,
      },
    });
  }

  grantPermission(user: string, resource: string, actions: string[]):
      Promise<PermissionGranted> {
    return this.json("POST", "/v1/permissions", {
      body: { user, resource, actions },
    });
  }
}

export function parseSseFrame(frame: string): LogEvent | null {
  let kind: LogEvent["kind"] | null = null;
  const data: string[] = [];
  for (const raw of frame.split("\n")) {
    if (raw.startsWith("event:")) {
      const name = raw.slice("event:".length).trim();
      if (name === "checkpoint" || name === "log") kind = name;
    } else if (raw.startsWith("data:")) {
      let value = raw.slice("data:".length);
      if (value.startsWith(" ")) value = value.slice(1);
      data.push(value);
    }
  }
  if (kind === null || data.length === 0) return null;
  return { kind, line: data.join("\n") };
}
