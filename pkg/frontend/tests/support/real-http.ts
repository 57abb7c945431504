/** Fetch over node:http, so suites running under the DOM test environment
 * (whose own fetch is virtual) can talk to a live server. Implements exactly
 * the Response surface the API client touches, including a streaming body
 * reader so server-sent events arrive as they are written. */

import { request } from "node:http";
import type { FetchLike } from "../../src/api/client";

export const realHttpFetch: FetchLike = (url, init) =>
  new Promise((resolve, reject) => {
    const target = new URL(url);
    const req = request(
      {
        hostname: target.hostname,
        port: target.port,
        path: target.pathname + target.search,
        method: init.method ?? "GET",
        headers: (init.headers as Record<string, string>) ?? {},
      },
      (res) => {
        const chunks: Uint8Array[] = [];
        let ended = false;
        const waiters: (() => void)[] = [];
        const wake = (): void => {
          for (const waiter of waiters.splice(0)) waiter();
        };
        res.on("data", (chunk: Buffer) => {
          chunks.push(new Uint8Array(chunk));
          wake();
        });
        res.on("end", () => {
          ended = true;
          wake();
        });
        res.on("error", () => {
          ended = true;
          wake();
        });

        const read = async (): Promise<{ done: boolean; value?: Uint8Array }> => {
          for (;;) {
            const chunk = chunks.shift();
            if (chunk) return { done: false, value: chunk };
            if (ended) return { done: true };
            await new Promise<void>((resume) => waiters.push(resume));
          }
        };
        const whole = async (): Promise<Uint8Array> => {
          const parts: Uint8Array[] = [];
          for (;;) {
            const { done, value } = await read();
            if (done) break;
            if (value) parts.push(value);
          }
          const merged = new Uint8Array(parts.reduce((n, p) => n + p.length, 0));
          let at = 0;
          for (const part of parts) {
            merged.set(part, at);
            at += part.length;
          }
          return merged;
        };

        const status = res.statusCode ?? 0;
        resolve({
          ok: status >= 200 && status < 300,
          status,
          headers: {
            get(name: string): string | null {
              const value = res.headers[name.toLowerCase()];
              return Array.isArray(value) ? value[0] ?? null : value ?? null;
            },
          },
          async json(): Promise<unknown> {
            return JSON.parse(new TextDecoder().decode(await whole()));
          },
          async arrayBuffer(): Promise<ArrayBuffer> {
            const merged = await whole();
            return merged.buffer as ArrayBuffer;
          },
          body: { getReader: () => ({ read, releaseLock() {} }) },
        } as unknown as Response);
      },
    );
    req.on("error", reject);
    const body = init.body as Uint8Array | undefined;
    if (body !== undefined) req.end(Buffer.from(body));
    else req.end();
  });
