/** Spawns the loopback fabric fixture (middleware + one data-site agent,
 * real processes on real sockets) and yields its connection details. */

import { spawn } from "node:child_process";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

export interface LiveFabric {
  endpoint: string;
  keyId: string;
  secret: string;
  user: string;
  stop(): Promise<void>;
}

export async function startLiveFabric(): Promise<LiveFabric> {
  const here = dirname(fileURLToPath(import.meta.url));
  const child = spawn("python3", [join(here, "serve_fixture.py")], {
    stdio: ["pipe", "pipe", "pipe"],
  });
  const stderr: string[] = [];
  child.stderr!.on("data", (chunk) => stderr.push(String(chunk)));

  const line = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    const onData = (chunk: Buffer): void => {
      buffer += String(chunk);
      const newline = buffer.indexOf("\n");
      if (newline >= 0) {
        child.stdout!.off("data", onData);
        clearTimeout(deadline);
        resolve(buffer.slice(0, newline));
      }
    };
    const deadline = setTimeout(() => {
      reject(
        new Error(`fabric fixture never reported readiness\n${stderr.join("")}`),
      );
    }, 45_000);
    child.stdout!.on("data", onData);
    child.once("exit", (code) => {
      clearTimeout(deadline);
      reject(
        new Error(
          `fabric fixture exited early (code ${code}):\n${stderr.join("")}`,
        ),
      );
    });
  });

  const info = JSON.parse(line) as {
    endpoint: string;
    key_id: string;
    secret: string;
    user: string;
  };
  return {
    endpoint: info.endpoint,
    keyId: info.key_id,
    secret: info.secret,
    user: info.user,
    stop: () =>
      new Promise<void>((resolve) => {
        const hardKill = setTimeout(() => {
          child.kill("SIGKILL");
          resolve();
        }, 10_000);
        child.once("exit", () => {
          clearTimeout(hardKill);
          resolve();
        });
        child.stdin!.end();
      }),
  };
}
