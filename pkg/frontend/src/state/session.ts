/** Session credentials live in this module's memory and nowhere else — they
 * are never written to localStorage, sessionStorage, or cookies, so closing
 * the tab forgets them. */

import { FabricApi, FetchLike } from "../api/client";
import { Credential } from "../api/signing";

export interface Session {
  api: FabricApi;
  user: string;
  endpoint: string;
}

let current: Session | null = null;

export function openSession(
  endpoint: string,
  user: string,
  credential: Credential,
  fetchImpl?: FetchLike,
): Session {
  current = { api: new FabricApi(endpoint, credential, fetchImpl), user, endpoint };
  return current;
}

export function activeSession(): Session {
  if (!current) throw new Error("not signed in");
  return current;
}

export function hasSession(): boolean {
  return current !== null;
}

export function closeSession(): void {
  current = null;
}
