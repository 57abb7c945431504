/** Request signing for the fabric API.
 *
 * Every request carries three headers: the key id, a decimal epoch-seconds
 * timestamp, and an HMAC-SHA-256 signature over a canonical string of the
 * lowercase method, the exact URL path (query string excluded), the hex
 * SHA-256 of the body, and the timestamp, joined by newlines. The MAC key is
 * the SHA-256 digest of key id concatenated with the secret, so the raw
 * secret never leaves this module once loaded.
 *
 * Uses Web Crypto, which is available in browsers and in Node >= 19.
 */

export const KEY_ID_HEADER = "X-Fabric-Key-Id";
export const TIMESTAMP_HEADER = "X-Fabric-Timestamp";
export const SIGNATURE_HEADER = "X-Fabric-Signature";

const encoder = new TextEncoder();

function hex(buffer: ArrayBuffer): string {
  return Array.from(new Uint8Array(buffer))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

export async function sha256Hex(data: Uint8Array): Promise<string> {
  return hex(await crypto.subtle.digest("SHA-256", data as BufferSource));
}

export async function canonicalRequest(
  method: string,
  path: string,
  body: Uint8Array,
  timestamp: number,
): Promise<string> {
  const digest = await sha256Hex(body);
  return [method.toLowerCase(), path, digest, String(Math.trunc(timestamp))].join("\n");
}

async function macKey(keyId: string, secret: string): Promise<CryptoKey> {
  const seed = await crypto.subtle.digest(
    "SHA-256",
    encoder.encode(keyId + secret),
  );
  return crypto.subtle.importKey(
    "raw",
    seed,
    { name: "HMAC", hash: "SHA-256" },
    false,
    ["sign"],
  );
}

export interface Credential {
  keyId: string;
  secret: string;
}

export async function signedHeaders(
  credential: Credential,
  method: string,
  path: string,
  body: Uint8Array = new Uint8Array(0),
  timestamp?: number,
): Promise<Record<string, string>> {
  const ts = Math.trunc(timestamp ?? Date.now() / 1000);
  const canonical = await canonicalRequest(method, path, body, ts);
  const key = await macKey(credential.keyId, credential.secret);
  const signature = hex(
    await crypto.subtle.sign("HMAC", key, encoder.encode(canonical)),
  );
  return {
    [KEY_ID_HEADER]: credential.keyId,
    [TIMESTAMP_HEADER]: String(ts),
    [SIGNATURE_HEADER]: signature,
  };
}
