"""Wire format helpers for step transport between middleware and data sites.

A step travels as multipart content: one JSON ``manifest`` part describing the
StepBundle, plus one binary part per script (``script:<name>``) and per input
artifact (``artifact:<name>``). Responses come back the same way — a JSON
manifest describing the StepOutput plus one part per produced artifact.

Requests ride on ordinary ``multipart/form-data`` (sent with httpx, parsed by
the agent's form handling). Responses are ``multipart/mixed`` built and parsed
here with the stdlib email machinery, base64-encoded so arbitrary bytes
survive.
"""

from __future__ import annotations

import json
import secrets
from email.message import EmailMessage
from email.parser import BytesParser
from email.policy import default as default_policy
from typing import Mapping

from .errors import ParseError
from .model import Command, StepBundle, StepOutput

SCRIPT_PREFIX = "script:"
ARTIFACT_PREFIX = "artifact:"
COMMAND_FILE = "command"


# -- command files ------------------------------------------------------------

def command_file_bytes(command: Command, iteration: int) -> bytes:
    return f"COMMAND={command.value}\nITERATION={iteration}\n".encode()


def parse_command_file(data: bytes) -> tuple[Command, int]:
    fields = {}
    for line in data.decode().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        return Command(fields["COMMAND"]), int(fields["ITERATION"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"malformed command file: {exc}") from None


# -- bundle <-> manifest ------------------------------------------------------

def bundle_manifest(bundle: StepBundle) -> dict:
    """Metadata part of a step request; script/input bytes ride as parts."""
    return {
        "task_id": bundle.task_id,
        "iteration": bundle.iteration,
        "site_id": bundle.site_id,
        "step_key": bundle.step_key,
        "entry_script": bundle.entry_script,
        "scripts": sorted(bundle.scripts),
        "params": dict(bundle.params),
        "command": bundle.command.value,
        "inputs": sorted(bundle.inputs),
        "user": bundle.user,
        "dataset_ids": list(bundle.dataset_ids),
        "keep_local_copy": bundle.keep_local_copy,
        "timestamp_results": bundle.timestamp_results,
    }


def bundle_from_manifest(manifest: Mapping, scripts: Mapping[str, bytes],
                         inputs: Mapping[str, bytes]) -> StepBundle:
    try:
        return StepBundle(
            task_id=manifest["task_id"],
            iteration=int(manifest["iteration"]),
            site_id=manifest["site_id"],
            step_key=manifest["step_key"],
            entry_script=manifest["entry_script"],
            scripts=dict(scripts),
            params=dict(manifest["params"]),
            command=Command(manifest["command"]),
            inputs=dict(inputs),
            user=manifest["user"],
            dataset_ids=tuple(manifest["dataset_ids"]),
            keep_local_copy=bool(manifest["keep_local_copy"]),
            timestamp_results=bool(manifest["timestamp_results"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed step manifest: {exc}") from None


def output_manifest(output: StepOutput) -> dict:
    """Metadata part of a step response; artifact bytes ride as parts."""
    return {
        "task_id": output.task_id,
        "iteration": output.iteration,
        "site_id": output.site_id,
        "artifacts": sorted(output.artifacts),
        "metrics": dict(output.metrics),
        "local_copy_kept": output.local_copy_kept,
    }


def output_from_manifest(manifest: Mapping,
                         blobs: Mapping[str, bytes]) -> StepOutput:
    try:
        return StepOutput(
            task_id=manifest["task_id"],
            iteration=int(manifest["iteration"]),
            site_id=manifest["site_id"],
            artifacts=dict(blobs),
            metrics=dict(manifest["metrics"]),
            local_copy_kept=bool(manifest["local_copy_kept"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed step output manifest: {exc}") from None


# -- request encoding (multipart/form-data) -----------------------------------

def request_files(bundle: StepBundle) -> dict:
    """Form fields for posting this bundle: name -> (filename, bytes, type)."""
    files = {"manifest": ("manifest", json.dumps(bundle_manifest(bundle)).encode(),
                          "application/json")}
    for name, data in bundle.scripts.items():
        files[SCRIPT_PREFIX + name] = (name, data, "application/octet-stream")
    for name, data in bundle.inputs.items():
        files[ARTIFACT_PREFIX + name] = (name, data, "application/octet-stream")
    return files


def encode_form_data(fields: Mapping[str, tuple[str, bytes, str]]) -> tuple[str, bytes]:
    """Render multipart/form-data to concrete bytes up front, so the request
    body can be signed before it is sent."""
    payloads = [data for _, data, _ in fields.values()]
    while True:
        boundary = secrets.token_hex(16).encode()
        if not any(boundary in data for data in payloads):
            break
    chunks = []
    for name, (filename, data, ctype) in fields.items():
        chunks += [
            b"--" + boundary,
            (f'Content-Disposition: form-data; name="{name}"; '
             f'filename="{filename}"').encode(),
            f"Content-Type: {ctype}".encode(),
            b"",
            data,
        ]
    chunks += [b"--" + boundary + b"--", b""]
    body = b"\r\n".join(chunks)
    return f"multipart/form-data; boundary={boundary.decode()}", body


def split_form_parts(parts: Mapping[str, bytes]) -> tuple[dict, dict, dict]:
    """Agent side: split raw form fields into (manifest, scripts, inputs)."""
    if "manifest" not in parts:
        raise ParseError("missing 'manifest' part")
    try:
        manifest = json.loads(parts["manifest"])
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from None
    scripts, inputs = {}, {}
    for key, data in parts.items():
        if key.startswith(SCRIPT_PREFIX):
            scripts[key[len(SCRIPT_PREFIX):]] = data
        elif key.startswith(ARTIFACT_PREFIX):
            inputs[key[len(ARTIFACT_PREFIX):]] = data
    return manifest, scripts, inputs


# -- response encoding (multipart/mixed via email) ----------------------------

def encode_multipart(manifest: dict, blobs: Mapping[str, bytes]) -> tuple[str, bytes]:
    """Returns (content_type, body) for an HTTP response."""
    msg = EmailMessage()
    msg.make_mixed()
    head = EmailMessage()
    head.set_content(json.dumps(manifest, sort_keys=True),
                     subtype="json", charset="utf-8")
    head["X-Part-Name"] = "manifest"
    msg.attach(head)
    for name in sorted(blobs):
        part = EmailMessage()
        part.set_content(blobs[name], maintype="application",
                         subtype="octet-stream")
        part["X-Part-Name"] = name
        msg.attach(part)
    raw = msg.as_bytes()
    header_block, _, body = raw.partition(b"\n\n")
    content_type = ""
    for line in header_block.decode().replace("\r\n", "\n").split("\n"):
        if line.lower().startswith("content-type:"):
            content_type = line.partition(":")[2].strip()
        elif content_type and line[:1] in (" ", "\t"):
            content_type += " " + line.strip()  # folded header continuation
        elif content_type:
            break
    return content_type, body


def decode_multipart(content_type: str, body: bytes) -> tuple[dict, dict]:
    """Returns (manifest, blobs) from an HTTP response."""
    raw = (f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
           + body)
    msg = BytesParser(policy=default_policy).parsebytes(raw)
    if not msg.is_multipart():
        raise ParseError(f"expected multipart content, got {content_type!r}")
    manifest, blobs = None, {}
    for part in msg.iter_parts():
        name = part["X-Part-Name"]
        payload = part.get_payload(decode=True)
        if name == "manifest":
            try:
                manifest = json.loads(payload)
            except json.JSONDecodeError as exc:
                raise ParseError(f"manifest is not valid JSON: {exc}") from None
        elif name:
            blobs[name] = payload
    if manifest is None:
        raise ParseError("missing 'manifest' part")
    return manifest, blobs
