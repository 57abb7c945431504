"""Command-line client for the data fabric.

Most subcommands are a thin wrapper over the signed HTTP API; ``serve`` and
``agent serve`` bring up the middleware and a data-site agent locally.

Connection settings come from flags or the environment: ``FABRIC_ENDPOINT``,
``FABRIC_KEY_ID``, and ``FABRIC_SECRET_FILE`` (a file holding the key secret,
so it never appears in ``ps`` or shell history).

Exit codes: 0 on success, 1 when the service rejects the request or a local
operation fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .client import ApiError, FabricClient
from .errors import FabricError

PROG = "fabric"


# -- output ---------------------------------------------------------------------

def _use_tables(args) -> bool:
    return sys.stdout.isatty() and not getattr(args, "json", False)


def emit_json(data) -> None:
    json.dump(data, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


def render_table(rows: list[dict], columns: Sequence[str]) -> None:
    cells = [[_cell(row.get(col)) for col in columns] for row in rows]
    widths = [max([len(col)] + [len(r[i]) for r in cells])
              for i, col in enumerate(columns)]
    print("  ".join(col.upper().ljust(widths[i])
                    for i, col in enumerate(columns)).rstrip())
    for row in cells:
        print("  ".join(value.ljust(widths[i])
                        for i, value in enumerate(row)).rstrip())


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.3f}".rstrip("0").rstrip(".") or "0"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    return str(value)


def emit(args, data, rows: Optional[list[dict]] = None,
         columns: Optional[Sequence[str]] = None) -> None:
    """JSON when piped or ``--json``; a plain table on an interactive tty."""
    if _use_tables(args) and rows is not None and columns:
        render_table(rows, columns)
    else:
        emit_json(data)


TASK_COLUMNS = ("task_id", "state", "progress", "version_path", "user")


# -- connection -----------------------------------------------------------------

def build_client(args) -> FabricClient:
    endpoint = args.endpoint or os.environ.get("FABRIC_ENDPOINT")
    key_id = args.key_id or os.environ.get("FABRIC_KEY_ID")
    secret = None
    secret_file = args.secret_file or os.environ.get("FABRIC_SECRET_FILE")
    if secret_file:
        secret = Path(secret_file).read_text().strip()
    missing = [name for name, value in (
        ("--endpoint / FABRIC_ENDPOINT", endpoint),
        ("--key-id / FABRIC_KEY_ID", key_id),
        ("--secret-file / FABRIC_SECRET_FILE", secret)) if not value]
    if missing:
        print(f"{PROG}: missing connection settings: " + ", ".join(missing),
              file=sys.stderr)
        raise SystemExit(2)
    return FabricClient(endpoint, key_id, secret)


def parse_overrides(pairs: Optional[Sequence[str]]) -> dict:
    overrides = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            print(f"{PROG}: override {pair!r} is not KEY=VALUE",
                  file=sys.stderr)
            raise SystemExit(2)
        try:
            overrides[key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            overrides[key] = raw
    return overrides


# -- repository commands ---------------------------------------------------------

def cmd_usecase_create(args) -> int:
    client = build_client(args)
    created = client.create_use_case(args.name, list(args.site),
                                     root=args.root)
    emit(args, created, [created], ("name", "key", "owner", "site_ids"))
    return 0


def cmd_repo_ls(args) -> int:
    entries = build_client(args).repo_list(args.path)
    emit(args, {"entries": entries}, entries,
         ("path", "kind", "size_bytes", "writable_by_caller"))
    return 0


def cmd_repo_put(args) -> int:
    if args.local == "-":
        data = sys.stdin.buffer.read()
    else:
        data = Path(args.local).read_bytes()
    entry = build_client(args).put_file(args.path, data)
    emit(args, entry, [entry], ("path", "kind", "size_bytes"))
    return 0


def cmd_repo_get(args) -> int:
    data = build_client(args).get_file(args.path)
    if args.output and args.output != "-":
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def cmd_repo_dup(args) -> int:
    path = build_client(args).duplicate(args.path)
    print(path if _use_tables(args) else json.dumps({"path": path}))
    return 0


def cmd_repo_mkver(args) -> int:
    path = build_client(args).add_version(args.path)
    print(path if _use_tables(args) else json.dumps({"path": path}))
    return 0


# -- task commands ----------------------------------------------------------------

def _follow(args, client: FabricClient, task_id: str) -> int:
    for _, line in client.follow_logs(task_id):
        print(line, flush=True)
    final = client.task(task_id)
    return 0 if final["state"] == "Complete" else 1


def cmd_task_submit(args) -> int:
    client = build_client(args)
    task = client.submit_task(args.version_path, parse_overrides(args.param))
    if args.follow:
        print(task["task_id"], file=sys.stderr)
        return _follow(args, client, task["task_id"])
    emit(args, task, [task], TASK_COLUMNS)
    return 0


def cmd_task_ls(args) -> int:
    tasks = build_client(args).tasks()
    emit(args, {"tasks": tasks}, tasks, TASK_COLUMNS)
    return 0


def cmd_task_show(args) -> int:
    task = build_client(args).task(args.task_id)
    emit(args, task, [task], TASK_COLUMNS)
    return 0


def cmd_task_logs(args) -> int:
    client = build_client(args)
    if args.follow:
        return _follow(args, client, args.task_id)
    entries = client.logs(args.task_id, stream=args.stream)
    if _use_tables(args):
        for entry in entries:
            print(entry["line"])
    else:
        emit_json({"entries": entries})
    return 0


def cmd_task_cancel(args) -> int:
    task = build_client(args).cancel(args.task_id)
    emit(args, task, [task], TASK_COLUMNS)
    return 0


def cmd_task_rerun(args) -> int:
    client = build_client(args)
    task = client.rerun(args.task_id, parse_overrides(args.param))
    if args.follow:
        print(task["task_id"], file=sys.stderr)
        return _follow(args, client, task["task_id"])
    emit(args, task, [task], TASK_COLUMNS)
    return 0


def cmd_task_result(args) -> int:
    client = build_client(args)
    if args.fetch:
        data = client.result_file(args.task_id, args.fetch)
        if args.output and args.output != "-":
            Path(args.output).write_bytes(data)
        else:
            sys.stdout.buffer.write(data)
        return 0
    result = client.task_result(args.task_id)
    files = result["manifest"]["files"]
    emit(args, result, files, ("path", "size", "sha256"))
    return 0


# -- result analytics commands ----------------------------------------------------

def cmd_result_profile(args) -> int:
    report = build_client(args).profile(args.ref, file=args.file)
    rows = [{**p, **p.get("stats", {})} for p in report["profiles"]]
    emit(args, report, rows,
         ("name", "type", "missing_count", "mean", "std", "distinct_count"))
    return 0


def cmd_result_corr(args) -> int:
    report = build_client(args).correlations(args.ref, file=args.file,
                                             good=args.good,
                                             moderate=args.moderate)
    emit(args, report, report["entries"], ("a", "b", "r", "label", "color"))
    return 0


def cmd_result_recommend(args) -> int:
    report = build_client(args).recommendations(args.ref,
                                                variables=args.var,
                                                file=args.file)
    emit(args, report, report["recommendations"],
         ("kind", "variables", "reason"))
    return 0


# -- administration ----------------------------------------------------------------

def cmd_key_issue(args) -> int:
    issued = build_client(args).issue_key(args.user, roles=args.role,
                                          admin=args.admin,
                                          ttl_seconds=args.ttl)
    emit(args, issued, [issued], ("user", "key_id", "secret"))
    return 0


# -- local services ----------------------------------------------------------------

def load_site_credentials(path: str) -> dict:
    """Sites file: JSON mapping site id -> {endpoint, key_id, secret,
    datasets?}."""
    from .tasks import SiteCredential

    doc = json.loads(Path(path).read_text())
    sites = {}
    for site_id, entry in doc.items():
        sites[site_id] = SiteCredential(
            site_id=site_id, endpoint=entry["endpoint"],
            key_id=entry["key_id"], secret=entry["secret"],
            datasets=tuple(entry.get("datasets", ())))
    return sites


def build_middleware(root: Path, sites: dict, ui_dir=None):
    """Construct the middleware stores and app under ``root``; returns
    ``(app, bootstrap)`` where bootstrap is the initial admin (key_id,
    secret) on first run and None afterwards."""
    from .auth import AuthStore
    from .repo import RepoStore
    from .service import create_middleware_app
    from .tasks import TaskManager

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    auth_path = root / "auth.json"
    fresh = not auth_path.exists()
    auth = AuthStore(auth_path)
    bootstrap = auth.bootstrap("admin") if fresh else None
    repo = RepoStore(root / "repo", auth)
    manager = TaskManager(root / "tasks", repo, auth, sites=sites)
    app = create_middleware_app(repo, manager, auth, ui_dir=ui_dir)
    return app, bootstrap


def build_agent(site_id: str, root: Path):
    """Construct a data-site agent under ``root``; returns ``(app,
    bootstrap)`` as for :func:`build_middleware` (the agent's hub key)."""
    from .agent import SiteAgent
    from .agent.service import create_agent_app
    from .auth import AuthStore

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    auth_path = root / "auth.json"
    fresh = not auth_path.exists()
    auth = AuthStore(auth_path)
    bootstrap = auth.bootstrap("hub") if fresh else None
    agent = SiteAgent(site_id, root, auth)
    return create_agent_app(agent), bootstrap


def _announce_bootstrap(label: str, bootstrap) -> None:
    if bootstrap:
        key_id, secret = bootstrap
        print(f"{label} key (shown once): key_id={key_id} secret={secret}",
              file=sys.stderr)


def cmd_serve(args) -> int:
    import uvicorn

    sites = load_site_credentials(args.sites_file) if args.sites_file else {}
    app, bootstrap = build_middleware(Path(args.root), sites,
                                      ui_dir=args.ui_dir)
    _announce_bootstrap("admin", bootstrap)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_agent_serve(args) -> int:
    import uvicorn

    app, bootstrap = build_agent(args.site_id, Path(args.root))
    _announce_bootstrap("hub", bootstrap)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# -- parser -----------------------------------------------------------------------

def _add_connection_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--endpoint", help="middleware base URL "
                                           "(or FABRIC_ENDPOINT)")
    parser.add_argument("--key-id", dest="key_id",
                        help="API key id (or FABRIC_KEY_ID)")
    parser.add_argument("--secret-file", dest="secret_file",
                        help="file containing the key secret "
                             "(or FABRIC_SECRET_FILE)")
    parser.add_argument("--json", action="store_true",
                        help="always print JSON, even on a tty")


def _param_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-p", "--param", action="append", metavar="KEY=VALUE",
                        help="parameter override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="client for the distributed data fabric")
    top = parser.add_subparsers(dest="command", required=True)

    usecase = top.add_parser("usecase", help="use-case administration")
    usecase_sub = usecase.add_subparsers(dest="subcommand", required=True)
    create = usecase_sub.add_parser("create", help="create a use case")
    create.add_argument("name")
    create.add_argument("--site", action="append", required=True,
                        help="participating data site id (repeatable)")
    create.add_argument("--root", default="shared",
                        choices=("shared", "user"))
    _add_connection_flags(create)
    create.set_defaults(func=cmd_usecase_create)

    repo = top.add_parser("repo", help="workflow repository")
    repo_sub = repo.add_subparsers(dest="subcommand", required=True)
    for name, handler, configure in (
            ("ls", cmd_repo_ls,
             lambda p: p.add_argument("path")),
            ("put", cmd_repo_put,
             lambda p: (p.add_argument("path"),
                        p.add_argument("local",
                                       help="local file, or - for stdin"))),
            ("get", cmd_repo_get,
             lambda p: (p.add_argument("path"),
                        p.add_argument("-o", "--output"))),
            ("dup", cmd_repo_dup,
             lambda p: p.add_argument("path")),
            ("mkver", cmd_repo_mkver,
             lambda p: p.add_argument("path", help="workflow path"))):
        sub = repo_sub.add_parser(name)
        configure(sub)
        _add_connection_flags(sub)
        sub.set_defaults(func=handler)

    task = top.add_parser("task", help="task lifecycle")
    task_sub = task.add_subparsers(dest="subcommand", required=True)
    submit = task_sub.add_parser("submit", help="run a workflow version")
    submit.add_argument("version_path")
    _param_flag(submit)
    submit.add_argument("--follow", action="store_true",
                        help="stream the live log until the task finishes")
    _add_connection_flags(submit)
    submit.set_defaults(func=cmd_task_submit)

    ls = task_sub.add_parser("ls", help="list visible tasks")
    _add_connection_flags(ls)
    ls.set_defaults(func=cmd_task_ls)

    show = task_sub.add_parser("show", help="one task's current state")
    show.add_argument("task_id")
    _add_connection_flags(show)
    show.set_defaults(func=cmd_task_show)

    logs = task_sub.add_parser("logs", help="task log entries")
    logs.add_argument("task_id")
    logs.add_argument("--stream", choices=("runtime", "error"))
    logs.add_argument("--follow", action="store_true")
    _add_connection_flags(logs)
    logs.set_defaults(func=cmd_task_logs)

    cancel = task_sub.add_parser("cancel")
    cancel.add_argument("task_id")
    _add_connection_flags(cancel)
    cancel.set_defaults(func=cmd_task_cancel)

    rerun = task_sub.add_parser("rerun", help="cancel if running, submit "
                                              "again with merged parameters")
    rerun.add_argument("task_id")
    _param_flag(rerun)
    rerun.add_argument("--follow", action="store_true")
    _add_connection_flags(rerun)
    rerun.set_defaults(func=cmd_task_rerun)

    result = task_sub.add_parser("result", help="result manifest or one file")
    result.add_argument("task_id")
    result.add_argument("--fetch", metavar="FILE",
                        help="download this result file instead")
    result.add_argument("-o", "--output")
    _add_connection_flags(result)
    result.set_defaults(func=cmd_task_result)

    res = top.add_parser("result", help="result-set analytics")
    res_sub = res.add_subparsers(dest="subcommand", required=True)
    profile = res_sub.add_parser("profile", help="per-variable statistics")
    profile.add_argument("ref", help="result ref (from the task's result "
                                     "manifest)")
    profile.add_argument("--file", help="table file within the result set")
    _add_connection_flags(profile)
    profile.set_defaults(func=cmd_result_profile)

    corr = res_sub.add_parser("corr", help="pairwise correlations")
    corr.add_argument("ref")
    corr.add_argument("--file")
    corr.add_argument("--good", type=float, default=0.7)
    corr.add_argument("--moderate", type=float, default=0.4)
    _add_connection_flags(corr)
    corr.set_defaults(func=cmd_result_corr)

    recommend = res_sub.add_parser("recommend",
                                   help="visualization recommendations")
    recommend.add_argument("ref")
    recommend.add_argument("--var", action="append",
                           help="focus variable (repeatable)")
    recommend.add_argument("--file")
    _add_connection_flags(recommend)
    recommend.set_defaults(func=cmd_result_recommend)

    key = top.add_parser("key", help="API key administration")
    key_sub = key.add_subparsers(dest="subcommand", required=True)
    issue = key_sub.add_parser("issue")
    issue.add_argument("user")
    issue.add_argument("--role", action="append",
                       help="role to register (repeatable)")
    issue.add_argument("--admin", action="store_true")
    issue.add_argument("--ttl", type=float, help="key lifetime in seconds")
    _add_connection_flags(issue)
    issue.set_defaults(func=cmd_key_issue)

    serve = top.add_parser("serve", help="run the middleware service")
    serve.add_argument("--root", required=True,
                       help="state directory (auth, repository, tasks)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--sites-file",
                       help="JSON file mapping site id to its endpoint "
                            "and credentials")
    serve.add_argument("--ui-dir", dest="ui_dir",
                       help="directory with the built web console, served "
                            "under /ui")
    serve.set_defaults(func=cmd_serve)

    agent = top.add_parser("agent", help="data-site agent")
    agent_sub = agent.add_subparsers(dest="subcommand", required=True)
    agent_serve = agent_sub.add_parser("serve", help="run a data-site agent")
    agent_serve.add_argument("--site-id", required=True)
    agent_serve.add_argument("--root", required=True,
                             help="state directory (auth, datasets, work)")
    agent_serve.add_argument("--host", default="127.0.0.1")
    agent_serve.add_argument("--port", type=int, default=8100)
    agent_serve.set_defaults(func=cmd_agent_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ApiError as exc:
        print(f"{PROG}: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except FabricError as exc:
        print(f"{PROG}: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
