"""Command line: scan, serve, query, import, export.

Exit codes: 0 ok, 1 usage error, 2 every scan target failed, 3 not found,
4 runtime failure (unreachable remote, busy bind address, storage error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import ExitStack
from typing import Sequence, TextIO

from passive_ssh.errors import NotFound, PassiveSSHError
from passive_ssh.records import ScanRecord, parse_targets, read_jsonl

log = logging.getLogger("passive_ssh")

EXIT_OK, EXIT_USAGE, EXIT_SCAN_FAILED, EXIT_NOT_FOUND, EXIT_RUNTIME = 0, 1, 2, 3, 4

QUERY_KINDS = ("host", "key", "hassh", "banner", "stats", "onions", "banners")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ports(text: str) -> list[int]:
    try:
        ports = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid port list {text!r}") from None
    if not ports or any(not 1 <= p <= 65535 for p in ports):
        raise argparse.ArgumentTypeError(f"invalid port list {text!r}")
    return ports


def _hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host.strip("[]"), int(port)


def _positive(kind):
    def convert(text: str):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text}")
        return value
    return convert


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="passive-ssh", description="Collect, store and query SSH fingerprints.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scan = sub.add_parser("scan", help="fingerprint SSH endpoints")
    scan.add_argument("hosts", nargs="*", help="targets: host, host:port or [v6]:port")
    scan.add_argument("-f", "--targets", help="target list file, one endpoint per line ('-' for stdin)")
    scan.add_argument("--ports", type=_ports, default=[22, 2222], help="ports for targets without one (default 22,2222)")
    scan.add_argument("--timeout", type=_positive(float), default=10.0, help="connect and read timeout in seconds")
    scan.add_argument("--parallel", type=_positive(int), default=128, help="maximum concurrent connections")
    scan.add_argument("--retries", type=int, default=1)
    scan.add_argument("--socks", type=_hostport, help="SOCKS5 proxy HOST:PORT for .onion targets")
    scan.add_argument("--store", help="store path to ingest records into")
    scan.add_argument("--jsonl-out", help="write records as JSON Lines to this file")

    serve = sub.add_parser("serve", help="run the REST API")
    serve.add_argument("--store", help="store path (in-memory when omitted)")
    serve.add_argument("--bind", default="127.0.0.1:8500")
    serve.add_argument("--token", action="append", default=[], help="accepted bearer token (repeatable)")
    serve.add_argument("--protect-lookups", action="store_true", help="require a token for lookups too")
    serve.add_argument("--readonly", action="store_true", help="disable POST /records")

    query = sub.add_parser("query", help="query a store or a remote instance")
    query.add_argument("kind", choices=QUERY_KINDS)
    query.add_argument("value", nargs="?")
    query.add_argument("--port", type=int, help="restrict host queries to one port")
    where = query.add_mutually_exclusive_group(required=True)
    where.add_argument("--store")
    where.add_argument("--remote", help="base URL of a running service")
    query.add_argument("--token")

    imp = sub.add_parser("import", help="ingest JSON Lines records")
    imp.add_argument("path", help="JSONL file ('-' for stdin)")
    imp.add_argument("--store", required=True)

    exp = sub.add_parser("export", help="dump stored records as JSON Lines")
    exp.add_argument("path", help="output file ('-' for stdout)")
    exp.add_argument("--store", required=True)
    return parser


def _emit(obj, out: TextIO) -> None:
    out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _open_in(path: str, stack: ExitStack) -> TextIO:
    if path == "-":
        return sys.stdin
    return stack.enter_context(open(path, encoding="utf-8"))


def cmd_scan(args, out: TextIO) -> int:
    from passive_ssh.scanner import ScanPolicy, run_scan
    from passive_ssh.store import Store

    lines = list(args.hosts)
    with ExitStack() as stack:
        if args.targets:
            lines.extend(_open_in(args.targets, stack).read().splitlines())
    try:
        targets = parse_targets(lines, args.ports)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.retries < 0:
        raise UsageError("--retries must be >= 0")
    policy = ScanPolicy(
        connect_timeout=args.timeout,
        read_timeout=args.timeout,
        max_parallel=args.parallel,
        ports=args.ports,
        retries=args.retries,
        socks_proxy=args.socks,
    )
    with ExitStack() as stack:
        store = Store.open(args.store) if args.store else None
        if store is not None:
            stack.callback(store.close)
        if args.jsonl_out:
            jsonl = stack.enter_context(open(args.jsonl_out, "a", encoding="utf-8"))
        elif store is None:
            jsonl = out
        else:
            jsonl = None

        def sink(outcome) -> None:
            if isinstance(outcome, ScanRecord):
                if store is not None:
                    store.ingest(outcome)
                if jsonl is not None:
                    jsonl.write(outcome.to_json() + "\n")
                    jsonl.flush()
                log.info("%s %s", outcome.endpoint, outcome.banner.raw)
            else:
                log.warning("%s failed: %s", outcome.endpoint, outcome.error)

        summary = run_scan(targets, policy, sink)
    summary_out = sys.stderr if jsonl is out else out
    summary_out.write(json.dumps({"summary": summary.to_dict()}) + "\n")
    if summary.attempted and not summary.succeeded:
        return EXIT_SCAN_FAILED
    return EXIT_OK


def cmd_serve(args, out: TextIO) -> int:
    from passive_ssh.api import ApiConfig, serve
    from passive_ssh.store import Store

    config = ApiConfig(bind=args.bind, tokens=set(args.token), readonly=args.readonly,
                       protect_lookups=args.protect_lookups)
    try:
        config.host_port
    except ValueError:
        raise UsageError(f"invalid --bind {args.bind!r}") from None
    if args.store is None:
        log.warning("no --store given; records are kept in memory only")
    store = Store.open(args.store)
    try:
        serve(config, store, on_ready=lambda s: log.info("listening on %s", s.getsockname()))
    except OSError as exc:
        sys.stderr.write(f"cannot bind {args.bind}: {exc}\n")
        return EXIT_RUNTIME
    finally:
        store.close()
    return EXIT_OK


def _local_query(store, kind: str, value: str | None, port: int | None):
    if kind == "stats":
        return store.stats().to_dict()
    if kind == "onions":
        return {"pairs": [m.to_dict() for m in store.correlate_onions()]}
    if kind == "banners":
        return {"banners": store.list_banners()}
    if value is None:
        raise UsageError(f"query {kind} needs a value")
    try:
        if kind == "host":
            histories = store.host_lookup(value, port)
            return {
                "host": histories[0].endpoint.host,
                "key_count": len({d for h in histories for d in h.key_digests}),
                "histories": [h.to_dict() for h in histories],
            }
        if kind == "key":
            return store.key_lookup(value).to_dict()
        if kind == "hassh":
            return {"hassh": value.lower(), "hosts": [s.to_dict() for s in store.hassh_lookup(value)]}
        return {"banner": value, "hosts": [s.to_dict() for s in store.banner_lookup(value)]}
    except ValueError as exc:
        raise UsageError(str(exc)) from None


REMOTE_ROUTES = {
    "host": "/host/ssh/{}",
    "key": "/fingerprint/{}",
    "hassh": "/hassh/hosts/{}",
    "banner": "/banner/{}",
    "stats": "/stats",
    "onions": "/onions/correlation",
    "banners": "/banners",
}


def _remote_query(base: str, token: str | None, kind: str, value: str | None, port: int | None):
    import httpx
    from urllib.parse import quote

    route = REMOTE_ROUTES[kind]
    if "{}" in route:
        if value is None:
            raise UsageError(f"query {kind} needs a value")
        route = route.format(quote(value, safe=""))
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    params = {"port": port} if port is not None and kind == "host" else {}
    resp = httpx.get(base.rstrip("/") + route, headers=headers, params=params, timeout=30)
    if resp.status_code == 404:
        raise NotFound(resp.json().get("error", "not found"))
    if resp.status_code >= 400:
        raise PassiveSSHError(f"HTTP {resp.status_code}: {resp.text}")
    return resp.json()


def cmd_query(args, out: TextIO) -> int:
    from passive_ssh.store import Store

    try:
        if args.remote:
            result = _remote_query(args.remote, args.token, args.kind, args.value, args.port)
        else:
            if not os.path.exists(args.store):
                raise UsageError(f"no store at {args.store}")
            store = Store.open(args.store)
            try:
                result = _local_query(store, args.kind, args.value, args.port)
            finally:
                store.close()
    except NotFound as exc:
        sys.stderr.write(f"not found: {exc}\n")
        return EXIT_NOT_FOUND
    _emit(result, out)
    return EXIT_OK


def cmd_import(args, out: TextIO) -> int:
    from passive_ssh.store import Store

    imported = skipped = 0
    store = Store.open(args.store)
    try:
        with ExitStack() as stack:
            for lineno, item in read_jsonl(_open_in(args.path, stack)):
                if isinstance(item, ScanRecord):
                    store.ingest(item)
                    imported += 1
                else:
                    skipped += 1
                    log.warning("%s:%d skipped: %s", args.path, lineno, item)
    finally:
        store.close()
    _emit({"imported": imported, "skipped": skipped}, out)
    return EXIT_OK


def cmd_export(args, out: TextIO) -> int:
    from passive_ssh.store import Store

    store = Store.open(args.store)
    count = 0
    try:
        with ExitStack() as stack:
            sink = out if args.path == "-" else stack.enter_context(open(args.path, "w", encoding="utf-8"))
            for record in store.records():
                sink.write(record.to_json() + "\n")
                count += 1
    finally:
        store.close()
    status = {"exported": count}
    if args.path == "-":
        sys.stderr.write(json.dumps(status) + "\n")
    else:
        _emit(status, out)
    return EXIT_OK


COMMANDS = {
    "scan": cmd_scan,
    "serve": cmd_serve,
    "query": cmd_query,
    "import": cmd_import,
    "export": cmd_export,
}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"passive-ssh: error: {exc}\n")
        return EXIT_USAGE
    except (PassiveSSHError, OSError) as exc:
        sys.stderr.write(f"passive-ssh: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
