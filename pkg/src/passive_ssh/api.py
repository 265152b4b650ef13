"""REST service: push scan records, look up hosts, keys, hasshes and banners."""

from __future__ import annotations

import base64
import json
import logging
import socket
from dataclasses import dataclass, field
from typing import Any, Callable

import uvicorn
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from passive_ssh.errors import NotFound, PassiveSSHError, StorageFailure
from passive_ssh.records import ScanRecord
from passive_ssh.store import Store

log = logging.getLogger(__name__)

MAX_PAGE = 10_000


@dataclass
class ApiConfig:
    bind: str = "127.0.0.1:8500"
    tokens: set[str] = field(default_factory=set)
    readonly: bool = False
    protect_lookups: bool = False
    page_size: int = MAX_PAGE

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        return host.strip("[]") or "127.0.0.1", int(port)


def _encode_cursor(offset: int) -> str:
    return base64.urlsafe_b64encode(f"o:{offset}".encode()).decode()


def _decode_cursor(cursor: str | None) -> int:
    if not cursor:
        return 0
    try:
        text = base64.urlsafe_b64decode(cursor.encode()).decode()
        if not text.startswith("o:"):
            raise ValueError
        offset = int(text[2:])
        if offset < 0:
            raise ValueError
    except ValueError:
        raise HTTPException(400, "invalid cursor") from None
    return offset


def paginate(items: list, cursor: str | None, page_size: int) -> tuple[list, str | None]:
    start = _decode_cursor(cursor)
    page = items[start:start + page_size]
    nxt = _encode_cursor(start + page_size) if start + page_size < len(items) else None
    return page, nxt


def create_app(store: Store, config: ApiConfig | None = None) -> FastAPI:
    config = config or ApiConfig()
    page_size = max(1, min(config.page_size, MAX_PAGE))
    app = FastAPI(title="passive-ssh", docs_url=None, redoc_url=None)

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        message = "not found" if exc.status_code == 404 else str(exc.detail)
        return error(exc.status_code, message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return error(400, "invalid request parameters")

    @app.exception_handler(NotFound)
    async def _not_found(request: Request, exc: NotFound):
        return error(404, "not found")

    @app.exception_handler(StorageFailure)
    async def _storage(request: Request, exc: StorageFailure):
        log.error("storage failure: %s", exc)
        return error(503, "storage failure")

    def bearer(request: Request) -> str | None:
        header = request.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        return token.strip() if scheme.lower() == "bearer" else None

    def require_token(request: Request) -> None:
        if config.tokens and bearer(request) not in config.tokens:
            raise HTTPException(401, "missing or invalid bearer token")

    def lookup_auth(request: Request) -> None:
        if config.protect_lookups:
            require_token(request)

    lookups: list[Any] = [Depends(lookup_auth)]

    def paged(key: str, items: list, cursor: str | None, **extra) -> dict:
        page, nxt = paginate(items, cursor, page_size)
        return {**extra, key: page, "next_cursor": nxt}

    @app.get("/stats", dependencies=lookups)
    def stats():
        return store.stats().to_dict()

    @app.get("/banners", dependencies=lookups)
    def banners(cursor: str | None = None):
        return paged("banners", store.list_banners(), cursor)

    @app.get("/banner/{banner:path}", dependencies=lookups)
    def banner(banner: str, cursor: str | None = None):
        hosts = [s.to_dict() for s in store.banner_lookup(banner)]
        return paged("hosts", hosts, cursor, banner=banner)

    @app.get("/host/ssh/{host}", dependencies=lookups)
    def host(host: str, port: int | None = None):
        try:
            histories = store.host_lookup(host, port)
        except ValueError:
            raise HTTPException(400, "invalid host") from None
        digests = {d for h in histories for d in h.key_digests}
        return {
            "host": histories[0].endpoint.host,
            "first_seen": min(h.first_seen for h in histories),
            "last_seen": max(h.last_seen for h in histories),
            "key_count": len(digests),
            "histories": [h.to_dict() for h in histories],
        }

    @app.get("/fingerprint/all", dependencies=lookups)
    def fingerprints(cursor: str | None = None):
        return paged("keys", store.list_keys(), cursor)

    @app.get("/fingerprint/{digest}", dependencies=lookups)
    def fingerprint(digest: str, cursor: str | None = None):
        try:
            entry = store.key_lookup(digest)
        except ValueError:
            raise HTTPException(400, "invalid md5 digest") from None
        body = entry.to_dict()
        return paged("hosts", body.pop("hosts"), cursor, **body)

    @app.get("/hassh/hosts/{digest}", dependencies=lookups)
    def hassh(digest: str, cursor: str | None = None):
        try:
            hosts = [s.to_dict() for s in store.hassh_lookup(digest)]
        except ValueError:
            raise HTTPException(400, "invalid hassh digest") from None
        return paged("hosts", hosts, cursor, hassh=digest.lower())

    @app.get("/onions/correlation", dependencies=lookups)
    def onions(cursor: str | None = None):
        return paged("pairs", [m.to_dict() for m in store.correlate_onions()], cursor)

    @app.post("/records")
    async def push(request: Request):
        if config.readonly:
            return error(405, "store is read-only")
        require_token(request)
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return error(400, "malformed JSON body")
        items = body if isinstance(body, list) else [body]
        try:
            records = [ScanRecord.from_dict(item) for item in items]
        except (ValueError, PassiveSSHError) as exc:
            return error(400, f"invalid record: {exc}")
        outcomes = [store.ingest(r).to_dict() for r in records]
        return {"ingested": len(outcomes), "outcomes": outcomes}

    return app


def bind_socket(config: ApiConfig) -> socket.socket:
    """Bind the listening socket up front so address errors surface as OSError."""
    host, port = config.host_port
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    sock.set_inheritable(True)
    return sock


def serve(config: ApiConfig, store: Store, on_ready: Callable[[socket.socket], None] | None = None) -> None:
    """Run the service until interrupted. Raises OSError if the address is busy."""
    sock = bind_socket(config)
    if on_ready is not None:
        on_ready(sock)
    server = uvicorn.Server(uvicorn.Config(create_app(store, config), log_level="warning"))
    server.run(sockets=[sock])
