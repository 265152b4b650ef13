"""Active SSH fingerprinting of endpoints.

Each connection runs the transport handshake only as far as the server's
key-exchange reply, which carries the host key, and is then dropped. One
extra connection per advertised host-key algorithm collects the other keys.
"""

from __future__ import annotations

import asyncio
import inspect
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Iterable, NamedTuple, Union

from passive_ssh import kex, socks, wire
from passive_ssh.errors import (
    ConnectFailed,
    Malformed,
    NoCommonAlgorithm,
    PassiveSSHError,
    ProtocolError,
    Timeout,
)
from passive_ssh.fingerprint import KeyFingerprints, fingerprint_key, hassh_server
from passive_ssh.records import Endpoint, ScanRecord

log = logging.getLogger(__name__)

CLIENT_IDENT = "SSH-2.0-PassiveSSH_1.0"

CLIENT_CIPHERS = (
    "chacha20-poly1305@openssh.com",
    "aes128-ctr",
    "aes192-ctr",
    "aes256-ctr",
    "aes128-gcm@openssh.com",
    "aes256-gcm@openssh.com",
    "aes128-cbc",
    "aes192-cbc",
    "aes256-cbc",
    "3des-cbc",
)
CLIENT_MACS = (
    "umac-64-etm@openssh.com",
    "umac-128-etm@openssh.com",
    "hmac-sha2-256-etm@openssh.com",
    "hmac-sha2-512-etm@openssh.com",
    "hmac-sha1-etm@openssh.com",
    "umac-64@openssh.com",
    "umac-128@openssh.com",
    "hmac-sha2-256",
    "hmac-sha2-512",
    "hmac-sha1",
)
CLIENT_COMPRESSION = ("none", "zlib@openssh.com", "zlib")

MAX_SKIPPED_MESSAGES = 32

STAGE_CONNECT = "connect"
STAGE_IDENT = "identification"
STAGE_KEXINIT = "kexinit"
STAGE_KEX = "kex"


@dataclass
class ScanPolicy:
    connect_timeout: float = 10.0
    read_timeout: float = 10.0
    max_parallel: int = 128
    ports: list[int] = field(default_factory=lambda: [22, 2222])
    kex_preference: tuple[str, ...] = kex.SUPPORTED_KEX
    retries: int = 1
    socks_proxy: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.connect_timeout <= 0 or self.read_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        for port in self.ports:
            if not 1 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")
        self.kex_preference = tuple(self.kex_preference)
        unsupported = [k for k in self.kex_preference if k not in kex.SUPPORTED_KEX]
        if unsupported or not self.kex_preference:
            raise ValueError(f"kex_preference must be a non-empty subset of {kex.SUPPORTED_KEX}")


@dataclass
class ScanFailure:
    endpoint: Endpoint
    observed_at: int
    kind: str
    error: str
    stage: str | None = None

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint.to_dict(),
            "observed_at": self.observed_at,
            "kind": self.kind,
            "stage": self.stage,
            "error": self.error,
        }


@dataclass
class ScanSummary:
    attempted: int = 0
    succeeded: int = 0
    failed: int = 0

    def to_dict(self) -> dict:
        return {"attempted": self.attempted, "succeeded": self.succeeded, "failed": self.failed}


class KeyCollection(NamedTuple):
    keys: list[KeyFingerprints]
    errors: list[str]


Outcome = Union[ScanRecord, ScanFailure]
Sink = Callable[[Outcome], Union[None, Awaitable[None]]]


def client_kexinit(policy: ScanPolicy, host_key_algorithms: Iterable[str]) -> wire.KexInitSummary:
    return wire.KexInitSummary(
        cookie=os.urandom(16),
        kex_algorithms=policy.kex_preference,
        server_host_key_algorithms=tuple(host_key_algorithms),
        encryption_c2s=CLIENT_CIPHERS,
        encryption_s2c=CLIENT_CIPHERS,
        mac_c2s=CLIENT_MACS,
        mac_s2c=CLIENT_MACS,
        compression_c2s=CLIENT_COMPRESSION,
        compression_s2c=CLIENT_COMPRESSION,
    )


async def open_stream(endpoint: Endpoint, policy: ScanPolicy) -> tuple[asyncio.StreamReader, asyncio.StreamWriter]:
    """TCP connection to the endpoint, through the SOCKS proxy for onion hosts."""
    if endpoint.is_onion:
        if policy.socks_proxy is None:
            raise ConnectFailed("onion endpoint requires a SOCKS proxy")
        return await socks.open_connection(policy.socks_proxy, endpoint.host, endpoint.port)
    try:
        return await asyncio.open_connection(endpoint.host, endpoint.port)
    except OSError as exc:
        raise ConnectFailed(f"{endpoint}: {exc.strerror or exc}") from exc


class Connection:
    """One pre-encryption transport connection."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, policy: ScanPolicy) -> None:
        self.reader = reader
        self.writer = writer
        self.policy = policy
        self.stage = STAGE_CONNECT

    @classmethod
    async def open(cls, endpoint: Endpoint, policy: ScanPolicy) -> "Connection":
        try:
            reader, writer = await asyncio.wait_for(open_stream(endpoint, policy), policy.connect_timeout)
        except asyncio.TimeoutError:
            raise Timeout(f"connect to {endpoint} timed out", STAGE_CONNECT) from None
        except PassiveSSHError as exc:
            raise exc.with_stage(STAGE_CONNECT)
        return cls(reader, writer, policy)

    async def _timed(self, awaitable):
        try:
            return await asyncio.wait_for(awaitable, self.policy.read_timeout)
        except asyncio.TimeoutError:
            raise Timeout("read timed out", self.stage) from None
        except PassiveSSHError as exc:
            raise exc.with_stage(self.stage)
        except OSError as exc:
            raise ProtocolError(f"connection error: {exc}", self.stage) from exc

    async def send(self, payload: bytes) -> None:
        wire.write_binary_packet(payload, self.writer)
        await self._timed(self.writer.drain())

    async def identify(self) -> tuple[list[str], wire.IdentificationString]:
        self.stage = STAGE_IDENT
        result = await self._timed(wire.read_pre_banner_stream(self.reader))
        self.writer.write((CLIENT_IDENT + "\r\n").encode())
        return result

    async def recv(self) -> bytes:
        for _ in range(MAX_SKIPPED_MESSAGES):
            payload = await self._timed(wire.read_binary_packet(self.reader))
            if not payload:
                raise Malformed("empty packet payload", self.stage)
            msg = payload[0]
            if msg in (wire.MSG_IGNORE, wire.MSG_DEBUG, wire.MSG_UNIMPLEMENTED):
                continue
            if msg == wire.MSG_DISCONNECT:
                raise ProtocolError(kex.describe_disconnect(payload), self.stage)
            return payload
        raise ProtocolError("too many ignorable messages", self.stage)

    async def exchange_kexinit(self, ours: wire.KexInitSummary) -> wire.KexInitSummary:
        self.stage = STAGE_KEXINIT
        await self.send(wire.serialize_kexinit(ours))
        payload = await self.recv()
        try:
            return wire.parse_kexinit(payload)
        except PassiveSSHError as exc:
            raise exc.with_stage(self.stage)

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (OSError, asyncio.CancelledError):
            pass


async def minimal_kex(conn: Connection, negotiated_kex: str) -> wire.HostKeyBlob:
    """Send the ephemeral key-exchange initiation and return K_S from the reply.

    NEWKEYS is never sent; the caller drops the connection afterwards.
    """
    conn.stage = STAGE_KEX
    if negotiated_kex not in kex.SUPPORTED_KEX:
        raise NoCommonAlgorithm(f"unsupported key exchange {negotiated_kex!r}", STAGE_KEX)
    await conn.send(kex.kex_init_payload(negotiated_kex))
    payload = await conn.recv()
    try:
        return kex.parse_kex_reply(payload, negotiated_kex)
    except PassiveSSHError as exc:
        raise exc.with_stage(STAGE_KEX)


async def _open_with_retries(endpoint: Endpoint, policy: ScanPolicy) -> Connection:
    for attempt in range(policy.retries + 1):
        try:
            return await Connection.open(endpoint, policy)
        except (ConnectFailed, Timeout):
            if attempt == policy.retries:
                raise
    raise AssertionError("unreachable")


def _negotiate_kex(policy: ScanPolicy, server: wire.KexInitSummary) -> str:
    try:
        return wire.negotiate(policy.kex_preference, server.kex_algorithms)
    except NoCommonAlgorithm as exc:
        raise exc.with_stage(STAGE_KEX)


async def _fetch_key(endpoint: Endpoint, policy: ScanPolicy, algorithm: str) -> KeyFingerprints:
    conn = await _open_with_retries(endpoint, policy)
    try:
        await conn.identify()
        server = await conn.exchange_kexinit(client_kexinit(policy, (algorithm,)))
        if algorithm not in server.server_host_key_algorithms:
            raise NoCommonAlgorithm(f"server no longer offers {algorithm}", STAGE_KEXINIT)
        blob = await minimal_kex(conn, _negotiate_kex(policy, server))
    finally:
        await conn.close()
    return fingerprint_key(blob)


def collectable_algorithms(server_kexinit: wire.KexInitSummary) -> list[str]:
    supported = set(kex.SUPPORTED_HOSTKEY_ALGORITHMS)
    return list(dict.fromkeys(a for a in server_kexinit.server_host_key_algorithms if a in supported))


async def collect_host_keys(
    endpoint: Endpoint,
    server_kexinit: wire.KexInitSummary,
    policy: ScanPolicy,
    known: dict[str, KeyFingerprints] | None = None,
) -> KeyCollection:
    """Fetch the key behind every supported host-key algorithm the server lists.

    ``known`` maps algorithms already fetched (on the first connection) to
    their keys. Keys are merged by MD5 digest. Raises ProtocolError only if
    nothing at all was obtained.
    """
    known = dict(known or {})
    keys: dict[str, KeyFingerprints] = {}
    for fp in known.values():
        keys.setdefault(fp.md5_hex, fp)
    errors: list[str] = []
    algorithms = collectable_algorithms(server_kexinit)
    if not algorithms:
        errors.append("no supported host key algorithm offered: "
                      + ",".join(server_kexinit.server_host_key_algorithms))
    for algorithm in algorithms:
        if algorithm in known:
            continue
        try:
            fp = await _fetch_key(endpoint, policy, algorithm)
        except PassiveSSHError as exc:
            errors.append(f"{algorithm}: {type(exc).__name__}: {exc}")
            continue
        keys.setdefault(fp.md5_hex, fp)
    if not keys:
        raise ProtocolError("every host key algorithm failed: " + "; ".join(errors), STAGE_KEX)
    return KeyCollection(list(keys.values()), errors)


async def scan_endpoint(endpoint: Endpoint, policy: ScanPolicy) -> ScanRecord:
    """Fingerprint one endpoint: banner, KEXINIT, hasshServer and every host key.

    Failures before the server KEXINIT arrives raise; host-key failures after
    that are recorded in ``ScanRecord.errors``.
    """
    observed_at = int(time.time())
    known: dict[str, KeyFingerprints] = {}
    errors: list[str] = []
    conn = await _open_with_retries(endpoint, policy)
    try:
        skipped, ident = await conn.identify()
        server = await conn.exchange_kexinit(client_kexinit(policy, kex.SUPPORTED_HOSTKEY_ALGORITHMS))
        try:
            hostkey_alg = wire.negotiate(kex.SUPPORTED_HOSTKEY_ALGORITHMS, server.server_host_key_algorithms)
            blob = await minimal_kex(conn, _negotiate_kex(policy, server))
            known[hostkey_alg] = fingerprint_key(blob)
        except PassiveSSHError as exc:
            errors.append(f"first key exchange: {type(exc).__name__}: {exc}")
    finally:
        await conn.close()

    try:
        collected = await collect_host_keys(endpoint, server, policy, known)
        keys, key_errors = collected.keys, collected.errors
    except ProtocolError as exc:
        keys, key_errors = [], [str(exc)]
    return ScanRecord(
        endpoint=endpoint,
        observed_at=observed_at,
        banner=ident,
        kexinit=server,
        hassh_server=hassh_server(server),
        host_keys=keys,
        skipped_lines=skipped,
        errors=errors + key_errors,
    )


async def _deliver(sink: Sink, outcome: Outcome) -> None:
    try:
        result = sink(outcome)
        if inspect.isawaitable(result):
            await result
    except Exception:
        log.exception("sink failed for %s", outcome.endpoint)


async def scan_many(targets: Iterable[Endpoint], policy: ScanPolicy, sink: Sink) -> ScanSummary:
    """Scan every target with at most ``policy.max_parallel`` workers.

    Each target yields exactly one sink call, with a ScanRecord or ScanFailure.
    """
    summary = ScanSummary()
    queue = iter(targets)

    async def worker() -> None:
        for endpoint in queue:
            summary.attempted += 1
            try:
                outcome: Outcome = await scan_endpoint(endpoint, policy)
            except PassiveSSHError as exc:
                outcome = ScanFailure(endpoint, int(time.time()), type(exc).__name__, str(exc), exc.stage)
            except Exception as exc:
                log.exception("unexpected error scanning %s", endpoint)
                outcome = ScanFailure(endpoint, int(time.time()), type(exc).__name__, str(exc))
            if isinstance(outcome, ScanRecord):
                summary.succeeded += 1
            else:
                summary.failed += 1
            await _deliver(sink, outcome)

    await asyncio.gather(*(worker() for _ in range(policy.max_parallel)))
    return summary


def run_scan(targets: Iterable[Endpoint], policy: ScanPolicy, sink: Sink) -> ScanSummary:
    return asyncio.run(scan_many(targets, policy, sink))
