"""Pre-encryption SSH2 transport: identification lines, packet framing, KEXINIT.

Only what is needed to reach the server's key-exchange reply is implemented.
Nothing here ever encrypts or verifies a MAC.
"""

from __future__ import annotations

import asyncio
import os
import struct
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

from passive_ssh.errors import Malformed, NoCommonAlgorithm, NotSsh, Oversize, Truncated

MSG_DISCONNECT = 1
MSG_IGNORE = 2
MSG_UNIMPLEMENTED = 3
MSG_DEBUG = 4
MSG_KEXINIT = 20
MSG_NEWKEYS = 21
MSG_KEX_ECDH_INIT = 30
MSG_KEX_ECDH_REPLY = 31

MAX_IDENT_LEN = 255  # including CR LF
MAX_PACKET_LEN = 35000
MIN_PADDING = 4
BLOCK_SIZE = 8
DEFAULT_PREBANNER_LIMIT = 20

NAME_LIST_FIELDS = (
    "kex_algorithms",
    "server_host_key_algorithms",
    "encryption_c2s",
    "encryption_s2c",
    "mac_c2s",
    "mac_s2c",
    "compression_c2s",
    "compression_s2c",
    "languages_c2s",
    "languages_s2c",
)


# -- primitive encoders --------------------------------------------------------


def uint32(n: int) -> bytes:
    return struct.pack(">I", n)


def string(data: bytes | str) -> bytes:
    if isinstance(data, str):
        data = data.encode()
    return struct.pack(">I", len(data)) + data


def mpint(n: int) -> bytes:
    if n == 0:
        return uint32(0)
    if n < 0:
        raise ValueError("negative mpint not supported")
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    if raw[0] & 0x80:
        raw = b"\x00" + raw
    return string(raw)


def name_list(names: Iterable[str]) -> bytes:
    names = list(names)
    for name in names:
        if not name or "," in name:
            raise ValueError(f"invalid algorithm name {name!r}")
    return string(",".join(names).encode())


class Reader:
    """Cursor over a byte payload; every short read raises Malformed."""

    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.pos = offset

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise Malformed(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def byte(self) -> int:
        return self.take(1)[0]

    def boolean(self) -> bool:
        return self.byte() != 0

    def uint32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def string(self) -> bytes:
        return self.take(self.uint32())

    def mpint(self) -> int:
        return int.from_bytes(self.string(), "big", signed=True)

    def name_list(self) -> tuple[str, ...]:
        raw = self.string()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise Malformed("name-list is not UTF-8") from exc
        if not text:
            return ()
        names = tuple(text.split(","))
        if any(not n for n in names):
            raise Malformed(f"empty name in name-list {text!r}")
        return names


# -- identification line -------------------------------------------------------


@dataclass(frozen=True)
class IdentificationString:
    raw: str
    protoversion: str
    softwareversion: str
    comments: str | None = None

    def __str__(self) -> str:
        return self.raw


def parse_identification_line(line: bytes) -> IdentificationString:
    """Parse ``SSH-protoversion-softwareversion[ comments]`` with CR/LF stripped."""
    if not line.startswith(b"SSH-"):
        raise NotSsh(f"not an SSH identification line: {line[:40]!r}")
    if len(line) + 2 > MAX_IDENT_LEN:
        raise Malformed(f"identification line of {len(line)} bytes exceeds limit")
    try:
        raw = line.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise Malformed("identification line is not UTF-8") from exc
    if "\r" in raw or "\n" in raw or "\x00" in raw:
        raise Malformed("control characters in identification line")
    proto, sep, tail = raw[4:].partition("-")
    if not sep or not proto:
        raise Malformed(f"missing protocol version: {raw!r}")
    software, space, comments = tail.partition(" ")
    if not software:
        raise Malformed(f"missing software version: {raw!r}")
    return IdentificationString(raw, proto, software, comments if space else None)


async def read_pre_banner_stream(
    reader: asyncio.StreamReader, limit: int = DEFAULT_PREBANNER_LIMIT
) -> tuple[list[str], IdentificationString]:
    """Read lines until the identification line, keeping up to ``limit`` others."""
    skipped: list[str] = []
    while True:
        try:
            line = await reader.readuntil(b"\n")
        except asyncio.IncompleteReadError as exc:
            tail = exc.partial
            if tail.startswith(b"SSH-"):
                raise Truncated("connection closed inside identification line") from exc
            raise NotSsh("connection closed before identification line") from exc
        except asyncio.LimitOverrunError as exc:
            raise NotSsh("overlong line before identification") from exc
        line = line.rstrip(b"\n")
        if line.endswith(b"\r"):
            line = line[:-1]
        if line.startswith(b"SSH-"):
            return skipped, parse_identification_line(line)
        skipped.append(line.decode("utf-8", errors="replace"))
        if len(skipped) > limit:
            raise NotSsh(f"no identification line within {limit} lines")


# -- binary packets ------------------------------------------------------------


def padding_for(payload_len: int) -> int:
    """Smallest padding >= 4 that aligns the frame to the block size."""
    pad = BLOCK_SIZE - (4 + 1 + payload_len) % BLOCK_SIZE
    if pad < MIN_PADDING:
        pad += BLOCK_SIZE
    return pad


def frame(payload: bytes) -> bytes:
    if not payload:
        raise ValueError("payload must be non-empty")
    pad = padding_for(len(payload))
    packet_length = 1 + len(payload) + pad
    if packet_length > MAX_PACKET_LEN:
        raise Oversize(f"packet_length {packet_length} exceeds {MAX_PACKET_LEN}")
    return struct.pack(">IB", packet_length, pad) + payload + os.urandom(pad)


def write_binary_packet(payload: bytes, sink) -> None:
    """Write one framed packet to anything with a ``write(bytes)`` method."""
    sink.write(frame(payload))


def _check_header(packet_length: int, padding_length: int) -> int:
    if packet_length > MAX_PACKET_LEN:
        raise Oversize(f"packet_length {packet_length} exceeds {MAX_PACKET_LEN}")
    if padding_length < MIN_PADDING:
        raise Malformed(f"padding_length {padding_length} < {MIN_PADDING}")
    payload_len = packet_length - padding_length - 1
    if payload_len < 0:
        raise Malformed(f"padding_length {padding_length} exceeds packet_length {packet_length}")
    return payload_len


def unframe(data: bytes) -> tuple[bytes, int]:
    """Decode one packet from the front of ``data``; returns (payload, consumed)."""
    if len(data) < 4:
        raise Truncated("short packet header")
    (packet_length,) = struct.unpack_from(">I", data)
    if packet_length > MAX_PACKET_LEN:
        raise Oversize(f"packet_length {packet_length} exceeds {MAX_PACKET_LEN}")
    if len(data) < 4 + packet_length or packet_length < 1:
        raise Truncated("short packet body")
    payload_len = _check_header(packet_length, data[4])
    return data[5:5 + payload_len], 4 + packet_length


async def read_binary_packet(reader: asyncio.StreamReader) -> bytes:
    """Read one unencrypted packet and return its payload."""
    try:
        (packet_length,) = struct.unpack(">I", await reader.readexactly(4))
        if packet_length > MAX_PACKET_LEN:
            raise Oversize(f"packet_length {packet_length} exceeds {MAX_PACKET_LEN}")
        if packet_length < 1:
            raise Malformed("zero packet_length")
        body = await reader.readexactly(packet_length)
    except asyncio.IncompleteReadError as exc:
        raise Truncated("stream ended mid-packet") from exc
    payload_len = _check_header(packet_length, body[0])
    return body[1:1 + payload_len]


# -- KEXINIT -------------------------------------------------------------------


def _names(value: Iterable[str]) -> tuple[str, ...]:
    return tuple(value)


@dataclass(frozen=True)
class KexInitSummary:
    cookie: bytes = field(default=bytes(16))
    kex_algorithms: tuple[str, ...] = ()
    server_host_key_algorithms: tuple[str, ...] = ()
    encryption_c2s: tuple[str, ...] = ()
    encryption_s2c: tuple[str, ...] = ()
    mac_c2s: tuple[str, ...] = ()
    mac_s2c: tuple[str, ...] = ()
    compression_c2s: tuple[str, ...] = ()
    compression_s2c: tuple[str, ...] = ()
    languages_c2s: tuple[str, ...] = ()
    languages_s2c: tuple[str, ...] = ()
    first_kex_packet_follows: bool = False

    def __post_init__(self) -> None:
        if len(self.cookie) != 16:
            raise ValueError("cookie must be 16 bytes")
        for name in NAME_LIST_FIELDS:
            object.__setattr__(self, name, _names(getattr(self, name)))

    def name_lists(self) -> list[tuple[str, ...]]:
        return [getattr(self, name) for name in NAME_LIST_FIELDS]

    def to_dict(self) -> dict:
        out: dict = {"cookie": self.cookie.hex()}
        for name in NAME_LIST_FIELDS:
            out[name] = list(getattr(self, name))
        out["first_kex_packet_follows"] = self.first_kex_packet_follows
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KexInitSummary":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown kexinit fields: {sorted(unknown)}")
        kwargs = {name: tuple(data.get(name) or ()) for name in NAME_LIST_FIELDS}
        for name, names in kwargs.items():
            if not all(isinstance(n, str) for n in names):
                raise ValueError(f"{name} must be a list of strings")
        cookie = bytes.fromhex(data.get("cookie") or "00" * 16)
        return cls(
            cookie=cookie,
            first_kex_packet_follows=bool(data.get("first_kex_packet_follows", False)),
            **kwargs,
        )


def parse_kexinit(payload: bytes) -> KexInitSummary:
    if not payload or payload[0] != MSG_KEXINIT:
        got = payload[0] if payload else None
        raise Malformed(f"expected KEXINIT ({MSG_KEXINIT}), got message {got}")
    r = Reader(payload, 1)
    cookie = r.take(16)
    lists = [r.name_list() for _ in NAME_LIST_FIELDS]
    follows = r.boolean()
    r.uint32()  # reserved, any value accepted
    if r.remaining():
        raise Malformed(f"{r.remaining()} trailing bytes after KEXINIT")
    return KexInitSummary(cookie, *lists, first_kex_packet_follows=follows)


def serialize_kexinit(k: KexInitSummary) -> bytes:
    parts = [bytes([MSG_KEXINIT]), k.cookie]
    parts.extend(name_list(names) for names in k.name_lists())
    parts.append(b"\x01" if k.first_kex_packet_follows else b"\x00")
    parts.append(uint32(0))
    return b"".join(parts)


def negotiate(client_list: Sequence[str], server_list: Sequence[str]) -> str:
    """First client algorithm that the server also supports."""
    server = set(server_list)
    for name in client_list:
        if name in server:
            return name
    raise NoCommonAlgorithm(f"no common algorithm between {list(client_list)} and {list(server_list)}")


# -- host keys -----------------------------------------------------------------


@dataclass(frozen=True)
class HostKeyBlob:
    algorithm: str
    blob: bytes


def parse_hostkey_blob(blob: bytes) -> HostKeyBlob:
    name = Reader(blob).string()
    try:
        algorithm = name.decode("ascii")
    except UnicodeDecodeError as exc:
        raise Malformed("host key algorithm is not ASCII") from exc
    if not algorithm:
        raise Malformed("empty host key algorithm")
    return HostKeyBlob(algorithm, bytes(blob))
