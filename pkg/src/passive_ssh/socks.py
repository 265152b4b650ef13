"""Minimal SOCKS5 CONNECT client (no-auth only, remote name resolution)."""

from __future__ import annotations

import asyncio
import ipaddress
import struct

from passive_ssh.errors import ConnectFailed

SOCKS_VERSION = 5
REPLIES = {
    1: "general SOCKS server failure",
    2: "connection not allowed by ruleset",
    3: "network unreachable",
    4: "host unreachable",
    5: "connection refused",
    6: "TTL expired",
    7: "command not supported",
    8: "address type not supported",
}


def connect_request(host: str, port: int) -> bytes:
    try:
        addr = ipaddress.ip_address(host)
    except ValueError:
        name = host.encode("idna")
        if len(name) > 255:
            raise ValueError("hostname too long for SOCKS5") from None
        dst = b"\x03" + bytes([len(name)]) + name
    else:
        dst = (b"\x01" if addr.version == 4 else b"\x04") + addr.packed
    return bytes([SOCKS_VERSION, 1, 0]) + dst + struct.pack(">H", port)


async def _read_bound_address(reader: asyncio.StreamReader) -> None:
    atyp = (await reader.readexactly(1))[0]
    if atyp == 1:
        await reader.readexactly(4 + 2)
    elif atyp == 4:
        await reader.readexactly(16 + 2)
    elif atyp == 3:
        n = (await reader.readexactly(1))[0]
        await reader.readexactly(n + 2)
    else:
        raise ConnectFailed(f"SOCKS5 proxy returned address type {atyp}")


async def handshake(reader: asyncio.StreamReader, writer: asyncio.StreamWriter, host: str, port: int) -> None:
    """Run greeting and CONNECT over an already open proxy connection."""
    writer.write(bytes([SOCKS_VERSION, 1, 0]))
    await writer.drain()
    try:
        version, method = await reader.readexactly(2)
        if version != SOCKS_VERSION:
            raise ConnectFailed(f"SOCKS proxy speaks version {version}")
        if method != 0:
            raise ConnectFailed("SOCKS proxy requires authentication")
        writer.write(connect_request(host, port))
        await writer.drain()
        version, rep, _ = await reader.readexactly(3)
        if version != SOCKS_VERSION:
            raise ConnectFailed(f"SOCKS proxy speaks version {version}")
        if rep != 0:
            raise ConnectFailed(f"SOCKS5: {REPLIES.get(rep, f'reply {rep}')}")
        await _read_bound_address(reader)
    except asyncio.IncompleteReadError as exc:
        raise ConnectFailed("SOCKS proxy closed the connection") from exc


async def open_connection(
    proxy: tuple[str, int], host: str, port: int
) -> tuple[asyncio.StreamReader, asyncio.StreamWriter]:
    try:
        reader, writer = await asyncio.open_connection(*proxy)
    except OSError as exc:
        raise ConnectFailed(f"cannot reach SOCKS proxy {proxy[0]}:{proxy[1]}: {exc}") from exc
    try:
        await handshake(reader, writer, host, port)
    except BaseException:
        writer.close()
        raise
    return reader, writer
