"""In-process mock SSH server for scanner tests.

Framing and message layout are written here with ``struct`` directly so the
harness does not share code with the parser under test. The server runs the
transport exchange up to KEX_ECDH_REPLY and then records anything else the
client sends as a violation.
"""

from __future__ import annotations

import asyncio
import base64
import os
import struct
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path

MSG_DISCONNECT = 1
MSG_KEXINIT = 20
MSG_KEX_INIT = 30
MSG_KEX_REPLY = 31

RSA_ALIASES = ("rsa-sha2-512", "rsa-sha2-256", "ssh-rsa")


def s(data: bytes | str) -> bytes:
    if isinstance(data, str):
        data = data.encode()
    return struct.pack(">I", len(data)) + data


def packet(payload: bytes) -> bytes:
    pad = 8 - (5 + len(payload)) % 8
    if pad < 4:
        pad += 8
    return struct.pack(">IB", 1 + len(payload) + pad, pad) + payload + b"\x00" * pad


async def read_packet(reader: asyncio.StreamReader) -> bytes:
    length = struct.unpack(">I", await reader.readexactly(4))[0]
    body = await reader.readexactly(length)
    return body[1:length - body[0]]


def split_strings(data: bytes, count: int, offset: int = 0) -> tuple[list[bytes], int]:
    out = []
    for _ in range(count):
        n = struct.unpack_from(">I", data, offset)[0]
        out.append(data[offset + 4:offset + 4 + n])
        offset += 4 + n
    return out, offset


@dataclass
class HostKey:
    algorithm: str
    path: Path

    @property
    def blob(self) -> bytes:
        return base64.b64decode(self.path.with_suffix(".pub").read_text().split()[1])

    def keygen_fingerprint(self, hash_name: str) -> str:
        """Fingerprint as printed by ssh-keygen, prefix stripped."""
        out = subprocess.run(
            ["ssh-keygen", "-l", "-E", hash_name, "-f", str(self.path.with_suffix(".pub"))],
            check=True, capture_output=True, text=True,
        ).stdout.split()[1]
        return out.split(":", 1)[1]


def generate_key(directory: Path, kind: str, bits: int | None = None) -> HostKey:
    path = directory / f"host_{kind}{bits or ''}"
    cmd = ["ssh-keygen", "-q", "-t", kind, "-N", "", "-f", str(path)]
    if bits:
        cmd += ["-b", str(bits)]
    subprocess.run(cmd, check=True)
    algorithm = {"ed25519": "ssh-ed25519", "rsa": "ssh-rsa", "dsa": "ssh-dss"}.get(kind)
    if kind == "ecdsa":
        algorithm = f"ecdsa-sha2-nistp{bits or 256}"
    return HostKey(algorithm, path)


@dataclass
class MockConfig:
    banner: str = "SSH-2.0-Mock_1.0"
    pre_banner: list[str] = field(default_factory=list)
    keys: list[HostKey] = field(default_factory=list)
    kex: list[str] = field(default_factory=lambda: [
        "curve25519-sha256", "ecdh-sha2-nistp256", "diffie-hellman-group14-sha256"])
    ciphers: list[str] = field(default_factory=lambda: ["aes128-ctr", "aes256-ctr"])
    macs: list[str] = field(default_factory=lambda: ["hmac-sha2-256", "hmac-sha1"])
    compression: list[str] = field(default_factory=lambda: ["none"])
    extra_hostkey_algorithms: list[str] = field(default_factory=list)
    stall_algorithms: set[str] = field(default_factory=set)
    wrong_reply_message: int | None = None
    http: bool = False
    delay: float = 0.0

    def hostkey_algorithms(self) -> list[str]:
        names = []
        for key in self.keys:
            names.extend(RSA_ALIASES if key.algorithm == "ssh-rsa" else (key.algorithm,))
        return names + self.extra_hostkey_algorithms

    def key_for(self, algorithm: str) -> HostKey:
        if algorithm in RSA_ALIASES:
            algorithm = "ssh-rsa"
        return next(k for k in self.keys if k.algorithm == algorithm)

    def kexinit_payload(self) -> bytes:
        lists = [self.kex, self.hostkey_algorithms(), self.ciphers, self.ciphers,
                 self.macs, self.macs, self.compression, self.compression, [], []]
        return (bytes([MSG_KEXINIT]) + b"\x11" * 16 + b"".join(s(",".join(x)) for x in lists)
                + b"\x00" + b"\x00\x00\x00\x00")


class MockSSHServer:
    """Runs in a background thread with its own event loop."""

    def __init__(self, config: MockConfig, listeners: int = 1) -> None:
        self.config = config
        self.listeners = listeners
        self.ports: list[int] = []
        self.lock = threading.Lock()
        self.connections = 0
        self.active = 0
        self.max_active = 0
        self.violations: list[str] = []
        self.client_idents: list[str] = []
        self.kex_used: list[tuple[str, str]] = []
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, daemon=True)
        self._servers: list[asyncio.AbstractServer] = []

    def __enter__(self) -> "MockSSHServer":
        self._thread.start()
        asyncio.run_coroutine_threadsafe(self._start(), self.loop).result(10)
        return self

    def __exit__(self, *exc) -> None:
        asyncio.run_coroutine_threadsafe(self._stop(), self.loop).result(10)
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(5)

    @property
    def port(self) -> int:
        return self.ports[0]

    async def _start(self) -> None:
        for _ in range(self.listeners):
            server = await asyncio.start_server(self._handle, "127.0.0.1", 0, backlog=512)
            self._servers.append(server)
            self.ports.append(server.sockets[0].getsockname()[1])

    async def _stop(self) -> None:
        for server in self._servers:
            server.close()
        for task in [t for t in asyncio.all_tasks() if t is not asyncio.current_task()]:
            task.cancel()

    def _violation(self, text: str) -> None:
        with self.lock:
            self.violations.append(text)

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        with self.lock:
            self.connections += 1
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        try:
            await self._session(reader, writer)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            with self.lock:
                self.active -= 1
            writer.close()

    async def _session(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        cfg = self.config
        if cfg.delay:
            await asyncio.sleep(cfg.delay)
        if cfg.http:
            writer.write(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
            await writer.drain()
            return
        for line in cfg.pre_banner:
            writer.write(line.encode() + b"\r\n")
        writer.write(cfg.banner.encode() + b"\r\n")
        await writer.drain()
        client_line = (await reader.readuntil(b"\n")).rstrip(b"\r\n").decode()
        with self.lock:
            self.client_idents.append(client_line)

        writer.write(packet(cfg.kexinit_payload()))
        await writer.drain()
        client = await read_packet(reader)
        if client[0] != MSG_KEXINIT:
            self._violation(f"expected KEXINIT, got {client[0]}")
            return
        (kex_list, hk_list), _ = split_strings(client, 2, 17)
        kex = next((k for k in kex_list.decode().split(",") if k in cfg.kex), None)
        hk = next((h for h in hk_list.decode().split(",") if h in cfg.hostkey_algorithms()), None)
        if kex is None or hk is None:
            writer.write(packet(bytes([MSG_DISCONNECT]) + struct.pack(">I", 3) + s("no match") + s("")))
            await writer.drain()
            return
        with self.lock:
            self.kex_used.append((kex, hk))

        init = await read_packet(reader)
        if init[0] != MSG_KEX_INIT:
            self._violation(f"expected key exchange init, got {init[0]}")
            return
        self._check_ephemeral(kex, init)
        if hk in cfg.stall_algorithms:
            await reader.read()
            return

        msg = cfg.wrong_reply_message or MSG_KEX_REPLY
        if kex.startswith("diffie-hellman"):
            server_public = s(b"\x01" + os.urandom(255))
        elif kex.startswith("curve25519"):
            server_public = s(os.urandom(32))
        else:
            server_public = s(b"\x04" + os.urandom(64))
        sig_name = hk if hk in RSA_ALIASES else cfg.key_for(hk).algorithm
        signature = s(s(sig_name) + s(os.urandom(64)))
        writer.write(packet(bytes([msg]) + s(cfg.key_for(hk).blob) + server_public + signature))
        await writer.drain()

        trailing = await reader.read()
        if trailing:
            self._violation(f"client sent {len(trailing)} bytes after key exchange reply")

    def _check_ephemeral(self, kex: str, init: bytes) -> None:
        (value,), end = split_strings(init, 1, 1)
        if end != len(init):
            self._violation("trailing bytes in key exchange init")
        if kex.startswith("curve25519") and len(value) != 32:
            self._violation(f"X25519 public value of {len(value)} bytes")
        if kex.startswith("ecdh") and (len(value) != 65 or value[0] != 4):
            self._violation("bad P-256 point")
        if kex.startswith("diffie-hellman") and not 1 < int.from_bytes(value, "big") < 2 ** 2048:
            self._violation("DH value out of range")


class MockSocksProxy:
    """SOCKS5 relay that resolves names through a fixed table, on the mock's loop."""

    def __init__(self, mock: MockSSHServer, names: dict[str, tuple[str, int]]) -> None:
        self.mock = mock
        self.names = names
        self.requests: list[tuple[str, int]] = []
        self.port = 0

    def __enter__(self) -> "MockSocksProxy":
        asyncio.run_coroutine_threadsafe(self._start(), self.mock.loop).result(10)
        return self

    def __exit__(self, *exc) -> None:
        self._server.close()

    async def _start(self) -> None:
        self._server = await asyncio.start_server(self._handle, "127.0.0.1", 0)
        self.port = self._server.sockets[0].getsockname()[1]

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            ver, nmethods = await reader.readexactly(2)
            methods = await reader.readexactly(nmethods)
            if ver != 5 or 0 not in methods:
                writer.write(b"\x05\xff")
                return
            writer.write(b"\x05\x00")
            ver, cmd, _, atyp = await reader.readexactly(4)
            if atyp != 3:
                writer.write(b"\x05\x08\x00\x01" + bytes(6))
                return
            name = (await reader.readexactly((await reader.readexactly(1))[0])).decode()
            port = struct.unpack(">H", await reader.readexactly(2))[0]
            self.requests.append((name, port))
            if name not in self.names:
                writer.write(b"\x05\x04\x00\x01" + bytes(6))
                return
            try:
                up_r, up_w = await asyncio.open_connection(*self.names[name])
            except OSError:
                writer.write(b"\x05\x05\x00\x01" + bytes(6))
                return
            writer.write(b"\x05\x00\x00\x01" + bytes(6))
            await writer.drain()

            async def pipe(src, dst):
                try:
                    while data := await src.read(65536):
                        dst.write(data)
                        await dst.drain()
                except ConnectionError:
                    pass
                finally:
                    dst.close()

            await asyncio.gather(pipe(reader, up_w), pipe(up_r, writer))
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            writer.close()
