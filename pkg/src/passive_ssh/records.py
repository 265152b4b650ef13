"""Endpoints, scan records and their JSON Lines form."""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from passive_ssh.fingerprint import KeyFingerprints, hassh_server, is_md5_hex
from passive_ssh.wire import IdentificationString, KexInitSummary, parse_identification_line

ONION_RE = re.compile(r"^[a-z2-7]{56}\.onion$")


def is_onion(host: str) -> bool:
    return bool(ONION_RE.match(host))


def normalize_host(host: str) -> str:
    host = host.strip()
    if host.startswith("[") and host.endswith("]"):
        host = host[1:-1]
    lowered = host.lower()
    if is_onion(lowered):
        return lowered
    try:
        return str(ipaddress.ip_address(host))
    except ValueError:
        raise ValueError(f"host must be an IP address or v3 onion name: {host!r}") from None


@dataclass(frozen=True, order=True)
class Endpoint:
    host: str
    port: int = 22

    def __post_init__(self) -> None:
        object.__setattr__(self, "host", normalize_host(self.host))
        if not isinstance(self.port, int) or isinstance(self.port, bool) or not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port!r}")

    @property
    def is_onion(self) -> bool:
        return is_onion(self.host)

    def __str__(self) -> str:
        if ":" in self.host:
            return f"[{self.host}]:{self.port}"
        return f"{self.host}:{self.port}"

    def to_dict(self) -> dict:
        return {"host": self.host, "port": self.port}

    @classmethod
    def from_dict(cls, data: dict) -> "Endpoint":
        return cls(data["host"], int(data["port"]))


def parse_target_line(line: str, default_ports: Iterable[int] = (22,)) -> list[Endpoint]:
    """One target line: ``host``, ``host:port``, ``[v6]:port`` or ``host port``."""
    line = line.strip()
    if not line or line.startswith("#"):
        return []
    parts = line.split()
    if len(parts) == 2:
        return [Endpoint(parts[0], int(parts[1]))]
    if len(parts) != 1:
        raise ValueError(f"cannot parse target line {line!r}")
    token = parts[0]
    if token.startswith("["):
        host, _, rest = token[1:].partition("]")
        if rest.startswith(":"):
            return [Endpoint(host, int(rest[1:]))]
        return [Endpoint(host, p) for p in default_ports]
    if token.count(":") == 1:
        host, port = token.split(":")
        return [Endpoint(host, int(port))]
    return [Endpoint(token, p) for p in default_ports]


def parse_targets(lines: Iterable[str], default_ports: Iterable[int] = (22,)) -> list[Endpoint]:
    default_ports = list(default_ports)
    seen: dict[Endpoint, None] = {}
    for line in lines:
        for ep in parse_target_line(line, default_ports):
            seen.setdefault(ep, None)
    return list(seen)


@dataclass
class ScanRecord:
    endpoint: Endpoint
    observed_at: int
    banner: IdentificationString
    kexinit: KexInitSummary | None
    hassh_server: str
    host_keys: list[KeyFingerprints] = field(default_factory=list)
    skipped_lines: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not is_md5_hex(self.hassh_server):
            raise ValueError("hassh_server must be 32 lowercase hex characters")
        if self.kexinit is not None and hassh_server(self.kexinit) != self.hassh_server:
            raise ValueError("hassh_server does not match kexinit")
        digests = [k.md5_hex for k in self.host_keys]
        if len(digests) != len(set(digests)):
            raise ValueError("duplicate host keys in record")

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint.to_dict(),
            "observed_at": self.observed_at,
            "banner": self.banner.raw,
            "skipped_lines": list(self.skipped_lines),
            "kexinit": self.kexinit.to_dict() if self.kexinit is not None else None,
            "hassh_server": self.hassh_server,
            "host_keys": [k.to_dict() for k in self.host_keys],
            "errors": list(self.errors),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScanRecord":
        """Build and validate a record from its JSON form. Raises ValueError."""
        if not isinstance(data, dict):
            raise ValueError("record must be a JSON object")
        try:
            endpoint = Endpoint.from_dict(data["endpoint"])
            observed_at = data["observed_at"]
            if isinstance(observed_at, bool) or not isinstance(observed_at, (int, float)):
                raise ValueError("observed_at must be a number")
            banner = data["banner"]
            if not isinstance(banner, str):
                raise ValueError("banner must be a string")
            ident = parse_identification_line(banner.encode())
            kex = data.get("kexinit")
            kexinit = KexInitSummary.from_dict(kex) if kex is not None else None
            hassh = data.get("hassh_server")
            if hassh is None:
                if kexinit is None:
                    raise ValueError("record needs kexinit or hassh_server")
                hassh = hassh_server(kexinit)
            keys: list[KeyFingerprints] = []
            for entry in data.get("host_keys") or []:
                fp = KeyFingerprints.from_dict(entry)
                if all(k.md5_hex != fp.md5_hex for k in keys):
                    keys.append(fp)
            record = cls(
                endpoint=endpoint,
                observed_at=int(observed_at),
                banner=ident,
                kexinit=kexinit,
                hassh_server=str(hassh).lower(),
                host_keys=keys,
                skipped_lines=[str(s) for s in data.get("skipped_lines") or []],
                errors=[str(e) for e in data.get("errors") or []],
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid record: {exc!r}") from exc
        except ValueError:
            raise
        except Exception as exc:  # wire-level parse errors on the banner
            raise ValueError(f"invalid record: {exc}") from exc
        record.validate()
        return record

    @classmethod
    def from_json(cls, line: str) -> "ScanRecord":
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def read_jsonl(lines: Iterable[str]) -> Iterator[tuple[int, ScanRecord | ValueError]]:
    """Yield (line number, record or the error that line produced); blank lines skipped."""
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield lineno, ScanRecord.from_json(line)
        except ValueError as exc:
            yield lineno, exc
