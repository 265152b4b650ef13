"""Historical store of scan observations with first-seen/last-seen pivots.

Logical layout over an ordered key-value backend (components URL-quoted)::

    ep/<host>/<port>                  endpoint first/last seen
    epb|epk|eph/<host>/<port>/<v>     banner, key digest, hassh seen on endpoint
    key/<md5>                         algorithm, blob, sha256 of a key
    keyh|hassh|banner/<v>/<host>/<port>   reverse indexes
    bn/<banner>                       distinct banners
    obs/<seq>                         ingested records, in order
    meta/seq, meta/stats              counters
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator
from urllib.parse import quote, unquote

from passive_ssh.backends import Backend, MemoryBackend, SQLiteBackend
from passive_ssh.errors import NotFound
from passive_ssh.fingerprint import normalize_md5
from passive_ssh.records import Endpoint, ScanRecord, normalize_host

Span = tuple[int, int]


def _q(text: str) -> str:
    return quote(text, safe="")


def _ep(endpoint: Endpoint) -> str:
    return f"{_q(endpoint.host)}/{endpoint.port:05d}"


def _parse_ep(host: str, port: str) -> Endpoint:
    return Endpoint(unquote(host), int(port))


def _widen(span: list | None, t: int) -> tuple[list, bool]:
    """Return the span widened to cover t, and whether it was new."""
    if span is None:
        return [t, t], True
    return [min(span[0], t), max(span[1], t)], False


@dataclass(frozen=True)
class Sighting:
    endpoint: Endpoint
    first_seen: int
    last_seen: int

    def to_dict(self) -> dict:
        return {**self.endpoint.to_dict(), "first_seen": self.first_seen, "last_seen": self.last_seen}


@dataclass
class HostHistory:
    endpoint: Endpoint
    first_seen: int
    last_seen: int
    banners: dict[str, Span] = field(default_factory=dict)
    key_digests: dict[str, Span] = field(default_factory=dict)
    hasshes: dict[str, Span] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def spans(d: dict[str, Span], name: str) -> list[dict]:
            return [{name: k, "first_seen": f, "last_seen": l} for k, (f, l) in sorted(d.items())]

        return {
            "endpoint": self.endpoint.to_dict(),
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
            "banners": spans(self.banners, "banner"),
            "keys": spans(self.key_digests, "md5"),
            "hasshes": spans(self.hasshes, "hassh"),
        }


@dataclass
class KeyIndexEntry:
    md5_hex: str
    algorithm: str
    base64_blob: str
    sha256_b64: str
    hosts: list[Sighting]

    @property
    def first_seen(self) -> int:
        return min(s.first_seen for s in self.hosts)

    @property
    def last_seen(self) -> int:
        return max(s.last_seen for s in self.hosts)

    def to_dict(self) -> dict:
        return {
            "md5": self.md5_hex,
            "algorithm": self.algorithm,
            "sha256": self.sha256_b64,
            "base64": self.base64_blob,
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
            "hosts": [s.to_dict() for s in self.hosts],
        }


@dataclass(frozen=True)
class IngestOutcome:
    new_host: bool
    new_keys: int
    new_banner: bool

    def to_dict(self) -> dict:
        return {"new_host": self.new_host, "new_keys": self.new_keys, "new_banner": self.new_banner}


@dataclass
class StoreStats:
    banner_count: int = 0
    host_count: int = 0
    endpoint_count: int = 0
    onion_count: int = 0
    key_counts_by_type: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "banner_count": self.banner_count,
            "host_count": self.host_count,
            "endpoint_count": self.endpoint_count,
            "onion_count": self.onion_count,
            "key_counts_by_type": dict(sorted(self.key_counts_by_type.items())),
        }

    @classmethod
    def from_records(cls, records: Iterator[ScanRecord]) -> "StoreStats":
        """Recount from scratch over a sequence of records."""
        banners, hosts, endpoints = set(), set(), set()
        keys: dict[str, str] = {}
        for r in records:
            banners.add(r.banner.raw)
            hosts.add(r.endpoint.host)
            endpoints.add(r.endpoint)
            for k in r.host_keys:
                keys.setdefault(k.md5_hex, k.algorithm)
        return cls(
            banner_count=len(banners),
            host_count=len(hosts),
            endpoint_count=len(endpoints),
            onion_count=sum(1 for e in endpoints if e.is_onion),
            key_counts_by_type=dict(Counter(keys.values())),
        )


@dataclass(frozen=True)
class OnionMatch:
    onion: Endpoint
    clearnet: Endpoint
    md5_hex: str

    def to_dict(self) -> dict:
        return {"onion": self.onion.to_dict(), "clearnet": self.clearnet.to_dict(), "md5": self.md5_hex}


class Store:
    """Thread-safe observation store; every ingest is one atomic batch."""

    def __init__(self, backend: Backend | None = None) -> None:
        self.backend = backend if backend is not None else MemoryBackend()
        self._lock = threading.RLock()

    @classmethod
    def open(cls, path: str | None) -> "Store":
        """SQLite-backed store at ``path``, or in-memory when path is None/':memory:'."""
        if path in (None, "", ":memory:"):
            return cls(MemoryBackend())
        return cls(SQLiteBackend(path))

    def close(self) -> None:
        self.backend.close()

    # -- ingest ----------------------------------------------------------------

    def ingest(self, record: ScanRecord) -> IngestOutcome:
        record.validate()
        t = int(record.observed_at)
        ep = _ep(record.endpoint)
        banner = record.banner.raw
        b = self.backend
        with self._lock:
            batch: dict = {}
            stats = b.get("meta/stats") or StoreStats().to_dict()

            host_known = any(True for _ in b.scan(f"ep/{_q(record.endpoint.host)}/"))
            ep_row = b.get(f"ep/{ep}")
            new_endpoint = ep_row is None
            span, _ = _widen(None if new_endpoint else [ep_row["first_seen"], ep_row["last_seen"]], t)
            batch[f"ep/{ep}"] = {"first_seen": span[0], "last_seen": span[1]}
            if new_endpoint:
                stats["endpoint_count"] += 1
                stats["onion_count"] += record.endpoint.is_onion
                stats["host_count"] += not host_known

            span, new_banner = _widen(b.get(f"epb/{ep}/{_q(banner)}"), t)
            batch[f"epb/{ep}/{_q(banner)}"] = span
            batch[f"banner/{_q(banner)}/{ep}"] = _widen(b.get(f"banner/{_q(banner)}/{ep}"), t)[0]
            span, banner_global_new = _widen(b.get(f"bn/{_q(banner)}"), t)
            batch[f"bn/{_q(banner)}"] = span
            stats["banner_count"] += banner_global_new

            h = record.hassh_server
            batch[f"eph/{ep}/{h}"] = _widen(b.get(f"eph/{ep}/{h}"), t)[0]
            batch[f"hassh/{h}/{ep}"] = _widen(b.get(f"hassh/{h}/{ep}"), t)[0]

            new_keys = 0
            by_type = stats["key_counts_by_type"]
            for key in record.host_keys:
                md5 = key.md5_hex
                span, is_new = _widen(b.get(f"epk/{ep}/{md5}"), t)
                batch[f"epk/{ep}/{md5}"] = span
                new_keys += is_new
                batch[f"keyh/{md5}/{ep}"] = _widen(b.get(f"keyh/{md5}/{ep}"), t)[0]
                if b.get(f"key/{md5}") is None and f"key/{md5}" not in batch:
                    batch[f"key/{md5}"] = {
                        "algorithm": key.algorithm,
                        "base64": key.base64_blob,
                        "sha256": key.sha256_b64,
                    }
                    by_type[key.algorithm] = by_type.get(key.algorithm, 0) + 1

            seq = (b.get("meta/seq") or 0) + 1
            batch["meta/seq"] = seq
            batch[f"obs/{seq:012d}"] = record.to_dict()
            batch["meta/stats"] = stats
            b.write(batch)
        return IngestOutcome(new_host=new_endpoint, new_keys=new_keys, new_banner=new_banner)

    # -- lookups -----------------------------------------------------------------

    def _spans(self, prefix: str) -> dict[str, Span]:
        return {unquote(k[len(prefix):]): (v[0], v[1]) for k, v in self.backend.scan(prefix)}

    def _sightings(self, prefix: str) -> list[Sighting]:
        out = []
        for key, (first, last) in self.backend.scan(prefix):
            host, port = key[len(prefix):].split("/")
            out.append(Sighting(_parse_ep(host, port), first, last))
        return out

    def host_lookup(self, host: str, port: int | None = None) -> list[HostHistory]:
        """Histories of every port seen on ``host`` (or just ``port``)."""
        host = normalize_host(host)
        prefix = f"ep/{_q(host)}/" + (f"{port:05d}" if port is not None else "")
        with self._lock:
            rows = list(self.backend.scan(prefix))
            histories = []
            for key, row in rows:
                endpoint = _parse_ep(*key[3:].split("/"))
                ep = _ep(endpoint)
                histories.append(HostHistory(
                    endpoint=endpoint,
                    first_seen=row["first_seen"],
                    last_seen=row["last_seen"],
                    banners=self._spans(f"epb/{ep}/"),
                    key_digests=self._spans(f"epk/{ep}/"),
                    hasshes=self._spans(f"eph/{ep}/"),
                ))
        if not histories:
            raise NotFound(f"host {host} not found")
        return histories

    def key_lookup(self, md5: str) -> KeyIndexEntry:
        md5 = normalize_md5(md5)
        with self._lock:
            meta = self.backend.get(f"key/{md5}")
            hosts = self._sightings(f"keyh/{md5}/")
        if meta is None:
            raise NotFound(f"key {md5} not found")
        return KeyIndexEntry(md5, meta["algorithm"], meta["base64"], meta["sha256"], hosts)

    def hassh_lookup(self, digest: str) -> list[Sighting]:
        digest = normalize_md5(digest)
        with self._lock:
            hosts = self._sightings(f"hassh/{digest}/")
        if not hosts:
            raise NotFound(f"hassh {digest} not found")
        return hosts

    def banner_lookup(self, banner: str) -> list[Sighting]:
        with self._lock:
            hosts = self._sightings(f"banner/{_q(banner)}/")
        if not hosts:
            raise NotFound("banner not found")
        return hosts

    def list_banners(self) -> list[str]:
        with self._lock:
            return [unquote(k[3:]) for k, _ in self.backend.scan("bn/")]

    def list_keys(self) -> list[dict]:
        with self._lock:
            return [{"md5": k[4:], **v} for k, v in self.backend.scan("key/")]

    def stats(self) -> StoreStats:
        with self._lock:
            raw = self.backend.get("meta/stats")
        if raw is None:
            return StoreStats()
        return StoreStats(**raw)

    def correlate_onions(self) -> list[OnionMatch]:
        """Onion/clearnet endpoint pairs that presented the same host key."""
        by_key: dict[str, list[Endpoint]] = {}
        with self._lock:
            for key, _ in self.backend.scan("keyh/"):
                md5, host, port = key[5:].split("/")
                by_key.setdefault(md5, []).append(_parse_ep(host, port))
        matches = []
        for md5, endpoints in by_key.items():
            onions = [e for e in endpoints if e.is_onion]
            clear = [e for e in endpoints if not e.is_onion]
            matches.extend(OnionMatch(o, c, md5) for o in onions for c in clear)
        return matches

    def records(self) -> Iterator[ScanRecord]:
        """Replay every ingested record in ingest order."""
        with self._lock:
            rows = list(self.backend.scan("obs/"))
        for _, data in rows:
            yield ScanRecord.from_dict(data)

    def record_count(self) -> int:
        return self.backend.get("meta/seq") or 0

    # -- full enumeration, for consistency checks --------------------------------

    def host_key_pairs(self) -> set[tuple[Endpoint, str]]:
        with self._lock:
            return {(_parse_ep(*k[4:].split("/")[:2]), k.rsplit("/", 1)[1]) for k, _ in self.backend.scan("epk/")}

    def key_host_pairs(self) -> set[tuple[Endpoint, str]]:
        with self._lock:
            out = set()
            for k, _ in self.backend.scan("keyh/"):
                md5, host, port = k[5:].split("/")
                out.add((_parse_ep(host, port), md5))
            return out
