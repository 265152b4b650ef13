"""Ordered key-value backends for the observation store.

Keys are text and sort lexicographically; values are JSON-serialisable.
``write`` applies a batch atomically.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from typing import Any, Iterator, Mapping, Protocol

from sortedcontainers import SortedDict

from passive_ssh.errors import StorageFailure


class Backend(Protocol):
    def get(self, key: str) -> Any | None: ...

    def scan(self, prefix: str) -> Iterator[tuple[str, Any]]: ...

    def write(self, batch: Mapping[str, Any]) -> None: ...

    def close(self) -> None: ...


def _prefix_end(prefix: str) -> str:
    return prefix + "\U0010ffff"


class MemoryBackend:
    def __init__(self) -> None:
        self._data: SortedDict = SortedDict()

    def get(self, key: str) -> Any | None:
        value = self._data.get(key)
        return None if value is None else json.loads(value)

    def scan(self, prefix: str) -> Iterator[tuple[str, Any]]:
        # snapshot the key range so callers may write while iterating
        keys = list(self._data.irange(prefix, _prefix_end(prefix)))
        for key in keys:
            yield key, json.loads(self._data[key])

    def write(self, batch: Mapping[str, Any]) -> None:
        encoded = {k: json.dumps(v, sort_keys=True) for k, v in batch.items()}
        self._data.update(encoded)

    def close(self) -> None:
        pass


class SQLiteBackend:
    def __init__(self, path: str) -> None:
        try:
            self._db = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
            self._db.execute("PRAGMA journal_mode=WAL")
            self._db.execute("CREATE TABLE IF NOT EXISTS kv (k TEXT PRIMARY KEY, v TEXT NOT NULL) WITHOUT ROWID")
        except sqlite3.Error as exc:
            raise StorageFailure(f"cannot open store {path}: {exc}") from exc
        self._lock = threading.Lock()

    def get(self, key: str) -> Any | None:
        with self._lock:
            row = self._db.execute("SELECT v FROM kv WHERE k = ?", (key,)).fetchone()
        return None if row is None else json.loads(row[0])

    def scan(self, prefix: str) -> Iterator[tuple[str, Any]]:
        with self._lock:
            rows = self._db.execute(
                "SELECT k, v FROM kv WHERE k >= ? AND k < ? ORDER BY k", (prefix, _prefix_end(prefix))
            ).fetchall()
        for key, value in rows:
            yield key, json.loads(value)

    def write(self, batch: Mapping[str, Any]) -> None:
        rows = [(k, json.dumps(v, sort_keys=True)) for k, v in batch.items()]
        with self._lock:
            try:
                self._db.execute("BEGIN IMMEDIATE")
                self._db.executemany("INSERT OR REPLACE INTO kv (k, v) VALUES (?, ?)", rows)
                self._db.execute("COMMIT")
            except sqlite3.Error as exc:
                if self._db.in_transaction:
                    self._db.execute("ROLLBACK")
                raise StorageFailure(f"write failed: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._db.close()
