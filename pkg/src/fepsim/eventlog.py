"""Run event log (JSON lines) and the stream hashes used for paired runs.

Every record carries the simulation time, a per-run sequence number and a
``kind``; the remaining fields are kind-specific.  Records are kept in
memory while the run executes and serialized deterministically (sorted keys,
fixed separators), so identical runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable, Iterator


class EventLog:
    """Append-only record list; a disabled log drops records cheaply."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[dict[str, Any]] = []

    def add(self, record: dict[str, Any]) -> None:
        if self.enabled:
            self.records.append(record)

    def dumps(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in self.records
        )

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def read_log(path: str) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


class StreamHash:
    """Running SHA-256 over a sequence of pipe-joined record fields."""

    def __init__(self) -> None:
        self._hash = hashlib.sha256()

    def update(self, *parts: Any) -> None:
        self._hash.update("|".join(repr(p) for p in parts).encode("ascii"))
        self._hash.update(b";")

    def hexdigest(self) -> str:
        return self._hash.hexdigest()
