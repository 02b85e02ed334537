"""Append-only in-memory log of event records, with file persistence and
the traffic statistics reported against it."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Iterator

from .protocol import DecodeError, Event, EventRecord, decode, encode

# Contract alias: persistence raises the host OS error type directly.
IoError = OSError


class SeqGapError(RuntimeError):
    """A record arrived with a non-contiguous sequence number; this is a
    coordinator logic error, never a client condition."""


@dataclass
class LogStats:
    event_count: int
    bytes: int
    duration_sec: float
    bandwidth_kbps: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "eventCount": self.event_count,
            "bytes": self.bytes,
            "durationSec": self.duration_sec,
            "bandwidthKBps": self.bandwidth_kbps,
        }


class EventLog:
    """Ordered sequence of EventRecords; records[i].seq == i + 1.

    Appends are serialized by the owning session; iterators follow a
    snapshot-plus-tail contract, so records appended while an iteration is
    underway are still yielded.
    """

    def __init__(self, started_at_ms: int = 0):
        self.started_at_ms = started_at_ms
        self._records: list[EventRecord] = []
        self._byte_size = 0

    def __len__(self) -> int:
        return len(self._records)

    @property
    def byte_size(self) -> int:
        return self._byte_size

    @property
    def records(self) -> tuple[EventRecord, ...]:
        return tuple(self._records)

    def append(self, record: EventRecord) -> None:
        if record.seq != len(self._records) + 1:
            raise SeqGapError(
                f"expected seq {len(self._records) + 1}, got {record.seq}"
            )
        self._byte_size += len(encode(Event(record=record)))
        self._records.append(record)

    def replay_iter(self) -> Iterator[EventRecord]:
        """Yield records in seq order, including any appended mid-iteration."""
        i = 0
        while i < len(self._records):
            yield self._records[i]
            i += 1

    def stats(self, now_ms: int) -> LogStats:
        if now_ms < self.started_at_ms:
            raise ValueError("now_ms precedes the log start")
        duration_sec = (now_ms - self.started_at_ms) / 1000.0
        bandwidth = self._byte_size / 1024.0 / duration_sec if duration_sec > 0 else 0.0
        return LogStats(
            event_count=len(self._records),
            bytes=self._byte_size,
            duration_sec=duration_sec,
            bandwidth_kbps=bandwidth,
        )

    def persist(self, path: str | os.PathLike) -> None:
        """Write the log as newline-delimited encoded Event messages."""
        with open(path, "wb") as f:
            for record in self._records:
                f.write(encode(Event(record=record)))


def load(path: str | os.PathLike, started_at_ms: int = 0) -> EventLog:
    """Read a persisted log back. Raises DecodeError naming the offending
    line on corrupt or truncated files."""
    log = EventLog(started_at_ms=started_at_ms)
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        return log
    if not data.endswith(b"\n"):
        line_no = data.count(b"\n") + 1
        raise DecodeError(f"line {line_no}: truncated record (missing newline)")
    for line_no, line in enumerate(data.split(b"\n")[:-1], start=1):
        try:
            msg = decode(line + b"\n")
        except DecodeError as exc:
            raise DecodeError(f"line {line_no}: {exc.reason}") from exc
        if not isinstance(msg, Event):
            raise DecodeError(f"line {line_no}: expected an Event message, got {type(msg).__name__}")
        try:
            log.append(msg.record)
        except SeqGapError as exc:
            raise DecodeError(f"line {line_no}: {exc}") from exc
    return log
