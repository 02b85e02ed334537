"""Measurements of a running session: per-event round-trip time via
follower acknowledgements, catch-up duration, and promotion pause."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Any

from .eventlog import LogStats


class UnknownSeq(KeyError):
    """An acknowledgement arrived for a sequence number that was never
    sent, or was already acknowledged."""


@dataclass
class RttSample:
    seq: int
    sent_ms: float
    ack_ms: float

    @property
    def rtt_ms(self) -> float:
        return self.ack_ms - self.sent_ms


@dataclass
class MetricsReport:
    event_count: int
    log_bytes: int
    bandwidth_kbps: float
    catchup_ms: float
    promote_ms: float
    rtt_mean_ms: float | None
    rtt_std_ms: float | None
    rtt_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "eventCount": self.event_count,
            "logBytes": self.log_bytes,
            "bandwidthKBps": self.bandwidth_kbps,
            "catchupMs": self.catchup_ms,
            "promoteMs": self.promote_ms,
            "rttMeanMs": self.rtt_mean_ms,
            "rttStdMs": self.rtt_std_ms,
            "rttCount": self.rtt_count,
        }

    def format_table(self) -> str:
        rows = [
            ("events", str(self.event_count)),
            ("log bytes", str(self.log_bytes)),
            ("bandwidth KB/s", f"{self.bandwidth_kbps:.3f}"),
            ("catch-up ms", f"{self.catchup_ms:.1f}"),
            ("promote ms", f"{self.promote_ms:.1f}"),
        ]
        if self.rtt_mean_ms is not None:
            rows.append(("rtt mean ms", f"{self.rtt_mean_ms:.3f}"))
            rows.append(("rtt std ms", f"{self.rtt_std_ms:.3f}"))
            rows.append(("rtt samples", str(self.rtt_count)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


class Metrics:
    """Sample store owned by the session executor."""

    def __init__(self):
        self.samples: list[RttSample] = []
        self.catchup_ms: float = 0.0
        self.promote_ms: float = 0.0
        self._pending: dict[int, float] = {}

    def on_sent(self, seq: int, now_ms: float) -> None:
        self._pending.setdefault(seq, now_ms)

    def record_ack(self, seq: int, now_ms: float) -> None:
        sent = self._pending.pop(seq, None)
        if sent is None:
            raise UnknownSeq(seq)
        self.samples.append(RttSample(seq=seq, sent_ms=sent, ack_ms=now_ms))

    def has_pending(self, seq: int) -> bool:
        return seq in self._pending

    def report(self, log_stats: LogStats | None = None) -> MetricsReport:
        rtts = [s.rtt_ms for s in self.samples]
        return MetricsReport(
            event_count=log_stats.event_count if log_stats else 0,
            log_bytes=log_stats.bytes if log_stats else 0,
            bandwidth_kbps=log_stats.bandwidth_kbps if log_stats else 0.0,
            catchup_ms=self.catchup_ms,
            promote_ms=self.promote_ms,
            rtt_mean_ms=statistics.fmean(rtts) if rtts else None,
            rtt_std_ms=statistics.pstdev(rtts) if rtts else None,
            rtt_count=len(rtts),
        )
