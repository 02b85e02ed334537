"""The headless session service, transport-free.

One Session owns one page's lifecycle: it assigns roles first-come, records
phase-1 events, drives phase-2 replay into a late-joining follower, relays
phase-3 traffic live, and executes the phase-4 role swap. Transports feed it
decoded messages through `handle`; it returns the messages to send. All
mutation must be serialized by the caller (one message processed to
completion before the next).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Hashable

from .eventlog import EventLog
from .metrics import Metrics, UnknownSeq
from .protocol import (
    Ack,
    Bye,
    Event,
    EventRecord,
    Hello,
    Message,
    PendingTimer,
    PromoteRequest,
    RandomBatch,
    RecordKind,
    ReplayBegin,
    Role,
    RoleAssign,
    RoleSwap,
    Synced,
)

SWAP_TIMEOUT_MS = 5000

ConnId = Hashable
Sends = list[tuple[ConnId, Message]]


class Phase(Enum):
    SINGLE_VERSION = "SingleVersion"
    STATE_TRANSFER = "StateTransfer"
    MVX = "Mvx"
    SWAPPING = "Swapping"


LEGAL_TRANSITIONS = frozenset(
    {
        (Phase.SINGLE_VERSION, Phase.STATE_TRANSFER),
        (Phase.STATE_TRANSFER, Phase.MVX),
        (Phase.MVX, Phase.SWAPPING),
        (Phase.SWAPPING, Phase.MVX),
        (Phase.MVX, Phase.SINGLE_VERSION),
        (Phase.STATE_TRANSFER, Phase.SINGLE_VERSION),
    }
)


class SessionError(RuntimeError):
    """Base for every typed rejection the session can produce."""


class SessionFullError(SessionError):
    pass


class NotLeaderError(SessionError):
    pass


class PhaseError(SessionError):
    pass


class RangeError(SessionError):
    pass


class UnexpectedMessageError(SessionError):
    pass


@dataclass
class _SwapInFlight:
    old_leader: ConnId
    new_leader: ConnId
    seq: int
    pending: list[PendingTimer]
    started_ms: float
    acked: set[ConnId]


class Session:
    """Phase machine plus log plus relay for exactly one leader/follower pair."""

    def __init__(self, clock: Callable[[], float] | None = None, ack_mode: bool = False,
                 swap_timeout_ms: float = SWAP_TIMEOUT_MS):
        self._clock = clock if clock is not None else _zero_clock
        self.ack_mode = ack_mode
        self.swap_timeout_ms = swap_timeout_ms

        now = int(self._clock())
        self.phase = Phase.SINGLE_VERSION
        self.log = EventLog(started_at_ms=now)
        self.metrics = Metrics()
        self.leader: ConnId | None = None
        self.follower: ConnId | None = None
        self.random_seen = 0
        self.last_promote_ms: float | None = None
        self.ended = False
        self.end_reason: str | None = None

        self.transitions: list[tuple[Phase, Phase]] = []
        self.rejections: list[tuple[str, str]] = []

        self._forwarded = 0            # records already sent to the follower
        self._replay_count: int | None = None
        self._follower_connected_ms: float = 0.0
        self._swap: _SwapInFlight | None = None

    # -- dispatch ---------------------------------------------------------

    def handle(self, conn: ConnId, msg: Message) -> Sends:
        """Process one decoded client message; returns (conn, message) pairs
        to transmit. Raises a typed SessionError on every illegal input and
        guarantees the session state is untouched when it does."""
        if isinstance(msg, Hello):
            return self.on_connect(conn)
        if isinstance(msg, Event):
            return self.on_leader_event(conn, msg.record)
        if isinstance(msg, RandomBatch):
            return self.on_random_refill(conn, msg.values)
        if isinstance(msg, PromoteRequest):
            return self.on_promote(conn, msg.pendingTimers)
        if isinstance(msg, Ack):
            return self.on_ack(conn, msg.seq)
        if isinstance(msg, Bye):
            return self.on_disconnect(conn)
        self._reject(UnexpectedMessageError(f"clients never send {type(msg).__name__}"))
        raise AssertionError("unreachable")

    # -- connection lifecycle ---------------------------------------------------

    def on_connect(self, conn: ConnId) -> Sends:
        if self.ended:
            return [(conn, Bye())]
        if self.leader is None:
            self.leader = conn
            return [(conn, RoleAssign(role=Role.LEADER))]
        if self.follower is None:
            self.follower = conn
            self._follower_connected_ms = self._clock()
            self._forwarded = 0
            self._replay_count = len(self.log)
            self._transition(Phase.STATE_TRANSFER)
            sends: Sends = [
                (conn, RoleAssign(role=Role.FOLLOWER)),
                (conn, ReplayBegin(count=self._replay_count)),
            ]
            sends.extend(self._drain())
            return sends
        self._reject(SessionFullError("session already has a leader and a follower"))
        raise AssertionError("unreachable")

    def on_disconnect(self, conn: ConnId) -> Sends:
        if self.phase is Phase.SWAPPING:
            # a vanishing client can never complete the swap; revert first
            sends = self._abort_swap("peer disconnected mid-swap")
            sends += self.on_disconnect(conn)
            return sends
        if conn == self.follower:
            self.follower = None
            self._replay_count = None
            self._forwarded = 0
            if self.phase in (Phase.STATE_TRANSFER, Phase.MVX):
                self._transition(Phase.SINGLE_VERSION)
            return []
        if conn == self.leader:
            self.leader = None
            self.ended = True
            if self.phase in (Phase.STATE_TRANSFER, Phase.MVX):
                # the design only supports losing the follower; surface it
                self.end_reason = "leader disconnected mid-session"
                remaining = self.follower
                self.follower = None
                self._transition(Phase.SINGLE_VERSION)
                return [(remaining, Bye())] if remaining is not None else []
            self.end_reason = "leader disconnected"
        return []

    # -- phase 1-3 traffic ---------------------------------------------------

    def on_leader_event(self, conn: ConnId, record: EventRecord) -> Sends:
        self._require_leader(conn)
        stamped = replace(
            record,
            seq=len(self.log) + 1,
            wallClockMs=max(0, int(self._clock()) - self.log.started_at_ms),
        )
        self.log.append(stamped)
        return self._drain()

    def on_random_refill(self, conn: ConnId, values: list[float]) -> Sends:
        self._require_leader(conn)
        for v in values:
            if not (0.0 <= v < 1.0):
                self._reject(RangeError(f"random value {v!r} outside [0,1)"))
        record = EventRecord(
            seq=0,
            kind=RecordKind.RANDOM_REFILL,
            eventType="",
            elementId="",
            payload={"values": list(values)},
            wallClockMs=0,
        )
        sends = self.on_leader_event(conn, record)
        self.random_seen += len(values)
        return sends

    def on_ack(self, conn: ConnId, seq: int) -> Sends:
        if self.phase is Phase.STATE_TRANSFER and conn == self.follower:
            if self._replay_count is not None and seq >= self._replay_count:
                return self.on_synced()
            return []  # catch-up progress
        if self.phase is Phase.SWAPPING:
            return self._on_swap_ack(conn, seq)
        if self.phase is Phase.MVX and self.ack_mode and conn == self.follower:
            try:
                self.metrics.record_ack(seq, self._clock())
            except UnknownSeq:
                self._reject(UnexpectedMessageError(f"ack for unsent or re-acked seq {seq}"))
            return []
        self._reject(UnexpectedMessageError(f"unexpected ack (seq {seq}) in {self.phase.value}"))
        raise AssertionError("unreachable")

    def on_synced(self) -> Sends:
        if self.phase is not Phase.STATE_TRANSFER:
            self._reject(PhaseError(f"synced only applies to state transfer, not {self.phase.value}"))
        self.metrics.catchup_ms = self._clock() - self._follower_connected_ms
        self._replay_count = None
        self._transition(Phase.MVX)
        return [(self.follower, Synced())]

    # -- phase 4 ---------------------------------------------------

    def on_promote(self, conn: ConnId, pending: list[PendingTimer]) -> Sends:
        if self.phase is not Phase.MVX:
            self._reject(PhaseError(f"promotion requires live MVX, not {self.phase.value}"))
        self._require_leader(conn)
        assert self.leader is not None and self.follower is not None
        self._swap = _SwapInFlight(
            old_leader=self.leader,
            new_leader=self.follower,
            seq=len(self.log),
            pending=list(pending),
            started_ms=self._clock(),
            acked=set(),
        )
        self._transition(Phase.SWAPPING)
        return [
            (self._swap.old_leader, RoleSwap(newRole=Role.FOLLOWER, seq=self._swap.seq, pendingTimers=[])),
            (self._swap.new_leader, RoleSwap(newRole=Role.LEADER, seq=self._swap.seq,
                                             pendingTimers=list(pending))),
        ]

    def _on_swap_ack(self, conn: ConnId, seq: int) -> Sends:
        swap = self._swap
        assert swap is not None
        if self.ack_mode and conn == swap.new_leader and self.metrics.has_pending(seq):
            # in-order channel: the event ack for the final seq precedes the swap ack
            self.metrics.record_ack(seq, self._clock())
            return []
        if seq != swap.seq or conn not in (swap.old_leader, swap.new_leader):
            self._reject(UnexpectedMessageError(f"stray ack (seq {seq}) during swap"))
        if conn in swap.acked:
            self._reject(UnexpectedMessageError("duplicate swap ack"))
        swap.acked.add(conn)
        if conn == swap.new_leader:
            # the promoted side is live the moment it applies the swap; its
            # records must relay to the demoting side (whose in-order stream
            # already carries the RoleSwap) even before that side acks
            self.leader, self.follower = swap.new_leader, swap.old_leader
            self._forwarded = swap.seq
        if swap.acked != {swap.old_leader, swap.new_leader}:
            return []
        self.last_promote_ms = self._clock()
        self.metrics.promote_ms = self.last_promote_ms - swap.started_ms
        self._swap = None
        self._transition(Phase.MVX)
        return []

    def check_swap_timeout(self, now_ms: float | None = None) -> Sends:
        """Abort a swap that never completed; call periodically from the
        transport's watchdog."""
        if self.phase is not Phase.SWAPPING or self._swap is None:
            return []
        now = self._clock() if now_ms is None else now_ms
        if now - self._swap.started_ms < self.swap_timeout_ms:
            return []
        return self._abort_swap("swap timed out")

    def _abort_swap(self, reason: str) -> Sends:
        swap = self._swap
        assert swap is not None
        self.rejections.append(("SwapAborted", reason))
        sends: Sends = [
            (swap.old_leader, RoleSwap(newRole=Role.LEADER, seq=swap.seq, pendingTimers=swap.pending)),
            (swap.new_leader, RoleSwap(newRole=Role.FOLLOWER, seq=swap.seq, pendingTimers=[])),
        ]
        # undo a half-committed swap; the re-demoted side produced every
        # record past the swap seq itself, so it is already caught up
        self.leader, self.follower = swap.old_leader, swap.new_leader
        self._forwarded = len(self.log)
        self._swap = None
        self._transition(Phase.MVX)
        return sends

    # -- report ---------------------------------------------------

    def report(self, now_ms: float | None = None):
        now = self._clock() if now_ms is None else now_ms
        return self.metrics.report(self.log.stats(int(now)))

    # -- internals ---------------------------------------------------

    def _require_leader(self, conn: ConnId) -> None:
        if self.phase is Phase.SWAPPING:
            swap = self._swap
            if swap is None or conn != swap.new_leader or conn not in swap.acked:
                self._reject(NotLeaderError("no leader exists during a role swap"))
            return
        if conn != self.leader:
            self._reject(NotLeaderError("only the leader may send events"))

    def _drain(self) -> Sends:
        if self.follower is None:
            return []
        sends: Sends = []
        records = self.log.records
        while self._forwarded < len(records):
            record = records[self._forwarded]
            self._forwarded += 1
            if self.ack_mode and self.phase is Phase.MVX:
                self.metrics.on_sent(record.seq, self._clock())
            sends.append((self.follower, Event(record=record)))
        return sends

    def _transition(self, target: Phase) -> None:
        if (self.phase, target) not in LEGAL_TRANSITIONS:
            raise AssertionError(f"illegal phase transition {self.phase} -> {target}")
        self.transitions.append((self.phase, target))
        self.phase = target
        self._check_invariants()

    def _check_invariants(self) -> None:
        if self.phase is Phase.SINGLE_VERSION:
            assert self.follower is None, "single-version phase cannot hold a follower"
        else:
            assert self.leader is not None and self.follower is not None, (
                f"{self.phase.value} requires both connections"
            )

    def _reject(self, error: SessionError) -> None:
        self.rejections.append((type(error).__name__, str(error)))
        raise error


def _zero_clock() -> float:
    return 0.0
