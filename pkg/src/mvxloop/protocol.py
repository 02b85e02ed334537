"""Wire protocol: every message exchanged between clients and the coordinator.

Messages travel as newline-delimited JSON, one message per line, UTF-8,
with a top-level field "t" carrying the tag. The byte format is pinned by
golden tests and documented in protocol.md at the repository root.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

__all__ = [
    "Role",
    "RecordKind",
    "TimerKind",
    "EventRecord",
    "PendingTimer",
    "Hello",
    "RoleAssign",
    "RandomBatch",
    "Event",
    "ReplayBegin",
    "Synced",
    "PromoteRequest",
    "RoleSwap",
    "Ack",
    "Bye",
    "Message",
    "EncodeError",
    "DecodeError",
    "encode",
    "decode",
]

MAX_SAFE_INT = 2**53 - 1

_HASH_RE = re.compile(r"^[0-9a-f]{32}$")


class EncodeError(ValueError):
    """A message contains a value the wire format cannot carry (e.g. NaN)."""


class DecodeError(ValueError):
    """A line is not a well-formed message. The connection, not the session,
    should be dropped when this surfaces from a transport."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Role(Enum):
    LEADER = "Leader"
    FOLLOWER = "Follower"


class RecordKind(Enum):
    DOM_EVENT = "DomEvent"
    TIMER_FIRED = "TimerFired"
    STATE_UPDATE = "StateUpdate"
    SELECTION_UPDATE = "SelectionUpdate"
    RANDOM_REFILL = "RandomRefill"


class TimerKind(Enum):
    ONE_SHOT = "OneShot"
    REPEATING = "Repeating"


@dataclass
class EventRecord:
    """One captured unit of non-determinism.

    `seq` is the session-global total order, assigned by the coordinator on
    receipt (clients send 0, meaning unassigned). `wallClockMs` is stamped by
    the coordinator as milliseconds since session start. Field names match
    the wire keys exactly.
    """

    seq: int
    kind: RecordKind
    eventType: str
    elementId: str
    payload: dict[str, Any]
    wallClockMs: int


@dataclass
class PendingTimer:
    """A timer that was live on the demoted client and must be rescheduled,
    with its original full delay, on the promoted one."""

    hash: str
    delay: int
    kind: TimerKind


@dataclass
class Hello:
    clientInfo: str


@dataclass
class RoleAssign:
    role: Role


@dataclass
class RandomBatch:
    values: list[float]


@dataclass
class Event:
    record: EventRecord


@dataclass
class ReplayBegin:
    count: int


@dataclass
class Synced:
    pass


@dataclass
class PromoteRequest:
    pendingTimers: list[PendingTimer] = field(default_factory=list)


@dataclass
class RoleSwap:
    newRole: Role
    seq: int
    pendingTimers: list[PendingTimer] = field(default_factory=list)


@dataclass
class Ack:
    seq: int


@dataclass
class Bye:
    pass


Message = Union[
    Hello,
    RoleAssign,
    RandomBatch,
    Event,
    ReplayBegin,
    Synced,
    PromoteRequest,
    RoleSwap,
    Ack,
    Bye,
]

# Kinds whose records carry no element ID / no event type.
_ELEMENTLESS_KINDS = (RecordKind.TIMER_FIRED, RecordKind.RANDOM_REFILL)


def _fail(reason: str) -> None:
    raise DecodeError(reason)


def _check_int(value: Any, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        _fail(f"{name} must be >= {minimum}, got {value}")
    if value > MAX_SAFE_INT:
        _fail(f"{name} exceeds 2^53-1")
    return value


def _check_str(value: Any, name: str) -> str:
    if not isinstance(value, str):
        _fail(f"{name} must be a string, got {value!r}")
    return value


def _check_hash(value: Any, name: str = "hash") -> str:
    _check_str(value, name)
    if not _HASH_RE.match(value):
        _fail(f"{name} must be 32 lowercase hex chars, got {value!r}")
    return value


def _check_unit_values(values: Any, name: str = "values") -> list[float]:
    if not isinstance(values, list) or not values:
        _fail(f"{name} must be a non-empty array")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            _fail(f"{name} entries must be numbers, got {v!r}")
        if not (0.0 <= v < 1.0):
            _fail(f"{name} entries must lie in [0,1), got {v!r}")
    return values


def validate_record(record: EventRecord) -> None:
    """Enforce the EventRecord invariants. Raises DecodeError on violation."""
    _check_int(record.seq, "seq")
    _check_int(record.wallClockMs, "wallClockMs")
    if not isinstance(record.kind, RecordKind):
        _fail(f"unknown record kind {record.kind!r}")
    _check_str(record.eventType, "eventType")
    _check_str(record.elementId, "elementId")
    if not isinstance(record.payload, dict):
        _fail("payload must be an object")
    kind = record.kind
    if kind is RecordKind.DOM_EVENT:
        if not record.eventType or not record.elementId:
            _fail("DomEvent requires non-empty eventType and elementId")
    else:
        if record.eventType:
            _fail(f"{kind.value} must have empty eventType")
    if kind in _ELEMENTLESS_KINDS and record.elementId:
        _fail(f"{kind.value} must have empty elementId")
    if kind is RecordKind.TIMER_FIRED:
        _check_hash(record.payload.get("hash"), "payload.hash")
    if kind is RecordKind.RANDOM_REFILL:
        _check_unit_values(record.payload.get("values"), "payload.values")


def _record_to_fields(record: EventRecord) -> dict[str, Any]:
    return {
        "seq": record.seq,
        "kind": record.kind.value,
        "eventType": record.eventType,
        "elementId": record.elementId,
        "payload": record.payload,
        "wallClockMs": record.wallClockMs,
    }


def _timer_to_fields(timer: PendingTimer) -> dict[str, Any]:
    return {"hash": timer.hash, "delay": timer.delay, "kind": timer.kind.value}


def _validate_pending_timer(timer: PendingTimer) -> None:
    _check_hash(timer.hash)
    if isinstance(timer.delay, bool) or not isinstance(timer.delay, int) or timer.delay <= 0:
        _fail(f"pending timer delay must be a positive integer, got {timer.delay!r}")
    if not isinstance(timer.kind, TimerKind):
        _fail(f"unknown timer kind {timer.kind!r}")


def _message_to_fields(msg: Message) -> dict[str, Any]:
    if isinstance(msg, Hello):
        return {"t": "Hello", "clientInfo": _check_str(msg.clientInfo, "clientInfo")}
    if isinstance(msg, RoleAssign):
        if not isinstance(msg.role, Role):
            _fail(f"unknown role {msg.role!r}")
        return {"t": "RoleAssign", "role": msg.role.value}
    if isinstance(msg, RandomBatch):
        return {"t": "RandomBatch", "values": _check_unit_values(msg.values)}
    if isinstance(msg, Event):
        validate_record(msg.record)
        return {"t": "Event", **_record_to_fields(msg.record)}
    if isinstance(msg, ReplayBegin):
        return {"t": "ReplayBegin", "count": _check_int(msg.count, "count")}
    if isinstance(msg, Synced):
        return {"t": "Synced"}
    if isinstance(msg, PromoteRequest):
        for t in msg.pendingTimers:
            _validate_pending_timer(t)
        return {"t": "PromoteRequest", "pendingTimers": [_timer_to_fields(t) for t in msg.pendingTimers]}
    if isinstance(msg, RoleSwap):
        if not isinstance(msg.newRole, Role):
            _fail(f"unknown role {msg.newRole!r}")
        for t in msg.pendingTimers:
            _validate_pending_timer(t)
        return {
            "t": "RoleSwap",
            "newRole": msg.newRole.value,
            "seq": _check_int(msg.seq, "seq"),
            "pendingTimers": [_timer_to_fields(t) for t in msg.pendingTimers],
        }
    if isinstance(msg, Ack):
        return {"t": "Ack", "seq": _check_int(msg.seq, "seq")}
    if isinstance(msg, Bye):
        return {"t": "Bye"}
    raise EncodeError(f"not a protocol message: {msg!r}")


def encode(msg: Message) -> bytes:
    """Serialize a message to one newline-terminated line of JSON text.

    Raises EncodeError if the message is malformed or carries a value JSON
    cannot represent (NaN, infinities, non-JSON types) — such a value
    always signals a bug in the emitting client.
    """
    try:
        fields = _message_to_fields(msg)
    except DecodeError as exc:  # shared validators report through DecodeError
        raise EncodeError(str(exc)) from exc
    try:
        text = json.dumps(fields, separators=(",", ":"), allow_nan=False)
    except (ValueError, TypeError) as exc:
        raise EncodeError(f"unrepresentable value in message: {exc}") from exc
    if "\n" in text:
        raise EncodeError("encoded message must not contain interior newlines")
    return text.encode("utf-8") + b"\n"


def _take(fields: dict[str, Any], tag: str, names: tuple[str, ...]) -> list[Any]:
    missing = [n for n in names if n not in fields]
    if missing:
        _fail(f"{tag} missing field(s) {missing}")
    extra = set(fields) - set(names)
    if extra:
        _fail(f"{tag} has unexpected field(s) {sorted(extra)}")
    return [fields[n] for n in names]


def _parse_role(value: Any) -> Role:
    try:
        return Role(_check_str(value, "role"))
    except ValueError:
        _fail(f"unknown role {value!r}")
    raise AssertionError("unreachable")


def _parse_record(fields: dict[str, Any]) -> EventRecord:
    seq, kind, event_type, element_id, payload, wall = _take(
        fields, "Event", ("seq", "kind", "eventType", "elementId", "payload", "wallClockMs")
    )
    try:
        kind_val = RecordKind(_check_str(kind, "kind"))
    except ValueError:
        _fail(f"unknown record kind {kind!r}")
    record = EventRecord(
        seq=seq,
        kind=kind_val,
        eventType=event_type,
        elementId=element_id,
        payload=payload,
        wallClockMs=wall,
    )
    validate_record(record)
    return record


def _parse_pending_timers(value: Any) -> list[PendingTimer]:
    if not isinstance(value, list):
        _fail("pendingTimers must be an array")
    timers = []
    for entry in value:
        if not isinstance(entry, dict):
            _fail("pending timer must be an object")
        h, delay, kind = _take(entry, "PendingTimer", ("hash", "delay", "kind"))
        try:
            kind_val = TimerKind(_check_str(kind, "kind"))
        except ValueError:
            _fail(f"unknown timer kind {kind!r}")
        timer = PendingTimer(hash=h, delay=delay, kind=kind_val)
        _validate_pending_timer(timer)
        timers.append(timer)
    return timers


def decode(line: bytes | str) -> Message:
    """Parse one encoded message. Inverse of encode on encode's image.

    Accepts the line with or without its trailing newline (WebSocket frames
    omit it). Never raises anything but DecodeError on arbitrary input.
    """
    if isinstance(line, bytes):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"not UTF-8: {exc}") from exc
    else:
        text = line
    text = text[:-1] if text.endswith("\n") else text
    if "\n" in text:
        _fail("more than one line passed to decode")
    try:
        fields = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc}") from exc
    if not isinstance(fields, dict):
        _fail("message must be a JSON object")
    tag = fields.pop("t", None)
    if tag is None:
        _fail('message missing tag field "t"')

    if tag == "Hello":
        (info,) = _take(fields, tag, ("clientInfo",))
        return Hello(clientInfo=_check_str(info, "clientInfo"))
    if tag == "RoleAssign":
        (role,) = _take(fields, tag, ("role",))
        return RoleAssign(role=_parse_role(role))
    if tag == "RandomBatch":
        (values,) = _take(fields, tag, ("values",))
        return RandomBatch(values=_check_unit_values(values))
    if tag == "Event":
        return Event(record=_parse_record(fields))
    if tag == "ReplayBegin":
        (count,) = _take(fields, tag, ("count",))
        return ReplayBegin(count=_check_int(count, "count"))
    if tag == "Synced":
        _take(fields, tag, ())
        return Synced()
    if tag == "PromoteRequest":
        (timers,) = _take(fields, tag, ("pendingTimers",))
        return PromoteRequest(pendingTimers=_parse_pending_timers(timers))
    if tag == "RoleSwap":
        role, seq, timers = _take(fields, tag, ("newRole", "seq", "pendingTimers"))
        return RoleSwap(
            newRole=_parse_role(role),
            seq=_check_int(seq, "seq"),
            pendingTimers=_parse_pending_timers(timers),
        )
    if tag == "Ack":
        (seq,) = _take(fields, tag, ("seq",))
        return Ack(seq=_check_int(seq, "seq"))
    if tag == "Bye":
        _take(fields, tag, ())
        return Bye()
    _fail(f"unknown tag {tag!r}")
    raise AssertionError("unreachable")
