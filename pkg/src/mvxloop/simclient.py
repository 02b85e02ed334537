"""Deterministic virtual-time event-loop client.

Implements the full in-page contract against an abstract element tree:
handler and timer tables, the shared random pool, leader-side capture of
every non-deterministic action, follower-side replay, and promotion /
demotion. All timing is virtual, so every protocol and replay property is
testable without a browser.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

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
    TimerKind,
)

DEFAULT_POOL_SIZE = 100

STATE_FIELDS = ("value", "checked")


class DuplicateAuthoredId(ValueError):
    """Two nodes carry the same authored ID, or an authored ID collides
    with the assigned-ID namespace."""


class UnknownElement(KeyError):
    pass


class HashCollision(RuntimeError):
    """Two timer closures with different source text hashed identically."""


class PoolExhausted(RuntimeError):
    """The random pool ran dry: the consumer got more than one pool-depth
    ahead of the refills it received."""


class ReadOnlyError(RuntimeError):
    """The operation is forbidden in the client's current role."""


class DivergenceError(RuntimeError):
    """Leader and follower can no longer be the same program state."""


class UnknownHandler(DivergenceError):
    """A replayed record names a handler this client never registered."""


class SeqGap(DivergenceError):
    """A replayed record arrived out of order."""


@dataclass
class Closure:
    """A handler plus the canonical source text standing in for its
    toString() form; the text is what timer hashes are computed from."""

    source: str
    fn: Callable


def timer_hash(source: str) -> str:
    return hashlib.md5(source.encode("utf-8")).hexdigest()


class Element:
    """One node of the abstract tree: optional authored ID, stateful
    fields, raw (unintercepted) handler slots and live (installed) ones."""

    def __init__(self, authored_id: str | None = None):
        self.authored_id = authored_id
        self.assigned_id: str = ""
        self.parent: Element | None = None
        self.children: list[Element] = []
        self.value: str = ""
        self.checked: bool = False
        self.selection: tuple[int, int] | None = None
        self.raw_slots: dict[str, Closure] = {}
        self.live_slots: dict[str, Callable] = {}

    def add_child(self, child: "Element") -> "Element":
        child.parent = self
        self.children.append(child)
        return child

    def set_dom0(self, event_type: str, closure: Closure) -> None:
        """App-side property write; picked up by the next zero-delay sweep."""
        self.raw_slots[event_type] = closure

    def chain(self) -> list["Element"]:
        out = []
        node: Element | None = self
        while node is not None:
            out.append(node)
            node = node.parent
        return out


@dataclass
class TimerEntry:
    delay: int
    kind: TimerKind
    closure: Closure


class RandomPool:
    """Bounded FIFO of pre-agreed random values, consumed head-first."""

    def __init__(self, capacity: int = DEFAULT_POOL_SIZE):
        self.capacity = capacity
        self._values: deque[float] = deque()

    def __len__(self) -> int:
        return len(self._values)

    def contents(self) -> list[float]:
        return list(self._values)

    def push(self, value: float) -> None:
        if len(self._values) >= self.capacity:
            raise DivergenceError("random pool overflow: refill beyond capacity")
        self._values.append(value)

    def draw(self) -> float:
        if not self._values:
            raise PoolExhausted(
                f"random pool empty: consumer ran more than {self.capacity} draws ahead"
            )
        return self._values.popleft()


class VirtualClock:
    """Millisecond time source shared by every party of a simulated run."""

    def __init__(self, now_ms: int = 0):
        self.now_ms = now_ms


class Client:
    """One event-loop client. Construct with the app's tree and setup
    script, then `load(role)` — or let `handle_message` drive the whole
    lifecycle from coordinator messages."""

    def __init__(
        self,
        tree: Element,
        setup: Callable[["Client"], None] | None = None,
        clock: VirtualClock | None = None,
        rng_seed: int = 0,
        client_info: str = "sim",
        pool_size: int = DEFAULT_POOL_SIZE,
        ack_mode: bool = False,
    ):
        self.root = tree
        self._setup = setup
        self.clock = clock if clock is not None else VirtualClock()
        self.rng = random.Random(rng_seed)
        self.client_info = client_info
        self.ack_mode = ack_mode

        self.role: Role | None = None
        self.elements: dict[str, Element] = {}
        self.handler_table: dict[tuple[str, str], tuple[Closure, Element]] = {}
        self.timer_table: dict[str, TimerEntry] = {}
        self.pool = RandomPool(pool_size)
        self.app_state: dict[str, Any] = {}

        self.emit: Callable[[Message], None] = lambda msg: None
        self.synced = False
        self.ended = False
        self.swap_in_flight = False
        self.expected_seq = 1
        self.applied_seq = 0
        self.emitted_record_count = 0

        self.draw_history: list[float] = []
        self.fire_history: list[tuple[str, int]] = []
        self.timer_set_times: dict[str, int] = {}

        self._id_counter = 0
        self._loaded = False
        self._replay_target: int | None = None
        self._tasks: deque[Callable[[], None]] = deque()
        self._schedule: list[tuple[int, int, str]] = []
        self._pending: set[str] = set()
        self._tick = 0

    # -- lifecycle ---------------------------------------------------------

    def hello(self) -> Message:
        return Hello(clientInfo=self.client_info)

    def load(self, role: Role) -> None:
        if self._loaded:
            raise RuntimeError("client already loaded")
        self._loaded = True
        self.role = role
        self._assign_ids(self.root)
        if role is Role.LEADER:
            values = [self.rng.random() for _ in range(self.pool.capacity)]
            for v in values:
                self.pool.push(v)
            self.emitted_record_count += 1
            self.emit(RandomBatch(values=values))
        if self._setup is not None:
            self._setup(self)
        self._queue_sweep(self.root)
        self._drain_tasks()

    def _assign_ids(self, node: Element) -> None:
        if node.authored_id:
            node.assigned_id = node.authored_id
        else:
            self._id_counter += 1
            node.assigned_id = f"sid-{self._id_counter}"
        if node.assigned_id in self.elements:
            raise DuplicateAuthoredId(f"id {node.assigned_id!r} already taken")
        self.elements[node.assigned_id] = node
        for child in node.children:
            self._assign_ids(child)

    # -- interception paths --------------------------------------------------

    def register_handler(self, element_id: str, event_type: str, closure: Closure) -> None:
        element = self._element(element_id)
        self.handler_table[(element_id, event_type)] = (closure, element)
        if self.role is Role.LEADER:
            element.live_slots[event_type] = self._make_wrapper(element, event_type, closure)
        else:
            element.live_slots.pop(event_type, None)

    def _make_wrapper(self, element: Element, event_type: str, closure: Closure) -> Callable:
        def wrapper(payload: dict) -> None:
            self._emit_record(RecordKind.DOM_EVENT, event_type, element.assigned_id, payload)
            closure.fn(element, payload)

        return wrapper

    def create_element(self, parent: Element | str) -> Element:
        parent_el = parent if isinstance(parent, Element) else self._element(parent)
        node = Element()
        self._id_counter += 1
        node.assigned_id = f"sid-{self._id_counter}"
        if node.assigned_id in self.elements:
            raise DuplicateAuthoredId(f"id {node.assigned_id!r} already taken")
        parent_el.add_child(node)
        self.elements[node.assigned_id] = node
        self._tasks.append(lambda: self._sweep(node))
        return node

    def set_timer(self, delay_ms: int, kind: TimerKind, closure: Closure) -> str:
        if delay_ms <= 0:
            raise ValueError("timer delay must be positive")
        h = timer_hash(closure.source)
        existing = self.timer_table.get(h)
        if existing is not None and existing.closure.source != closure.source:
            raise HashCollision(f"hash {h} already maps to different source text")
        self.timer_table[h] = TimerEntry(delay=delay_ms, kind=kind, closure=closure)
        if self.role is Role.LEADER:
            self._schedule_timer(h, delay_ms)
        return h

    def _schedule_timer(self, h: str, delay_ms: int) -> None:
        self._tick += 1
        heapq.heappush(self._schedule, (self.clock.now_ms + delay_ms, self._tick, h))
        self._pending.add(h)
        self.timer_set_times[h] = self.clock.now_ms

    def random(self) -> float:
        value = self.pool.draw()
        self.draw_history.append(value)
        if self.role is Role.LEADER:
            fresh = self.rng.random()
            self.pool.push(fresh)
            self.emitted_record_count += 1
            self.emit(RandomBatch(values=[fresh]))
        return value

    # -- leader-side user actions ---------------------------------------------

    def dispatch_user_event(self, element_id: str, event_type: str, payload: dict) -> None:
        self._require_leader("dispatch a user event")
        element = self._element(element_id)
        hit = [
            (node, node.live_slots[event_type])
            for node in element.chain()
            if event_type in node.live_slots
        ]
        for _, wrapper in hit:
            wrapper(payload)
        self._drain_tasks()

    def user_set_state(self, element_id: str, field_name: str, value: Any) -> None:
        self._require_leader("change element state")
        element = self._element(element_id)
        if field_name not in STATE_FIELDS:
            raise ValueError(f"unknown stateful field {field_name!r}")
        setattr(element, field_name, value)
        payload = {"field": field_name, "value": value}
        self._emit_record(RecordKind.STATE_UPDATE, "", element_id, payload)
        self.dispatch_user_event(element_id, "onchange", payload)

    def user_select(self, element_id: str, start: int, span: int) -> None:
        self._require_leader("change the selection")
        element = self._element(element_id)
        element.selection = (start, span)
        self._emit_record(RecordKind.SELECTION_UPDATE, "", element_id, {"start": start, "span": span})

    def advance_time(self, delta_ms: int) -> None:
        """Move virtual time forward, firing due timers in order."""
        self._require_leader("advance time")
        target = self.clock.now_ms + delta_ms
        while self._schedule and self._schedule[0][0] <= target:
            fire_at, _, h = heapq.heappop(self._schedule)
            if h not in self._pending:
                continue  # cancelled by a demotion
            self.clock.now_ms = fire_at
            entry = self.timer_table[h]
            if entry.kind is TimerKind.REPEATING:
                self._tick += 1
                heapq.heappush(self._schedule, (fire_at + entry.delay, self._tick, h))
            else:
                self._pending.discard(h)
            self.fire_history.append((h, fire_at))
            self._emit_record(RecordKind.TIMER_FIRED, "", "", {"hash": h})
            entry.closure.fn()
            self._drain_tasks()
        self.clock.now_ms = target

    def initiate_promote(self) -> None:
        """Ask the coordinator to swap roles; blocks user input until the
        RoleSwap lands."""
        self._require_leader("request promotion")
        self.swap_in_flight = True
        self.emit(PromoteRequest(pendingTimers=self.pending_timer_list()))

    def pending_timer_list(self) -> list[PendingTimer]:
        out = []
        for h in sorted(self._pending):
            entry = self.timer_table[h]
            out.append(PendingTimer(hash=h, delay=entry.delay, kind=entry.kind))
        return out

    # -- follower-side replay ---------------------------------------------------

    def apply_remote(self, record: EventRecord) -> None:
        if self.role is not Role.FOLLOWER:
            raise ReadOnlyError("only a follower applies remote records")
        if record.seq != self.expected_seq:
            raise SeqGap(f"expected seq {self.expected_seq}, got {record.seq}")
        kind = record.kind
        if kind is RecordKind.DOM_EVENT:
            entry = self.handler_table.get((record.elementId, record.eventType))
            if entry is None:
                raise UnknownHandler(f"no handler for ({record.elementId}, {record.eventType})")
            closure, target = entry
            closure.fn(target, record.payload)
        elif kind is RecordKind.TIMER_FIRED:
            h = record.payload["hash"]
            entry = self.timer_table.get(h)
            if entry is None:
                raise UnknownHandler(f"no timer registered for hash {h}")
            entry.closure.fn()
        elif kind is RecordKind.STATE_UPDATE:
            element = self._element(record.elementId)
            field_name = record.payload.get("field")
            if field_name not in STATE_FIELDS:
                raise DivergenceError(f"unknown stateful field {field_name!r} in replay")
            setattr(element, field_name, record.payload.get("value"))
        elif kind is RecordKind.SELECTION_UPDATE:
            element = self._element(record.elementId)
            element.selection = (record.payload["start"], record.payload["span"])
        elif kind is RecordKind.RANDOM_REFILL:
            for v in record.payload["values"]:
                self.pool.push(v)
        self.applied_seq = record.seq
        self.expected_seq += 1
        self._drain_tasks()

    # -- promotion / demotion ---------------------------------------------------

    def promote(self, pending: list[PendingTimer]) -> None:
        self.role = Role.LEADER
        self.synced = True
        for (element_id, event_type), (closure, element) in self.handler_table.items():
            element.live_slots[event_type] = self._make_wrapper(element, event_type, closure)
        for timer in pending:
            if timer.hash not in self.timer_table:
                raise UnknownHandler(f"pending timer {timer.hash} never registered here")
            self._schedule_timer(timer.hash, timer.delay)

    def demote(self) -> None:
        self.role = Role.FOLLOWER
        for element in self.elements.values():
            element.live_slots.clear()
        self._schedule.clear()
        self._pending.clear()

    # -- transport-facing driver ---------------------------------------------------

    def handle_message(self, msg: Message) -> None:
        if isinstance(msg, RoleAssign):
            self.load(msg.role)
        elif isinstance(msg, ReplayBegin):
            self._replay_target = msg.count
            if msg.count == 0:
                self._replay_target = None
                self.emit(Ack(seq=0))
        elif isinstance(msg, Event):
            self.apply_remote(msg.record)
            if self._replay_target is not None and self.applied_seq >= self._replay_target:
                self._replay_target = None
                self.emit(Ack(seq=self.applied_seq))
            elif self.synced and self.ack_mode:
                self.emit(Ack(seq=msg.record.seq))
        elif isinstance(msg, Synced):
            self.synced = True
        elif isinstance(msg, RoleSwap):
            self.swap_in_flight = False
            if msg.newRole is Role.LEADER:
                self.promote(msg.pendingTimers)
            else:
                self.demote()
                self.expected_seq = msg.seq + 1
                self.applied_seq = msg.seq
                self.synced = True
            self.emit(Ack(seq=msg.seq))
        elif isinstance(msg, Bye):
            self.ended = True
        else:
            raise RuntimeError(f"client cannot handle {type(msg).__name__}")

    # -- equivalence oracle ---------------------------------------------------

    def state_hash(self) -> str:
        """Deterministic digest of everything both sides must agree on."""

        def node_doc(el: Element):
            return [
                el.assigned_id,
                el.value,
                el.checked,
                list(el.selection) if el.selection else None,
                [node_doc(c) for c in el.children],
            ]

        doc = {
            "tree": node_doc(self.root),
            "pool": self.pool.contents(),
            "timers": sorted(self.timer_table.keys()),
            "app": {k: self.app_state[k] for k in sorted(self.app_state)},
        }
        blob = json.dumps(doc, separators=(",", ":"), sort_keys=False)
        return hashlib.md5(blob.encode("utf-8")).hexdigest()

    # -- internals ---------------------------------------------------

    def _element(self, element_id: str) -> Element:
        try:
            return self.elements[element_id]
        except KeyError:
            raise UnknownElement(element_id) from None

    def _require_leader(self, action: str) -> None:
        if self.role is not Role.LEADER:
            raise ReadOnlyError(f"a {self.role and self.role.value or 'role-less client'} cannot {action}")
        if self.swap_in_flight:
            raise ReadOnlyError(f"cannot {action} while a role swap is in flight")

    def _emit_record(self, kind: RecordKind, event_type: str, element_id: str, payload: dict) -> None:
        record = EventRecord(
            seq=0,
            kind=kind,
            eventType=event_type,
            elementId=element_id,
            payload=payload,
            wallClockMs=0,
        )
        self.emitted_record_count += 1
        self.emit(Event(record=record))

    def _queue_sweep(self, node: Element) -> None:
        self._tasks.append(lambda: self._sweep(node))

    def _sweep(self, node: Element) -> None:
        """Zero-delay interception pass over a subtree's raw handler slots."""
        for event_type, closure in list(node.raw_slots.items()):
            self.register_handler(node.assigned_id, event_type, closure)
        node.raw_slots.clear()
        for child in node.children:
            self._sweep(child)

    def _drain_tasks(self) -> None:
        while self._tasks:
            self._tasks.popleft()()
