"""In-process harness: one coordinator session and two simulated clients,
exchanging encoded bytes through FIFO queues.

Every hop passes through the real codec, so property suites exercise the
wire format on every record while staying deterministic (no sockets, no
threads). The step executor here is also what the CLI's socket-based
scenarios reuse.
"""

from __future__ import annotations

from collections import deque
from typing import Callable

from .coordinator import Phase, Session
from .protocol import decode, encode
from .simclient import Client, VirtualClock
from .workload import Step, WorkloadError, make_fixture_client


class HarnessError(RuntimeError):
    pass


def apply_step(client: Client, step: Step) -> None:
    """Run one workload directive as the current leader. `promote` is a
    session-level directive and must be handled by the caller."""
    if step.op == "event":
        client.dispatch_user_event(step.element_id, step.event_type, dict(step.payload))
    elif step.op == "timer-advance":
        client.advance_time(step.ms)
    elif step.op == "create":
        client.dispatch_user_event(step.element_id, "oncreate", {})
    elif step.op == "set":
        client.user_set_state(step.element_id, step.field_name, step.value)
    elif step.op == "select":
        client.user_select(step.element_id, step.start, step.span)
    else:
        raise WorkloadError(f"step {step.op!r} cannot run on a client")


class DirectHarness:
    """Deterministic pump between two clients and one session."""

    def __init__(
        self,
        seed: int = 0,
        ack_mode: bool = False,
        client_factory: Callable[..., Client] = make_fixture_client,
    ):
        self.clock = VirtualClock()
        self.session = Session(clock=lambda: float(self.clock.now_ms), ack_mode=ack_mode)
        self._queue: deque[tuple[str, str, bytes]] = deque()  # (dest, src, line)
        self.clients: dict[str, Client] = {}
        for name, salt in (("A", 1), ("B", 2)):
            client = client_factory(
                clock=self.clock, rng_seed=seed * 2 + salt, client_info=name, ack_mode=ack_mode
            )
            client.emit = self._emitter(name)
            self.clients[name] = client
        self.leader_name = "A"

    def _emitter(self, name: str):
        return lambda msg: self._queue.append(("coord", name, encode(msg)))

    @property
    def leader(self) -> Client:
        return self.clients[self.leader_name]

    @property
    def follower(self) -> Client:
        return self.clients["B" if self.leader_name == "A" else "A"]

    def connect(self, name: str) -> None:
        self._queue.append(("coord", name, encode(self.clients[name].hello())))
        self.pump()

    def pump(self) -> None:
        """Deliver queued lines in FIFO order until quiescent."""
        while self._queue:
            dest, src, line = self._queue.popleft()
            msg = decode(line)
            if dest == "coord":
                for conn, out in self.session.handle(src, msg):
                    self._queue.append((conn, "coord", encode(out)))
            else:
                self.clients[dest].handle_message(msg)

    def run_steps(self, steps: list[Step]) -> None:
        for step in steps:
            if step.op == "promote":
                self.promote()
            else:
                apply_step(self.leader, step)
                self.pump()

    def start_leader(self) -> None:
        self.connect("A")
        if self.session.phase is not Phase.SINGLE_VERSION or self.session.leader != "A":
            raise HarnessError("leader connect did not reach single-version phase")

    def attach_follower(self) -> None:
        self.connect("B")
        if self.session.phase is not Phase.MVX:
            raise HarnessError(f"follower never synced; phase is {self.session.phase}")

    def promote(self) -> None:
        self.leader.initiate_promote()
        self.pump()
        if self.session.phase is not Phase.MVX:
            raise HarnessError("swap did not complete")
        self.leader_name = str(self.session.leader)

    def state_hashes(self) -> tuple[str, str]:
        return self.clients["A"].state_hash(), self.clients["B"].state_hash()


def run_record_only(steps: list[Step], seed: int = 0) -> DirectHarness:
    harness = DirectHarness(seed=seed)
    harness.start_leader()
    harness.run_steps(steps)
    return harness


def run_record_then_replay(steps: list[Step], seed: int = 0) -> DirectHarness:
    """Phase 1 for the whole workload, then a phase-2 catch-up."""
    harness = run_record_only(steps, seed=seed)
    harness.attach_follower()
    return harness


def run_with_midpoint_promotion(steps: list[Step], seed: int = 0) -> DirectHarness:
    """First half on the original leader, swap, second half on the new one.

    An explicit `promote` step overrides the midpoint split.
    """
    if any(s.op == "promote" for s in steps):
        split = next(i for i, s in enumerate(steps) if s.op == "promote")
        first, second = steps[:split], steps[split + 1 :]
    else:
        split = len(steps) // 2
        first, second = steps[:split], steps[split:]
    harness = DirectHarness(seed=seed)
    harness.start_leader()
    harness.run_steps(first)
    harness.attach_follower()
    harness.promote()
    harness.run_steps(second)
    return harness
