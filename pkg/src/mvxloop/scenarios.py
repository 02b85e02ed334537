"""End-to-end simulated scenarios over loopback sockets.

Coordinator and both clients run in one process on separate threads but
talk only through the real wire protocol. Used by the `simulate` CLI
command and by the acceptance suite's RTT harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .coordinator import Phase
from .eventlog import EventLog
from .metrics import MetricsReport, RttSample
from .protocol import Role
from .server import CoordinatorServer, WireClientDriver, monotonic_ms
from .simclient import DivergenceError, VirtualClock
from .workload import Step, WorkloadError, make_fixture_client

SCENARIOS = ("record-only", "update", "mvx-rtt")


@dataclass
class ScenarioResult:
    scenario: str
    report: MetricsReport
    log: EventLog
    samples: list[RttSample] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


def run_scenario(scenario: str, steps: list[Step], seed: int = 0, port: int = 0,
                 log_path: str | None = None) -> ScenarioResult:
    if scenario == "record-only":
        return _record_only(steps, seed, port, log_path)
    if scenario == "update":
        return _update(steps, seed, port, log_path)
    if scenario == "mvx-rtt":
        return _mvx_rtt(steps, seed, port, log_path)
    raise WorkloadError(f"unknown scenario {scenario!r}")


def _split_at_promote(steps: list[Step]) -> tuple[list[Step], list[Step]]:
    for i, step in enumerate(steps):
        if step.op == "promote":
            return steps[:i], steps[i + 1 :]
    half = len(steps) // 2
    return steps[:half], steps[half:]


def _reject_promote(steps: list[Step], scenario: str) -> None:
    if any(s.op == "promote" for s in steps):
        raise WorkloadError(f"the {scenario} scenario cannot run a promote step")


def _record_only(steps: list[Step], seed: int, port: int, log_path: str | None) -> ScenarioResult:
    _reject_promote(steps, "record-only")
    clock = VirtualClock()
    # stats use the leader's virtual time, so bandwidth is workload-determined
    with CoordinatorServer(port=port, clock=lambda: float(clock.now_ms), log_path=log_path) as server:
        leader = WireClientDriver(
            make_fixture_client(clock=clock, rng_seed=seed * 2 + 1, client_info="leader"),
            server.host, server.port,
        )
        leader.wait_for(lambda: leader.client.role is Role.LEADER, what="role assignment")
        for step in steps:
            leader.run_step(step)
        expected = leader.client.emitted_record_count
        leader.wait_for(lambda: len(server.session.log) >= expected, what="log to settle")
        result = ScenarioResult(
            scenario="record-only",
            report=server.session.report(),
            log=server.session.log,
            extra={"durationVirtualMs": clock.now_ms},
        )
        server.persist_log()
        leader.close()
        return result


def _update(steps: list[Step], seed: int, port: int, log_path: str | None) -> ScenarioResult:
    first, second = _split_at_promote(steps)
    clock = VirtualClock()
    with CoordinatorServer(port=port, clock=monotonic_ms, log_path=log_path) as server:
        a = WireClientDriver(
            make_fixture_client(clock=clock, rng_seed=seed * 2 + 1, client_info="old-leader"),
            server.host, server.port,
        )
        a.wait_for(lambda: a.client.role is Role.LEADER, what="role assignment")
        for step in first:
            a.run_step(step)
        b = WireClientDriver(
            make_fixture_client(clock=clock, rng_seed=seed * 2 + 2, client_info="new-leader"),
            server.host, server.port,
        )
        b.wait_for(lambda: b.client.synced, what="follower catch-up")
        a.initiate_promote()
        b.wait_for(lambda: b.client.role is Role.LEADER, what="promotion")
        a.wait_for(lambda: a.client.role is Role.FOLLOWER, what="demotion")
        for step in second:
            b.run_step(step)
        total = a.client.emitted_record_count + b.client.emitted_record_count
        b.wait_for(lambda: len(server.session.log) >= total, what="log to settle")
        a.wait_for(lambda: a.client.applied_seq >= total, what="old leader catch-up")
        with a.lock, b.lock:
            hash_a, hash_b = a.client.state_hash(), b.client.state_hash()
        result = ScenarioResult(
            scenario="update",
            report=server.session.report(),
            log=server.session.log,
            extra={
                "stateHashOldLeader": hash_a,
                "stateHashNewLeader": hash_b,
                "catchupMs": server.session.metrics.catchup_ms,
                "promoteMs": server.session.metrics.promote_ms,
            },
        )
        server.persist_log()
        a.close()
        b.close()
    if hash_a != hash_b:
        raise DivergenceError(
            f"state hashes differ after seq {result.log.records[-1].seq if len(result.log) else 0}: "
            f"{hash_a} != {hash_b}"
        )
    return result


def _mvx_rtt(steps: list[Step], seed: int, port: int, log_path: str | None) -> ScenarioResult:
    _reject_promote(steps, "mvx-rtt")
    clock = VirtualClock()
    with CoordinatorServer(port=port, ack_mode=True, clock=monotonic_ms, log_path=log_path) as server:
        a = WireClientDriver(
            make_fixture_client(clock=clock, rng_seed=seed * 2 + 1, client_info="leader", ack_mode=True),
            server.host, server.port,
        )
        a.wait_for(lambda: a.client.role is Role.LEADER, what="role assignment")
        b = WireClientDriver(
            make_fixture_client(clock=clock, rng_seed=seed * 2 + 2, client_info="follower", ack_mode=True),
            server.host, server.port,
        )
        b.wait_for(lambda: b.client.synced, what="follower sync")
        base = len(server.session.log)  # records replayed before MVX began
        for step in steps:
            a.run_step(step)
        expected = a.client.emitted_record_count
        b.wait_for(lambda: len(server.session.metrics.samples) >= expected - base,
                   what="acknowledgements", timeout=30.0)
        with a.lock, b.lock:
            hash_a, hash_b = a.client.state_hash(), b.client.state_hash()
        result = ScenarioResult(
            scenario="mvx-rtt",
            report=server.session.report(),
            log=server.session.log,
            samples=list(server.session.metrics.samples),
            extra={"mvxEventCount": len(server.session.log) - base},
        )
        server.persist_log()
        a.close()
        b.close()
    if hash_a != hash_b:
        raise DivergenceError(f"state hashes differ: {hash_a} != {hash_b}")
    return result
