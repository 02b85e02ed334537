import pytest

from mvxloop.coordinator import (
    LEGAL_TRANSITIONS,
    NotLeaderError,
    Phase,
    PhaseError,
    RangeError,
    Session,
    SessionFullError,
    UnexpectedMessageError,
)
from mvxloop.protocol import (
    Ack,
    Bye,
    Event,
    EventRecord,
    Hello,
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


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def dom_event(element_id="sid-2", event_type="onclick"):
    return EventRecord(seq=0, kind=RecordKind.DOM_EVENT, eventType=event_type,
                       elementId=element_id, payload={"clientX": 1}, wallClockMs=0)


def connected_pair(clock=None, ack_mode=False):
    session = Session(clock=clock or FakeClock(), ack_mode=ack_mode)
    session.handle("A", Hello(clientInfo="a"))
    sends = session.handle("B", Hello(clientInfo="b"))
    return session, sends


def to_mvx(clock=None, ack_mode=False, prime_events=0):
    session = Session(clock=clock or FakeClock(), ack_mode=ack_mode)
    session.handle("A", Hello(clientInfo="a"))
    for _ in range(prime_events):
        session.handle("A", Event(record=dom_event()))
    session.handle("B", Hello(clientInfo="b"))
    session.handle("B", Ack(seq=prime_events))
    assert session.phase is Phase.MVX
    return session


def test_first_connection_becomes_leader():
    session = Session()
    sends = session.handle("A", Hello(clientInfo="a"))
    assert sends == [("A", RoleAssign(role=Role.LEADER))]
    assert session.phase is Phase.SINGLE_VERSION


def test_second_connection_gets_replay_stream():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    for _ in range(3):
        session.handle("A", Event(record=dom_event()))
    sends = session.handle("B", Hello(clientInfo="b"))
    assert sends[0] == ("B", RoleAssign(role=Role.FOLLOWER))
    assert sends[1] == ("B", ReplayBegin(count=3))
    assert [m.record.seq for _, m in sends[2:]] == [1, 2, 3]
    assert session.phase is Phase.STATE_TRANSFER


def test_third_connection_rejected():
    session, _ = connected_pair()
    with pytest.raises(SessionFullError):
        session.handle("C", Hello(clientInfo="c"))


def test_phase1_event_appended_and_forwarded_to_nobody():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    sends = session.handle("A", Event(record=dom_event()))
    assert sends == []
    assert len(session.log) == 1
    assert session.log.records[0].seq == 1


def test_follower_event_rejected():
    session, _ = connected_pair()
    with pytest.raises(NotLeaderError):
        session.handle("B", Event(record=dom_event()))


def test_live_events_land_behind_replay_stream():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    for _ in range(4):
        session.handle("A", Event(record=dom_event()))
    received = []
    sends = session.handle("B", Hello(clientInfo="b"))
    received += [m.record.seq for conn, m in sends if isinstance(m, Event)]
    # two live events arrive while B is still catching up
    for _ in range(2):
        sends = session.handle("A", Event(record=dom_event()))
        received += [m.record.seq for conn, m in sends if isinstance(m, Event)]
    session.handle("B", Ack(seq=4))
    assert received == [1, 2, 3, 4, 5, 6]
    assert session.phase is Phase.MVX


def test_random_refill_wrapped_as_one_record():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    session.handle("A", RandomBatch(values=[0.5] * 100))
    assert len(session.log) == 1
    rec = session.log.records[0]
    assert rec.kind is RecordKind.RANDOM_REFILL
    assert len(rec.payload["values"]) == 100
    assert session.random_seen == 100
    session.handle("A", RandomBatch(values=[0.25]))
    assert session.random_seen == 101


def test_random_refill_range_checked():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    with pytest.raises(RangeError):
        session.on_random_refill("A", [1.5])
    assert len(session.log) == 0


def test_synced_transition_and_phase_error():
    session, _ = connected_pair()
    sends = session.handle("B", Ack(seq=0))
    assert sends == [("B", Synced())]
    assert session.phase is Phase.MVX
    fresh = Session()
    fresh.handle("A", Hello(clientInfo="a"))
    with pytest.raises(PhaseError):
        fresh.on_synced()


def test_catchup_duration_uses_injected_clock():
    clock = FakeClock()
    session = Session(clock=clock)
    session.handle("A", Hello(clientInfo="a"))
    session.handle("A", Event(record=dom_event()))
    clock.now = 1000.0
    session.handle("B", Hello(clientInfo="b"))
    clock.now = 1750.0
    session.handle("B", Ack(seq=1))
    assert session.metrics.catchup_ms == 750.0


def test_promote_swaps_roles_and_relays_pending_timers():
    clock = FakeClock()
    session = to_mvx(clock=clock)
    pending = [
        PendingTimer(hash="a" * 32, delay=100, kind=TimerKind.ONE_SHOT),
        PendingTimer(hash="b" * 32, delay=50, kind=TimerKind.REPEATING),
    ]
    clock.now = 2000.0
    sends = session.handle("A", PromoteRequest(pendingTimers=pending))
    assert session.phase is Phase.SWAPPING
    by_conn = dict(sends)
    assert by_conn["A"] == RoleSwap(newRole=Role.FOLLOWER, seq=0, pendingTimers=[])
    assert by_conn["B"] == RoleSwap(newRole=Role.LEADER, seq=0, pendingTimers=pending)
    session.handle("A", Ack(seq=0))
    assert session.phase is Phase.SWAPPING
    clock.now = 2040.0
    session.handle("B", Ack(seq=0))
    assert session.phase is Phase.MVX
    assert (session.leader, session.follower) == ("B", "A")
    assert session.metrics.promote_ms == 40.0
    assert session.last_promote_ms == 2040.0


def test_promote_from_follower_rejected():
    session = to_mvx()
    with pytest.raises(NotLeaderError):
        session.handle("B", PromoteRequest(pendingTimers=[]))


def test_promote_outside_mvx_rejected():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    with pytest.raises(PhaseError):
        session.handle("A", PromoteRequest(pendingTimers=[]))


def test_events_during_swap_rejected():
    session = to_mvx()
    session.handle("A", PromoteRequest(pendingTimers=[]))
    with pytest.raises(NotLeaderError):
        session.handle("A", Event(record=dom_event()))
    with pytest.raises(NotLeaderError):
        session.handle("B", Event(record=dom_event()))
    assert session.phase is Phase.SWAPPING
    assert len(session.log) == 0


def test_new_leader_events_accepted_once_it_acked_mid_swap():
    # the promoted side is live as soon as it applies the swap; its records
    # relay to the demoting side even before that side's own ack lands
    session = to_mvx()
    session.handle("A", PromoteRequest(pendingTimers=[]))
    session.handle("B", Ack(seq=0))
    assert session.phase is Phase.SWAPPING
    sends = session.handle("B", Event(record=dom_event()))
    assert sends == [("A", Event(record=session.log.records[0]))]
    with pytest.raises(NotLeaderError):
        session.handle("A", Event(record=dom_event()))
    session.handle("A", Ack(seq=0))
    assert session.phase is Phase.MVX
    assert (session.leader, session.follower) == ("B", "A")


def test_events_flow_from_new_leader_after_swap():
    session = to_mvx()
    session.handle("A", PromoteRequest(pendingTimers=[]))
    session.handle("A", Ack(seq=0))
    session.handle("B", Ack(seq=0))
    sends = session.handle("B", Event(record=dom_event()))
    assert [conn for conn, _ in sends] == ["A"]
    assert sends[0][1].record.seq == 1
    with pytest.raises(NotLeaderError):
        session.handle("A", Event(record=dom_event()))


def test_swap_timeout_reverts_roles():
    clock = FakeClock()
    session = to_mvx(clock=clock)
    session.handle("A", PromoteRequest(pendingTimers=[]))
    clock.now = 4000.0
    assert session.check_swap_timeout() == []
    clock.now = 6000.0
    sends = session.check_swap_timeout()
    assert session.phase is Phase.MVX
    assert (session.leader, session.follower) == ("A", "B")
    roles = {conn: m.newRole for conn, m in sends}
    assert roles == {"A": Role.LEADER, "B": Role.FOLLOWER}


def test_follower_disconnect_reverts_to_phase1_with_log_intact():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    session.handle("A", Event(record=dom_event()))
    session.handle("B", Hello(clientInfo="b"))
    session.handle("B", Ack(seq=1))
    session.handle("B", Bye())
    assert session.phase is Phase.SINGLE_VERSION
    assert len(session.log) == 1
    assert not session.ended


def test_old_follower_disconnect_after_swap_keeps_new_leader():
    session = to_mvx()
    session.handle("A", PromoteRequest(pendingTimers=[]))
    session.handle("A", Ack(seq=0))
    session.handle("B", Ack(seq=0))
    session.handle("A", Bye())
    assert session.phase is Phase.SINGLE_VERSION
    assert session.leader == "B"
    assert not session.ended


def test_leader_disconnect_in_phase1_ends_session():
    session = Session()
    session.handle("A", Hello(clientInfo="a"))
    session.handle("A", Bye())
    assert session.ended
    sends = session.handle("C", Hello(clientInfo="c"))
    assert sends == [("C", Bye())]


def test_leader_disconnect_mid_mvx_surfaces_error():
    session = to_mvx()
    sends = session.handle("A", Bye())
    assert session.ended
    assert "leader" in (session.end_reason or "")
    assert sends == [("B", Bye())]


def test_ack_mode_records_rtt():
    clock = FakeClock()
    session = to_mvx(clock=clock, ack_mode=True)
    clock.now = 10.0
    session.handle("A", Event(record=dom_event()))
    clock.now = 14.0
    session.handle("B", Ack(seq=1))
    assert len(session.metrics.samples) == 1
    assert session.metrics.samples[0].rtt_ms == 4.0
    with pytest.raises(UnexpectedMessageError):
        session.handle("B", Ack(seq=1))


def test_log_monotone_and_transitions_legal_over_lifecycle():
    session = to_mvx(prime_events=3)
    session.handle("A", Event(record=dom_event()))
    session.handle("A", PromoteRequest(pendingTimers=[]))
    session.handle("A", Ack(seq=4))
    session.handle("B", Ack(seq=4))
    session.handle("B", Event(record=dom_event()))
    session.handle("A", Bye())
    assert all(t in LEGAL_TRANSITIONS for t in session.transitions)
