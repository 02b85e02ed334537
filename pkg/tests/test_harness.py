import pytest

from mvxloop.coordinator import NotLeaderError, Phase
from mvxloop.harness import (
    DirectHarness,
    run_record_only,
    run_record_then_replay,
    run_with_midpoint_promotion,
)
from mvxloop.protocol import Event, EventRecord, RecordKind
from mvxloop.workload import (
    Step,
    WorkloadError,
    format_workload,
    generate_workload,
    nicedit_like_script,
    parse_workload,
)


def test_workload_round_trips_through_text():
    steps = generate_workload(seed=5, approx_records=120)
    assert parse_workload(format_workload(steps)) == steps


def test_workload_parse_errors():
    with pytest.raises(WorkloadError, match="line 1"):
        parse_workload("warp sid-1\n")
    with pytest.raises(WorkloadError):
        parse_workload("event sid-1 onclick\n")
    with pytest.raises(WorkloadError):
        parse_workload("timer-advance -5\n")


def test_record_then_replay_small_workload_hashes_equal():
    steps = generate_workload(seed=1, approx_records=150)
    harness = run_record_then_replay(steps, seed=1)
    a, b = harness.state_hashes()
    assert a == b
    assert harness.session.phase is Phase.MVX
    assert harness.follower.applied_seq == len(harness.session.log)


def test_live_mvx_events_keep_follower_in_step():
    steps = generate_workload(seed=2, approx_records=100)
    harness = run_record_then_replay(steps[: len(steps) // 2], seed=2)
    harness.run_steps(steps[len(steps) // 2 :])
    a, b = harness.state_hashes()
    assert a == b


def test_midpoint_promotion_hashes_equal():
    steps = generate_workload(seed=3, approx_records=160)
    harness = run_with_midpoint_promotion(steps, seed=3)
    assert harness.leader_name == "B"
    a, b = harness.state_hashes()
    assert a == b


def test_explicit_promote_step_honored():
    steps = [
        Step(op="event", element_id="save_button", event_type="onclick", payload={}),
        Step(op="promote"),
        Step(op="event", element_id="cancel_button", event_type="onclick", payload={}),
    ]
    harness = run_with_midpoint_promotion(steps, seed=4)
    assert harness.leader_name == "B"
    assert harness.clients["B"].app_state["cancels"] == 1
    assert harness.state_hashes()[0] == harness.state_hashes()[1]


def test_rogue_event_during_swap_is_rejected():
    harness = run_record_then_replay(generate_workload(seed=6, approx_records=60), seed=6)
    harness.leader.initiate_promote()
    # deliver only the PromoteRequest so the session sits in Swapping
    dest, src, line = harness._queue.popleft()
    from mvxloop.protocol import decode, encode

    for conn, out in harness.session.handle(src, decode(line)):
        harness._queue.append((conn, "coord", encode(out)))
    assert harness.session.phase is Phase.SWAPPING
    rogue = EventRecord(seq=0, kind=RecordKind.DOM_EVENT, eventType="onclick",
                        elementId="sid-1", payload={}, wallClockMs=0)
    with pytest.raises(NotLeaderError):
        harness.session.handle("A", Event(record=rogue))
    harness.pump()
    assert harness.session.phase is Phase.MVX


def test_record_only_stats_deterministic():
    steps = generate_workload(seed=7, approx_records=200)
    h1 = run_record_only(steps, seed=7)
    h2 = run_record_only(steps, seed=7)
    assert len(h1.session.log) == len(h2.session.log)
    assert h1.session.log.byte_size == h2.session.log.byte_size
    assert h1.clock.now_ms == h2.clock.now_ms > 0


def test_generated_workload_record_count_near_target():
    for seed in range(3):
        harness = run_record_only(generate_workload(seed=seed, approx_records=1000), seed=seed)
        assert 800 <= len(harness.session.log) <= 1600


def test_nicedit_script_magnitude():
    harness = run_record_only(nicedit_like_script())
    assert 70 <= len(harness.session.log) <= 80
    assert len(harness.session.log) == harness.leader.emitted_record_count
