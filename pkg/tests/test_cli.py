import json
import os
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from mvxloop import cli
from mvxloop.workload import format_workload, generate_workload, nicedit_like_script

FIXTURES = Path(__file__).parent / "fixtures"


def write_workload(tmp_path, steps, name="workload.txt"):
    path = tmp_path / name
    path.write_text(format_workload(steps))
    return path


def test_usage_error_exit_code():
    assert cli.main([]) == 4
    assert cli.main(["simulate", "nope.txt"]) == 4  # missing --scenario
    assert cli.main(["--help"]) == 0


def test_gen_then_record_only(tmp_path, capsys):
    out = tmp_path / "w.txt"
    assert cli.main(["gen", "--seed", "3", "--records", "120", "-o", str(out)]) == 0
    assert cli.main(["simulate", str(out), "--scenario", "record-only"]) == 0
    printed = capsys.readouterr().out
    assert "scenario: record-only" in printed
    assert "events" in printed


def test_record_only_empty_workload(tmp_path, capsys):
    path = tmp_path / "empty.txt"
    path.write_text("")
    assert cli.main(["simulate", str(path), "--scenario", "record-only"]) == 0
    printed = capsys.readouterr().out
    # only the leader's initial random batch is logged
    assert "events          1" in printed


def test_update_scenario_exit_zero_and_report(tmp_path, capsys):
    path = write_workload(tmp_path, generate_workload(seed=9, approx_records=150))
    report_dir = tmp_path / "report"
    assert cli.main(["simulate", str(path), "--scenario", "update",
                     "--report-dir", str(report_dir)]) == 0
    printed = capsys.readouterr().out
    assert "state hashes equal" in printed
    doc = json.loads((report_dir / "report.json").read_text())
    assert doc["stateHashOldLeader"] == doc["stateHashNewLeader"]
    assert (report_dir / "records.csv").exists()
    assert (report_dir / "log_growth.png").exists()


def test_mvx_rtt_scenario(tmp_path, capsys):
    path = write_workload(tmp_path, nicedit_like_script())
    report_dir = tmp_path / "rtt"
    assert cli.main(["simulate", str(path), "--scenario", "mvx-rtt",
                     "--report-dir", str(report_dir)]) == 0
    printed = capsys.readouterr().out
    assert "rtt mean ms" in printed
    assert (report_dir / "rtt_samples.csv").exists()
    assert (report_dir / "rtt.png").exists()


def test_update_divergence_exits_2(tmp_path, monkeypatch, capsys):
    from mvxloop.simclient import Client

    # force the two clients to disagree: no divergence may pass silently
    monkeypatch.setattr(Client, "state_hash", lambda self: f"poisoned-{id(self):x}")
    path = write_workload(tmp_path, generate_workload(seed=13, approx_records=60))
    assert cli.main(["simulate", str(path), "--scenario", "update"]) == 2
    assert "divergence" in capsys.readouterr().err


def test_promote_step_rejected_outside_update(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("promote\n")
    assert cli.main(["simulate", str(path), "--scenario", "record-only"]) == 4


def test_simulate_log_dir_reloads(tmp_path):
    from mvxloop import eventlog

    path = write_workload(tmp_path, generate_workload(seed=4, approx_records=80))
    log_dir = tmp_path / "logs"
    assert cli.main(["simulate", str(path), "--scenario", "record-only",
                     "--log-dir", str(log_dir)]) == 0
    loaded = eventlog.load(log_dir / "session-log.ndjson")
    assert len(loaded) > 0
    assert cli.main(["log", str(log_dir / "session-log.ndjson")]) == 0


def test_inject_cli_round_trip(tmp_path, capsys):
    out = tmp_path / "out.html"
    assert cli.main(["inject", str(FIXTURES / "page_before.html"), str(out)]) == 0
    assert out.read_text() == (FIXTURES / "page_after.html").read_text()
    out2 = tmp_path / "out2.html"
    assert cli.main(["inject", str(out), str(out2)]) == 0
    assert "already prepared" in capsys.readouterr().out
    assert out2.read_text() == out.read_text()


def test_serve_occupied_port_is_bind_error():
    placeholder = socket.create_server(("127.0.0.1", 0))
    port = placeholder.getsockname()[1]
    try:
        assert cli.main(["serve", "--port", str(port)]) == 3
    finally:
        placeholder.close()


def read_line_with_timeout(stream, timeout=15.0):
    import select

    ready, _, _ = select.select([stream], [], [], timeout)
    assert ready, "subprocess printed nothing in time"
    return stream.readline()


def test_serve_sigterm_persists_log(tmp_path):
    from mvxloop import eventlog
    from mvxloop.protocol import Hello, RandomBatch, encode

    log_dir = tmp_path / "logs"
    env = dict(os.environ)
    env["MVX_PORT"] = "0"  # exercise the env override path with a free port
    proc = subprocess.Popen(
        [sys.executable, "-u", "-m", "mvxloop.cli", "serve", "--port", "7070",
         "--log-dir", str(log_dir)],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True, env=env,
    )
    try:
        line = read_line_with_timeout(proc.stdout)
        assert "listening" in line
        port = int(line.split(":")[-1].split()[0])
        sock = socket.create_connection(("127.0.0.1", port))
        sock.sendall(encode(Hello(clientInfo="x")))
        sock.sendall(encode(RandomBatch(values=[0.5, 0.25])))
        time.sleep(0.3)
        sock.close()
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    loaded = eventlog.load(log_dir / "session-log.ndjson")
    assert len(loaded) == 1
    assert loaded.records[0].payload["values"] == [0.5, 0.25]
