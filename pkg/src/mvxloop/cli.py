"""Command-line entry points.

Exit codes: 0 success, 2 state divergence, 3 protocol or transport error,
4 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from pathlib import Path

from . import eventlog
from .coordinator import SessionError
from .inject import DEFAULT_SCRIPTS, ParseError, inject_html, is_injected
from .protocol import DecodeError
from .report import write_report
from .scenarios import SCENARIOS, run_scenario
from .server import BindError, CoordinatorServer
from .simclient import DivergenceError
from .workload import WorkloadError, format_workload, generate_workload, parse_workload

EXIT_OK = 0
EXIT_DIVERGENCE = 2
EXIT_PROTOCOL = 3
EXIT_USAGE = 4

DEFAULT_PORT = 7070


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvxloop",
        description="Record, replay and live-mirror the non-determinism of an "
                    "event-loop client; swap leader and follower on demand.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the coordinator")
    serve.add_argument("--port", type=int, default=DEFAULT_PORT,
                       help="TCP port; also serves WebSocket upgrades at /mvx "
                            "(env MVX_PORT overrides)")
    serve.add_argument("--log-dir", help="persist the event log here on shutdown")
    serve.add_argument("--ack", action="store_true", help="measure per-event RTT via follower acks")
    serve.set_defaults(func=cmd_serve)

    sim = sub.add_parser("simulate", help="drive a workload end-to-end over loopback")
    sim.add_argument("workload", help="workload script path")
    sim.add_argument("--scenario", choices=SCENARIOS, required=True)
    sim.add_argument("--seed", type=int, default=0, help="seed for the leader's fresh randomness")
    sim.add_argument("--port", type=int, default=0, help="loopback port (0 picks a free one)")
    sim.add_argument("--log-dir", help="persist the event log here")
    sim.add_argument("--report-dir", help="write report.json, CSV samples and figures here")
    sim.set_defaults(func=cmd_simulate)

    gen = sub.add_parser("gen", help="generate a seeded workload script")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--records", type=int, default=1000, help="approximate log records to aim for")
    gen.add_argument("-o", "--out", help="output path (default stdout)")
    gen.set_defaults(func=cmd_gen)

    inj = sub.add_parser("inject", help="prepare a static HTML page for capture")
    inj.add_argument("input", help="HTML file to read")
    inj.add_argument("output", help="rewritten HTML file to write")
    inj.add_argument("--scripts", nargs="+", default=list(DEFAULT_SCRIPTS),
                     help="script srcs for the loader tags")
    inj.set_defaults(func=cmd_inject)

    logcmd = sub.add_parser("log", help="inspect a persisted event log")
    logcmd.add_argument("path", help="log file")
    logcmd.add_argument("--dump", action="store_true", help="print every record")
    logcmd.set_defaults(func=cmd_log)

    return parser


def cmd_serve(args) -> int:
    port = int(os.environ.get("MVX_PORT", args.port))
    log_path = None
    if args.log_dir:
        Path(args.log_dir).mkdir(parents=True, exist_ok=True)
        log_path = str(Path(args.log_dir) / "session-log.ndjson")
    server = CoordinatorServer(port=port, ack_mode=args.ack, log_path=log_path)
    stop = threading.Event()

    def _shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    server.start()
    print(f"coordinator listening on {server.host}:{server.port} (ws path /mvx)")
    if log_path:
        print(f"log will be persisted to {log_path}")
    stop.wait()
    server.stop()
    print("coordinator stopped")
    return EXIT_OK


def cmd_simulate(args) -> int:
    text = Path(args.workload).read_text()
    steps = parse_workload(text)
    log_path = None
    if args.log_dir:
        Path(args.log_dir).mkdir(parents=True, exist_ok=True)
        log_path = str(Path(args.log_dir) / "session-log.ndjson")
    result = run_scenario(args.scenario, steps, seed=args.seed, port=args.port, log_path=log_path)

    print(f"scenario: {result.scenario}")
    print(result.report.format_table())
    if result.scenario == "update":
        print(f"state hashes equal: {result.extra['stateHashNewLeader']}")
    if result.scenario == "mvx-rtt":
        print(f"mvx events acked: {result.extra['mvxEventCount']}")
    if args.report_dir:
        written = write_report(args.report_dir, result.report, result.log,
                               samples=result.samples, extra=result.extra)
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_gen(args) -> int:
    text = format_workload(generate_workload(seed=args.seed, approx_records=args.records))
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} (seed {args.seed})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inject(args) -> int:
    html = Path(args.input).read_text()
    if is_injected(html):
        print("already prepared; output unchanged")
        Path(args.output).write_text(html)
        return EXIT_OK
    Path(args.output).write_text(inject_html(html, scripts=args.scripts))
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_log(args) -> int:
    log = eventlog.load(args.path)
    last_ms = log.records[-1].wallClockMs if len(log) else 0
    stats = log.stats(now_ms=log.started_at_ms + last_ms)
    print(json.dumps(stats.to_dict(), indent=2))
    if args.dump:
        for rec in log.records:
            print(f"{rec.seq:6d}  {rec.kind.value:<15} {rec.eventType:<10} "
                  f"{rec.elementId:<12} t={rec.wallClockMs}ms")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (WorkloadError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (BindError, DecodeError, SessionError, TimeoutError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
