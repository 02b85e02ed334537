"""Render a run's measurements: a JSON report, delimited sample files, and
matplotlib figures, side by side in one output directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .eventlog import EventLog
from .metrics import MetricsReport, RttSample


def write_report(
    out_dir: str | Path,
    report: MetricsReport,
    log: EventLog,
    samples: list[RttSample] | None = None,
    extra: dict[str, Any] | None = None,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = samples or []
    written = []

    doc = dict(report.to_dict())
    if extra:
        doc.update(extra)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(doc, indent=2) + "\n")
    written.append(report_path)

    records_path = out / "records.csv"
    with open(records_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seq", "kind", "eventType", "elementId", "wallClockMs"])
        for rec in log.records:
            writer.writerow([rec.seq, rec.kind.value, rec.eventType, rec.elementId, rec.wallClockMs])
    written.append(records_path)

    if samples:
        rtt_path = out / "rtt_samples.csv"
        with open(rtt_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seq", "sentMs", "ackMs", "rttMs"])
            for s in samples:
                writer.writerow([s.seq, s.sent_ms, s.ack_ms, s.rtt_ms])
        written.append(rtt_path)

    written.extend(_figures(out, report, log, samples))
    return written


def _figures(out: Path, report: MetricsReport, log: EventLog,
             samples: list[RttSample]) -> list[Path]:
    paths = []
    records = log.records

    if records:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        xs = [r.wallClockMs / 1000.0 for r in records]
        ys = range(1, len(records) + 1)
        ax.step(xs, ys, where="post")
        ax.set_xlabel("session time (s)")
        ax.set_ylabel("records logged")
        ax.set_title("log growth")
        fig.tight_layout()
        path = out / "log_growth.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

        fig, ax = plt.subplots(figsize=(6, 3.5))
        counts: dict[str, int] = {}
        for rec in records:
            counts[rec.kind.value] = counts.get(rec.kind.value, 0) + 1
        kinds = sorted(counts)
        ax.bar(kinds, [counts[k] for k in kinds])
        ax.set_ylabel("records")
        ax.set_title("record kinds")
        ax.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        path = out / "record_kinds.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    if samples:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot([s.seq for s in samples], [s.rtt_ms for s in samples], ".", markersize=3)
        if report.rtt_mean_ms is not None:
            ax.axhline(report.rtt_mean_ms, linestyle="--", linewidth=1,
                       label=f"mean {report.rtt_mean_ms:.2f} ms")
            ax.legend()
        ax.set_xlabel("seq")
        ax.set_ylabel("round trip (ms)")
        ax.set_title("event acknowledgement RTT")
        fig.tight_layout()
        path = out / "rtt.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    return paths
