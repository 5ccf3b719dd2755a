"""Offline ingestion and reporting.

Re-runs detection over native logs (replaying the exact live verdict
computation), imports third-party Cowrie-format JSON logs, and renders
aggregate reports as canonical JSON or a self-contained static HTML page.
"""

from __future__ import annotations

import hashlib
import html
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

from .detector import DetectorConfig, Verdict, bucket_for_report, replay_session
from .injection import TemplateStore, default_templates
from .model import ActorLabel, EventKind, SessionEvent
from .recorder import read_all

HISTOGRAM_EDGES_MS = (0, 100, 500, 1000, 1700, 5000, 10000)

COWRIE_KIND_MAP = {
    "cowrie.session.connect": EventKind.CONNECT,
    "cowrie.login.success": EventKind.AUTH_ATTEMPT,
    "cowrie.login.failed": EventKind.AUTH_ATTEMPT,
    "cowrie.command.input": EventKind.INPUT,
    "cowrie.session.closed": EventKind.DISCONNECT,
}


class AnalyzerError(Exception):
    pass


@dataclass
class AggregateReport:
    total_interaction_attempts: int = 0  # connects + auth attempts
    connects: int = 0
    auth_attempts: int = 0
    total_sessions: int = 0
    label_counts: Dict[str, int] = field(default_factory=dict)
    bucket_counts: Dict[str, int] = field(default_factory=dict)
    latency_histogram: List[dict] = field(default_factory=list)
    latency_samples: int = 0
    flagged_sessions: List[dict] = field(default_factory=list)
    skipped_lines: int = 0


@dataclass
class AnalysisResult:
    report: AggregateReport
    verdicts: List[Verdict]


def _histogram(latencies: Sequence[int]) -> List[dict]:
    edges = HISTOGRAM_EDGES_MS
    buckets = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        count = sum(1 for v in latencies if v >= lo and (hi is None or v < hi))
        buckets.append({"ge_ms": lo, "lt_ms": hi, "count": count})
    return buckets


def aggregate(sessions: Dict[str, List[SessionEvent]], cfg: DetectorConfig,
              store: TemplateStore, skipped_lines: int = 0) -> AnalysisResult:
    from .detector import compute_timing_profile

    report = AggregateReport(skipped_lines=skipped_lines)
    report.label_counts = {label.value: 0 for label in ActorLabel}
    report.bucket_counts = {"none": 0, "potential": 0, "confirmed": 0}
    latencies: List[int] = []
    verdicts: List[Verdict] = []

    for session_id in sorted(sessions):
        events = sessions[session_id]
        report.connects += sum(1 for e in events if e.kind == EventKind.CONNECT)
        report.auth_attempts += sum(1 for e in events if e.kind == EventKind.AUTH_ATTEMPT)
        latencies.extend(compute_timing_profile(events).latencies_ms)

        verdict = replay_session(session_id, events, store, cfg)
        verdicts.append(verdict)
        report.total_sessions += 1
        report.label_counts[verdict.label.value] += 1
        report.bucket_counts[bucket_for_report(verdict)] += 1
        if verdict.injection_passed:
            report.flagged_sessions.append(
                {"session_id": session_id, "evidence": list(verdict.evidence)}
            )

    report.total_interaction_attempts = report.connects + report.auth_attempts
    report.latency_histogram = _histogram(latencies)
    report.latency_samples = len(latencies)
    return AnalysisResult(report=report, verdicts=verdicts)


def analyze(log_paths: Sequence[str], cfg: Optional[DetectorConfig] = None,
            store: Optional[TemplateStore] = None,
            cowrie: bool = False) -> AnalysisResult:
    """Reconstruct sessions from one or more log files and re-run detection."""
    if not log_paths:
        raise AnalyzerError("no log files given")
    cfg = cfg or DetectorConfig()
    store = store if store is not None else default_templates()

    sessions: Dict[str, List[SessionEvent]] = {}
    skipped = 0
    readable = 0
    for path in sorted(log_paths):
        try:
            if cowrie:
                events, skips = import_cowrie(path)
                for e in events:
                    sessions.setdefault(e.session_id, []).append(e)
                skipped += skips
            else:
                result = read_all(path)
                for sid, events in result.sessions.items():
                    sessions.setdefault(sid, []).extend(events)
                skipped += result.skip_count
            readable += 1
        except OSError:
            continue
    if readable == 0:
        raise AnalyzerError("no readable log files among: " + ", ".join(log_paths))

    for events in sessions.values():
        events.sort(key=lambda e: e.ts_ms)
    return aggregate(sessions, cfg, store, skipped_lines=skipped)


# -- Cowrie import ----------------------------------------------------------


def _cowrie_session_id(raw: str) -> str:
    # external session ids are short hex; hash to our 128-bit format
    return hashlib.md5(raw.encode("utf-8")).hexdigest()


def _cowrie_ts_ms(stamp: str) -> int:
    if stamp.endswith("Z"):
        stamp = stamp[:-1] + "+00:00"
    dt = datetime.fromisoformat(stamp)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)


def import_cowrie(path: str) -> Tuple[List[SessionEvent], int]:
    """Map a Cowrie JSON-lines log to native events.

    Unmapped eventids and records without usable timestamps are counted and
    skipped; an unparsable line aborts with its line number.
    """
    events: List[SessionEvent] = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not a JSON object")
            except ValueError as exc:
                raise AnalyzerError(f"{path}: line {lineno}: {exc}") from None

            kind = COWRIE_KIND_MAP.get(obj.get("eventid", ""))
            if kind is None:
                skipped += 1
                continue
            stamp = obj.get("timestamp")
            raw_session = obj.get("session")
            if not stamp or not raw_session:
                skipped += 1
                continue
            try:
                ts_ms = _cowrie_ts_ms(stamp)
            except ValueError:
                skipped += 1
                continue

            peer = f"{obj.get('src_ip', 'unknown')}:{obj.get('src_port', 0)}"
            if kind == EventKind.AUTH_ATTEMPT:
                ok = obj.get("eventid") == "cowrie.login.success"
                payload = (
                    f"user={obj.get('username', '')} password={obj.get('password', '')} "
                    f"result={'accepted' if ok else 'rejected'}"
                )
            elif kind == EventKind.INPUT:
                payload = obj.get("input", "")
            else:
                payload = ""
            events.append(
                SessionEvent(
                    session_id=_cowrie_session_id(str(raw_session)),
                    ts_ms=ts_ms,
                    kind=kind,
                    peer=peer,
                    payload=payload,
                )
            )
    return events, skipped


# -- rendering --------------------------------------------------------------


def report_to_dict(r: AggregateReport) -> dict:
    return {
        "schema": 1,
        "total_interaction_attempts": r.total_interaction_attempts,
        "connects": r.connects,
        "auth_attempts": r.auth_attempts,
        "total_sessions": r.total_sessions,
        "label_counts": {label.value: r.label_counts.get(label.value, 0)
                         for label in ActorLabel},
        "bucket_counts": {k: r.bucket_counts.get(k, 0)
                          for k in ("none", "potential", "confirmed")},
        "latency_histogram": r.latency_histogram,
        "latency_samples": r.latency_samples,
        "flagged_sessions": r.flagged_sessions,
        "skipped_lines": r.skipped_lines,
    }


def report_from_dict(obj: dict) -> AggregateReport:
    return AggregateReport(
        total_interaction_attempts=obj["total_interaction_attempts"],
        connects=obj["connects"],
        auth_attempts=obj["auth_attempts"],
        total_sessions=obj["total_sessions"],
        label_counts=dict(obj["label_counts"]),
        bucket_counts=dict(obj["bucket_counts"]),
        latency_histogram=list(obj["latency_histogram"]),
        latency_samples=obj["latency_samples"],
        flagged_sessions=list(obj["flagged_sessions"]),
        skipped_lines=obj["skipped_lines"],
    )


def render_report(r: AggregateReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        doc = json.dumps(report_to_dict(r), ensure_ascii=False, indent=2) + "\n"
        return doc.encode("utf-8")
    if fmt == "html":
        return _render_html(r).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


_HTML_STYLE = (
    "body{font-family:monospace;margin:2em;background:#101418;color:#d8dee6}"
    "h1,h2{color:#7fd962}table{border-collapse:collapse;margin:1em 0}"
    "td,th{border:1px solid #3a434e;padding:4px 10px;text-align:left}"
    ".flag{color:#e5c07b}"
)


def _render_html(r: AggregateReport) -> str:
    labels = {label.value: r.label_counts.get(label.value, 0) for label in ActorLabel}
    buckets = {k: r.bucket_counts.get(k, 0) for k in ("none", "potential", "confirmed")}
    lines = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        "<title>Honeypot Session Report</title>",
        f"<style>{_HTML_STYLE}</style></head><body>",
        "<h1>Honeypot Session Report</h1>",
        "<h2>Totals</h2><table>",
        f"<tr><td>Interaction attempts (connects + auth attempts)</td><td>{r.total_interaction_attempts}</td></tr>",
        f"<tr><td>Connects</td><td>{r.connects}</td></tr>",
        f"<tr><td>Auth attempts</td><td>{r.auth_attempts}</td></tr>",
        f"<tr><td>Sessions</td><td>{r.total_sessions}</td></tr>",
        f"<tr><td>Skipped log lines</td><td>{r.skipped_lines}</td></tr>",
        "</table>",
        "<h2>Detections</h2><table>",
        f"<tr><td>Confirmed AI Agents: {buckets['confirmed']}</td></tr>",
        f"<tr><td>Potential AI Agents: {buckets['potential']}</td></tr>",
        f"<tr><td>Traditional bots: {labels['traditional_bot']}</td></tr>",
        f"<tr><td>Likely human: {labels['likely_human']}</td></tr>",
        "</table>",
        "<h2>Response latency histogram</h2><table>",
        "<tr><th>Range (ms)</th><th>Count</th></tr>",
    ]
    for bucket in r.latency_histogram:
        hi = bucket["lt_ms"]
        label = f"{bucket['ge_ms']}&ndash;{hi}" if hi is not None else f"&ge;{bucket['ge_ms']}"
        lines.append(f"<tr><td>{label}</td><td>{bucket['count']}</td></tr>")
    lines.append("</table>")
    lines.append("<h2>Flagged sessions</h2>")
    if not r.flagged_sessions:
        lines.append("<p>none</p>")
    else:
        lines.append("<table><tr><th>Session</th><th>Evidence</th></tr>")
        for entry in r.flagged_sessions:
            ev = "<br>".join(html.escape(s) for s in entry["evidence"])
            lines.append(
                f"<tr><td class=\"flag\">{html.escape(entry['session_id'])}</td><td>{ev}</td></tr>"
            )
        lines.append("</table>")
    lines.append("</body></html>")
    return "\n".join(lines) + "\n"
