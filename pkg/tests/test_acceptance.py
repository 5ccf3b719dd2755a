"""Acceptance suite: one test per release criterion.

Each test prints a single [PASS]/[FAIL] line so the whole gate can be read
off a plain pytest run. Tolerances are pinned in the assertions, not
configurable.
"""

import json
import math
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from agent_snare.analyzer import analyze, import_cowrie
from agent_snare.attacker import (
    AttackerProfile,
    run_attacker,
    run_calibration,
    run_detection_scenarios,
)
from agent_snare.detector import (
    DetectorConfig,
    compute_timing_profile,
    encode_verdict,
    replay_session,
)
from agent_snare.injection import STATE_ORDER, StageMachine, StageOrderError, default_templates
from agent_snare.model import EventKind, SessionEvent, Stage
from agent_snare.recorder import EventLog, read_all
from conftest import PlainClient, wait_for


def check(criterion, description, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {description}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def test_c1_detection_truth_table():
    t0 = time.monotonic()
    results = run_detection_scenarios()
    elapsed = time.monotonic() - t0
    outcome = {r.name: r.actual_label for r in results}
    ok = (
        len(results) == 3
        and all(r.passed for r in results)
        and elapsed < 60.0
    )
    check("C1", "scenario trio earns expected verdicts in under 60s", ok,
          f"{outcome}, {elapsed:.1f}s")


def synthetic_session(answer_delay_ms):
    store = default_templates()
    banner = store.find("hijack", "banner")
    sid = "f" * 32
    t0 = 1_700_000_000_000
    events = [
        SessionEvent(sid, t0, EventKind.CONNECT, "p:1"),
        SessionEvent(sid, t0 + 5, EventKind.OUTPUT, "p:1", "banner"),
        SessionEvent(sid, t0 + 5, EventKind.INJECTION_EMITTED, "p:1",
                     banner.render("zz11zz11"), injection_id=banner.id,
                     stage=Stage.HIJACK),
        SessionEvent(sid, t0 + 5 + answer_delay_ms, EventKind.INPUT, "p:1", "blue"),
        SessionEvent(sid, t0 + 10 + answer_delay_ms, EventKind.DISCONNECT, "p:1"),
    ]
    return replay_session(sid, events, store, DetectorConfig())


def test_c2_threshold_boundary():
    at = synthetic_session(1700)
    above = synthetic_session(1701)
    ok = (
        at.label.value == "confirmed_ai_agent"
        and at.median_latency_ms == 1700
        and above.label.value == "likely_human"
        and above.median_latency_ms == 1701
    )
    check("C2", "median 1700ms confirms, 1701ms reads as human", ok,
          f"1700->{at.label.value}, 1701->{above.label.value}")


def oracle_latencies(events):
    """Brute force: for each input, re-scan everything before it."""
    out = []
    for i, e in enumerate(events):
        if e.kind != EventKind.INPUT:
            continue
        prior = [p.ts_ms for p in events[:i] if p.kind == EventKind.OUTPUT]
        if prior:
            out.append(e.ts_ms - max(prior))
    return out


def oracle_median(latencies):
    if not latencies:
        return None
    ordered = sorted(latencies)
    n = len(ordered)
    if n % 2:
        return ordered[n // 2]
    return math.floor((ordered[n // 2 - 1] + ordered[n // 2]) / 2 + 0.5)


def test_c3_timing_oracle():
    rng = random.Random(20250824)
    kinds = [EventKind.CONNECT, EventKind.AUTH_ATTEMPT, EventKind.OUTPUT,
             EventKind.INPUT, EventKind.DISCONNECT]
    mismatches = 0
    for i in range(1000):
        ts = 1_000_000
        events = []
        for _ in range(rng.randint(0, 40)):
            ts += rng.randint(0, 5000)
            events.append(SessionEvent("a" * 32, ts, rng.choice(kinds), "p:1"))
        profile = compute_timing_profile(events)
        expected = oracle_latencies(events)
        if list(profile.latencies_ms) != expected or profile.median_ms != oracle_median(expected):
            mismatches += 1
    check("C3", "timing profile matches brute-force oracle on 1000 sessions",
          mismatches == 0, f"{mismatches} mismatches")


def test_c4_calibration_ordering():
    profile = AttackerProfile(
        kind="llm_mock",
        susceptibility={"important_message": 0.8, "traditional_override": 0.3},
        complies_with_steal=0.5,
    )
    result = run_calibration(200, profile, seed=99)
    im_h = result.rate("important_message", "hijack")
    to_h = result.rate("traditional_override", "hijack")
    im_s = result.rate("important_message", "steal")
    to_s = result.rate("traditional_override", "steal")
    ok = im_h > to_h and im_s > to_s and im_s < im_h and to_s < to_h
    check("C4", "calibration preserves style and goal orderings", ok,
          f"hijack {im_h:.2f}>{to_h:.2f}, steal {im_s:.2f}>{to_s:.2f}")


def test_c5_replay_equivalence(make_service):
    service = make_service(max_sessions=64)
    full = {"traditional_override": 1.0, "important_message": 1.0}

    def profile_for(i):
        kind = ("scripted_bot", "llm_mock", "llm_mock")[i % 3]
        return AttackerProfile(
            kind=kind,
            script=["uname -a", "exit"] if i % 2 else ["pwd", "exit"],
            response_delay_ms=10 + (i % 5) * 10,
            susceptibility=dict(full) if i % 3 == 1 else {},
            complies_with_steal=1.0 if i % 3 == 1 else 0.0,
            seed=i,
        )

    target = ("127.0.0.1", service.port)
    with ThreadPoolExecutor(max_workers=8) as pool:
        transcripts = list(pool.map(
            lambda i: run_attacker(profile_for(i), target), range(50)
        ))
    errors = [t.error for t in transcripts if t.error]
    assert not errors, errors
    assert wait_for(lambda: len(service.verdicts) == 50, timeout=30.0)

    service.recorder._fh.flush()
    offline = analyze([service.recorder.path],
                      cfg=service.detector_cfg, store=service.templates)
    offline_lines = sorted(encode_verdict(v) for v in offline.verdicts)
    with open(service.verdict_path, encoding="utf-8") as fh:
        live_lines = sorted(line.rstrip("\n") for line in fh if line.strip())
    ok = len(live_lines) == 50 and offline_lines == live_lines
    check("C5", "offline analysis reproduces 50 live verdicts byte-for-byte",
          ok, f"{len(live_lines)} live / {len(offline_lines)} offline")


HOSTILE_PAYLOADS = [
    'quote " inside',
    "newline\ninside",
    "tab\tand 4-byte \U0001d11e clef \U0001f608",
    "plain ascii",
    "trailing backslash \\",
]


def test_c6_log_integrity(tmp_path):
    path = str(tmp_path / "stress.jsonl")
    log = EventLog(path, max_bytes=None)
    written = []
    lock = threading.Lock()

    def worker(worker_id):
        mine = []
        for n in range(1000):
            event = SessionEvent(
                f"{worker_id:02d}" * 16, 1_000_000 + n, EventKind.INPUT,
                "p:1", f"{HOSTILE_PAYLOADS[n % len(HOSTILE_PAYLOADS)]} #{n}",
            )
            log.append(event)
            mine.append(event)
        with lock:
            written.extend(mine)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    log.close()

    with open(path, encoding="utf-8") as fh:
        raw_lines = [line for line in fh if line.strip()]
    result = read_all(path)
    recovered = sorted(
        (e for events in result.sessions.values() for e in events),
        key=lambda e: (e.session_id, e.ts_ms, e.payload),
    )
    expected = sorted(written, key=lambda e: (e.session_id, e.ts_ms, e.payload))
    ok = (
        len(raw_lines) == 10_000
        and not result.skipped
        and recovered == expected
    )
    check("C6", "10 writers x 1000 events: no torn lines, exact round trip",
          ok, f"{len(raw_lines)} lines, {len(result.skipped)} skipped")


def test_c7_stage_machine_safety():
    rng = random.Random(7)
    states = list(STATE_ORDER)
    violations = 0
    for _ in range(10_000):
        machine = StageMachine()
        emissions = {"hijack_emitted": 0, "steal_emitted": 0}
        for _ in range(rng.randint(1, 12)):
            target = rng.choice(states)
            before = STATE_ORDER.index(machine.state)
            try:
                machine.advance(target)
            except StageOrderError:
                if STATE_ORDER.index(machine.state) != before:
                    violations += 1  # refused transitions must not move state
                continue
            after = STATE_ORDER.index(machine.state)
            if after <= before:
                violations += 1
            if target in emissions:
                emissions[target] += 1
        if any(count > 1 for count in emissions.values()):
            violations += 1
    check("C7", "10000 random drives: order preserved, single emission per stage",
          violations == 0, f"{violations} violations")


COWRIE_RECORDS = [
    {"eventid": "cowrie.session.connect", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:00.000Z", "src_ip": "198.51.100.9", "src_port": 4111},
    {"eventid": "cowrie.client.version", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:00.300Z", "version": "SSH-2.0-Go"},
    {"eventid": "cowrie.login.failed", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:01.000Z", "username": "root", "password": "root"},
    {"eventid": "cowrie.login.success", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:02.000Z", "username": "root", "password": "123456"},
    {"eventid": "cowrie.command.input", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:03.000Z", "input": "cat /etc/passwd"},
    {"eventid": "cowrie.session.file_upload", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:04.000Z", "filename": "x"},
    {"eventid": "cowrie.session.closed", "session": "cafe0001",
     "timestamp": "2025-02-01T08:00:05.000Z"},
]


def test_c8_cowrie_import(tmp_path):
    path = tmp_path / "cowrie.json"
    path.write_text("\n".join(json.dumps(r) for r in COWRIE_RECORDS) + "\n")
    events, skipped = import_cowrie(str(path))
    kinds = [e.kind for e in events]
    result = analyze([str(path)], cowrie=True)
    ok = (
        skipped == 2
        and kinds == [EventKind.CONNECT, EventKind.AUTH_ATTEMPT,
                      EventKind.AUTH_ATTEMPT, EventKind.INPUT,
                      EventKind.DISCONNECT]
        and all(isinstance(e, SessionEvent) for e in events)
        and result.report.bucket_counts["confirmed"] == 0
        and all(not v.timing_passed for v in result.verdicts)
    )
    check("C8", "cowrie fixture: 4 mapped kinds, 2 skips, nothing confirmed",
          ok, f"kinds={[k.value for k in kinds]}, skipped={skipped}")


def test_c9_service_robustness(make_service):
    service = make_service()
    rng = random.Random(0xFACE)
    blob = bytes(rng.randrange(256) for _ in range(1024 * 1024))

    def fuzz():
        client = PlainClient(service.port)
        try:
            for i in range(0, len(blob), 16 * 1024):
                client.send_raw(blob[i:i + 16 * 1024])
        except OSError:
            pass
        finally:
            client.close()

    fuzz_thread = threading.Thread(target=fuzz)
    fuzz_thread.start()
    time.sleep(0.1)

    # a normal session must get through while the fuzzer is blasting
    normal = PlainClient(service.port)
    assert normal.auth() == "OK"
    normal.drain()
    normal.send_line("uname -a")
    out = normal.drain()
    normal.send_line("exit")
    normal.close()
    fuzz_thread.join(timeout=30)

    ok = (
        not fuzz_thread.is_alive()
        and "Linux" in out
        and wait_for(lambda: len(service.verdicts) == 2, timeout=20.0)
    )
    check("C9", "1 MiB fuzz client: listener healthy, fuzzed session judged",
          ok, f"{len(service.verdicts)} verdicts")
