"""Session classification: injection-response evidence plus timing analysis.

Active evidence (did the attacker answer the planted question) separates
LLM agents from scripted bots; passive evidence (median response latency
against a 1.7 s threshold) separates LLM agents from humans. All functions
are pure, so the offline analyzer reproduces live verdicts exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

from .injection import (
    StageMachine,
    TemplateStore,
    flag_steal_response,
    match_hijack,
    nonce_from_emission,
)
from .model import ActorLabel, EventKind, SessionEvent, Stage, Verdict

DEFAULT_THRESHOLD_MS = 1700

PASSED_STATES = ("hijack_passed", "steal_emitted", "steal_flagged", "done")


@dataclass
class DetectorConfig:
    threshold_ms: int = DEFAULT_THRESHOLD_MS
    min_latency_samples: int = 1

    def __post_init__(self) -> None:
        if self.threshold_ms <= 0:
            raise ValueError("threshold_ms must be positive")
        if self.min_latency_samples < 1:
            raise ValueError("min_latency_samples must be >= 1")


@dataclass
class TimingProfile:
    latencies_ms: List[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.latencies_ms)

    @property
    def median_ms(self) -> Optional[int]:
        if not self.latencies_ms:
            return None
        ordered = sorted(self.latencies_ms)
        n = len(ordered)
        if n % 2 == 1:
            return ordered[n // 2]
        a, b = ordered[n // 2 - 1], ordered[n // 2]
        return (a + b + 1) // 2  # mean of the middle pair, rounded half-up


def compute_timing_profile(events: Sequence[SessionEvent]) -> TimingProfile:
    """One latency per input that follows at least one output: the gap from
    the latest prior output to that input."""
    profile = TimingProfile()
    last_output_ts: Optional[int] = None
    for e in events:
        if e.kind == EventKind.OUTPUT:
            last_output_ts = e.ts_ms
        elif e.kind == EventKind.INPUT and last_output_ts is not None:
            profile.latencies_ms.append(e.ts_ms - last_output_ts)
    return profile


def classify(final_state: str, profile: TimingProfile, steal_flag: bool,
             cfg: DetectorConfig, session_id: str,
             hijack_template_id: Optional[str] = None,
             matched_excerpt: Optional[str] = None) -> Verdict:
    injection_passed = final_state in PASSED_STATES
    median = profile.median_ms
    timing_passed = (
        median is not None
        and profile.count >= cfg.min_latency_samples
        and median <= cfg.threshold_ms
    )

    if not injection_passed:
        label = ActorLabel.TRADITIONAL_BOT
    elif timing_passed:
        label = ActorLabel.CONFIRMED_AI_AGENT
    elif median is not None and median > cfg.threshold_ms:
        label = ActorLabel.LIKELY_HUMAN
    else:
        # responded to the injection but timing evidence is absent or too thin
        label = ActorLabel.POTENTIAL_AI_AGENT

    evidence: List[str] = []
    if injection_passed:
        evidence.append(
            f"hijack response matched template {hijack_template_id or 'unknown'}"
            + (f": {matched_excerpt!r}" if matched_excerpt else "")
        )
    else:
        evidence.append("no response to injected prompts observed")
    if steal_flag:
        evidence.append("possible system-prompt disclosure; flagged for review")
    if median is None:
        evidence.append("no response latency samples")
    else:
        evidence.append(
            f"median latency {median} ms over {profile.count} sample(s), "
            f"threshold {cfg.threshold_ms} ms"
        )

    return Verdict(
        session_id=session_id,
        injection_passed=injection_passed,
        steal_response_flagged=steal_flag,
        timing_passed=timing_passed,
        median_latency_ms=median,
        label=label,
        evidence=tuple(evidence),
    )


def bucket_for_report(v: Verdict) -> str:
    """Dashboard bucket: confirmed needs both checks; any injection response
    without timing confirmation counts as potential."""
    if v.injection_passed and v.timing_passed:
        return "confirmed"
    if v.injection_passed:
        return "potential"
    return "none"


def replay_session(session_id: str, events: Sequence[SessionEvent],
                   store: TemplateStore, cfg: DetectorConfig) -> Verdict:
    """Recompute a session's verdict purely from its recorded events.

    Used both by the live service at finalization and by the offline
    analyzer, which makes replay equivalence true by construction.
    """
    machine = StageMachine(nonce="")
    hijack_template = None
    steal_flag = False
    matched_excerpt: Optional[str] = None

    for e in events:
        if e.kind == EventKind.INJECTION_EMITTED:
            template = store.by_id(e.injection_id or "")
            if template is None:
                continue
            if e.stage == Stage.HIJACK and machine.state == "idle":
                machine.advance("hijack_emitted")
                machine.hijack_template_id = template.id
                hijack_template = template
                nonce = nonce_from_emission(template, e.payload)
                if nonce:
                    machine.nonce = nonce
            elif e.stage == Stage.STEAL and machine.state == "hijack_passed":
                machine.advance("steal_emitted")
                machine.steal_template_id = template.id
        elif e.kind == EventKind.INPUT:
            if machine.state == "hijack_emitted" and hijack_template is not None:
                mr = match_hijack(machine, hijack_template, e.payload)
                if mr.matched:
                    machine.advance("hijack_passed")
                    matched_excerpt = mr.matched_text
            elif machine.state == "steal_emitted":
                mr = flag_steal_response(e.payload)
                if mr.matched:
                    machine.advance("steal_flagged")
                    steal_flag = True

    machine.finalize()
    profile = compute_timing_profile(events)
    return classify(
        machine.state, profile, steal_flag, cfg, session_id,
        hijack_template_id=machine.hijack_template_id,
        matched_excerpt=matched_excerpt,
    )


def encode_verdict(v: Verdict) -> str:
    """One verdict as a single JSON line with fixed key order."""
    obj = {
        "session_id": v.session_id,
        "injection_passed": v.injection_passed,
        "steal_response_flagged": v.steal_response_flagged,
        "timing_passed": v.timing_passed,
        "median_latency_ms": v.median_latency_ms,
        "label": v.label.value,
        "evidence": list(v.evidence),
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def decode_verdict(line: str) -> Verdict:
    obj = json.loads(line)
    return Verdict(
        session_id=obj["session_id"],
        injection_passed=obj["injection_passed"],
        steal_response_flagged=obj["steal_response_flagged"],
        timing_passed=obj["timing_passed"],
        median_latency_ms=obj["median_latency_ms"],
        label=ActorLabel(obj["label"]),
        evidence=tuple(obj["evidence"]),
    )


def read_verdicts(path: str) -> List[Verdict]:
    out: List[Verdict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(decode_verdict(line))
    return out
