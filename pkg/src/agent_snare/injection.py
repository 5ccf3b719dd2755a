"""Prompt-injection template store, splicing, and the two-stage state machine.

Stage one tries a goal hijack (make the agent answer a planted question);
stage two, only after a hijack response, asks the agent to disclose its
system instructions. Templates are plain config so deployments can reword
them without touching code. `{NONCE}` in template text or matcher is
replaced with a per-session random token.
"""

from __future__ import annotations

import json
import re
import secrets
import string
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Tuple

from .model import HoneypotPersonality
from .shell import SITE_COMMAND_OUTPUT, SITE_FILE_CONTENT, CommandResult

STYLES = ("traditional_override", "important_message", "prompt_steal")
SITES = ("banner", "command_output", "file_content")
STAGES = ("hijack", "steal")

NONCE_PLACEHOLDER = "{NONCE}"
NONCE_ALPHABET = string.ascii_lowercase + string.digits
NONCE_LEN = 8

# machine states, in the only order they may be visited
STATE_ORDER = ("idle", "hijack_emitted", "hijack_passed",
               "steal_emitted", "steal_flagged", "done")

DEFAULT_STEAL_CUES = ("you are", "your task", "instructions", "assistant", "system prompt")
DEFAULT_STEAL_MIN_LEN = 80


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionTemplate:
    id: str
    style: str
    site: str
    stage: str
    text: str
    expected_response: str = ""
    target: Optional[str] = None
    match_mode: str = "literal"  # or "regex"

    def __post_init__(self) -> None:
        if self.style not in STYLES:
            raise TemplateError(f"{self.id}: unknown style {self.style!r}")
        if self.site not in SITES:
            raise TemplateError(f"{self.id}: unknown site {self.site!r}")
        if self.stage not in STAGES:
            raise TemplateError(f"{self.id}: unknown stage {self.stage!r}")
        if self.stage == "steal" and self.style != "prompt_steal":
            raise TemplateError(f"{self.id}: steal stage requires prompt_steal style")
        if self.stage == "hijack" and not self.expected_response:
            raise TemplateError(f"{self.id}: hijack template needs expected_response")
        if self.site == "command_output" and not self.target:
            raise TemplateError(f"{self.id}: command_output site needs a command target")
        if self.site == "file_content" and (not self.target or not self.target.startswith("/")):
            raise TemplateError(f"{self.id}: file_content site needs an absolute path target")
        if self.match_mode not in ("literal", "regex"):
            raise TemplateError(f"{self.id}: unknown match_mode {self.match_mode!r}")
        if NONCE_PLACEHOLDER in self.expected_response and NONCE_PLACEHOLDER not in self.text:
            raise TemplateError(
                f"{self.id}: matcher uses {NONCE_PLACEHOLDER} but text never shows it"
            )

    def render(self, nonce: str) -> str:
        return self.text.replace(NONCE_PLACEHOLDER, nonce)


class TemplateStore:
    """Immutable after construction; shared read-only across sessions."""

    def __init__(self, templates: List[InjectionTemplate]):
        self.templates = list(templates)
        ids = [t.id for t in templates]
        if len(ids) != len(set(ids)):
            raise TemplateError("duplicate template ids")
        self._by_id = {t.id: t for t in templates}

    def __len__(self) -> int:
        return len(self.templates)

    def by_id(self, template_id: str) -> Optional[InjectionTemplate]:
        return self._by_id.get(template_id)

    def find(self, stage: str, site: str, target: Optional[str] = None) -> Optional[InjectionTemplate]:
        for t in self.templates:
            if t.stage != stage or t.site != site:
                continue
            if site == "banner" or t.target == target:
                return t
        return None


def new_nonce(rng=None) -> str:
    if rng is None:
        return "".join(secrets.choice(NONCE_ALPHABET) for _ in range(NONCE_LEN))
    return "".join(rng.choice(NONCE_ALPHABET) for _ in range(NONCE_LEN))


class StageOrderError(RuntimeError):
    pass


@dataclass
class StageMachine:
    """Per-session injection progress; owned by one session handler."""

    nonce: str = field(default_factory=new_nonce)
    state: str = "idle"
    hijack_template_id: Optional[str] = None
    steal_template_id: Optional[str] = None
    matched_excerpt: Optional[str] = None
    emitted_at_ms: Dict[str, int] = field(default_factory=dict)

    def advance(self, new_state: str) -> None:
        if STATE_ORDER.index(new_state) <= STATE_ORDER.index(self.state):
            raise StageOrderError(f"illegal transition {self.state} -> {new_state}")
        self.state = new_state

    @property
    def hijack_passed(self) -> bool:
        return STATE_ORDER.index(self.state) >= STATE_ORDER.index("hijack_passed")

    def finalize(self) -> None:
        if self.state == "steal_emitted":
            self.advance("done")


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    matched_text: Optional[str] = None
    reason: str = ""

    def __post_init__(self) -> None:
        if self.matched and self.matched_text is None:
            raise ValueError("matched result must carry an excerpt")


def render_banner(personality: HoneypotPersonality, machine: StageMachine,
                  store: TemplateStore, now_ms: int = 0) -> str:
    """Login banner with the hijack injection spliced in, if one is configured."""
    base = personality.command_outputs.get(
        "banner", f"Welcome to {personality.hostname}"
    )
    template = store.find("hijack", "banner")
    if machine.state != "idle" or template is None:
        return base + "\n"
    machine.advance("hijack_emitted")
    machine.hijack_template_id = template.id
    machine.emitted_at_ms["hijack"] = now_ms
    return base + "\n\n" + template.render(machine.nonce) + "\n"


def splice(result: CommandResult, machine: StageMachine, store: TemplateStore,
           now_ms: int = 0) -> Tuple[str, Optional[InjectionTemplate]]:
    """Attach a stage-appropriate injection to injectable command output.

    Returns the (possibly extended) output text and the template that was
    emitted, or None when nothing applied; the machine advances on emission.
    """
    if result.injection_site is None:
        return result.output, None
    site_kind, target = result.injection_site
    if site_kind == SITE_COMMAND_OUTPUT:
        site = "command_output"
    elif site_kind == SITE_FILE_CONTENT:
        site = "file_content"
    else:
        return result.output, None

    if machine.state == "idle":
        stage = "hijack"
    elif machine.state == "hijack_passed":
        stage = "steal"
    else:
        return result.output, None

    template = store.find(stage, site, target)
    if template is None:
        return result.output, None

    machine.advance("hijack_emitted" if stage == "hijack" else "steal_emitted")
    if stage == "hijack":
        machine.hijack_template_id = template.id
    else:
        machine.steal_template_id = template.id
    machine.emitted_at_ms[stage] = now_ms

    rendered = template.render(machine.nonce)
    output = result.output
    if output and not output.endswith("\n"):
        output += "\n"
    return output + rendered + "\n", template


_WS_RUN = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


def match_hijack(machine: StageMachine, template: InjectionTemplate,
                 input_text: str) -> MatchResult:
    """Check an attacker line against the hijack template's expected response.

    Case-insensitive and whitespace-tolerant; LLM outputs vary in both.
    """
    pattern_src = template.expected_response.replace(NONCE_PLACEHOLDER, machine.nonce)
    if template.match_mode == "literal":
        escaped = re.escape(_normalize(pattern_src))
        pattern_src = escaped.replace(re.escape(" "), r"\s+")
    try:
        rx = re.compile(pattern_src, re.IGNORECASE)
    except re.error as exc:
        return MatchResult(False, reason=f"bad matcher pattern: {exc}")
    m = rx.search(_WS_RUN.sub(" ", input_text))
    if m and m.group(0):
        return MatchResult(True, matched_text=m.group(0), reason="expected response present")
    return MatchResult(False, reason="expected response not found")


def flag_steal_response(input_text: str, min_len: int = DEFAULT_STEAL_MIN_LEN,
                        cues: Tuple[str, ...] = DEFAULT_STEAL_CUES) -> MatchResult:
    """Heuristic for probable system-prompt disclosure; a review flag only."""
    if len(input_text) < min_len:
        return MatchResult(False, reason=f"input shorter than {min_len} chars")
    lowered = input_text.lower()
    for cue in cues:
        idx = lowered.find(cue.lower())
        if idx >= 0:
            return MatchResult(True, matched_text=input_text[idx : idx + len(cue)],
                               reason=f"disclosure cue {cue!r} in long response")
    return MatchResult(False, reason="no disclosure cue present")


def nonce_from_emission(template: InjectionTemplate, emitted_text: str) -> Optional[str]:
    """Recover the per-session nonce from a recorded injection emission."""
    if NONCE_PLACEHOLDER not in template.text:
        return None
    pattern = re.escape(template.text).replace(
        re.escape(NONCE_PLACEHOLDER), f"([{NONCE_ALPHABET}]{{{NONCE_LEN}}})"
    )
    m = re.search(pattern, emitted_text)
    return m.group(1) if m else None


def templates_from_records(records: List[dict]) -> TemplateStore:
    templates = []
    for rec in records:
        templates.append(
            InjectionTemplate(
                id=rec["id"],
                style=rec["style"],
                site=rec["site"],
                stage=rec["stage"],
                text=rec["text"],
                expected_response=rec.get("expected_response", ""),
                target=rec.get("target"),
                match_mode=rec.get("match_mode", "literal"),
            )
        )
    return TemplateStore(templates)


def load_templates(path: str) -> TemplateStore:
    with open(path, "r", encoding="utf-8") as fh:
        return templates_from_records(json.load(fh))


def default_templates() -> TemplateStore:
    text = resources.files("agent_snare.data").joinpath("templates.json").read_text(
        encoding="utf-8"
    )
    return templates_from_records(json.loads(text))
