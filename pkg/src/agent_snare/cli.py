"""Command line entry points: serve, analyze, simulate, calibrate, scenarios.

Any flag can also be set through the environment with the prefix
AGENT_SNARE_, e.g. AGENT_SNARE_BIND=127.0.0.1:2222.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from typing import List, Optional

from . import analyzer, attacker, injection, shell
from .detector import DetectorConfig
from .recorder import EventLog
from .service import HoneypotService, ListenerConfig

ENV_PREFIX = "AGENT_SNARE_"


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agent-snare",
        description="SSH-style honeypot that fingerprints LLM-driven attackers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the honeypot service")
    p_serve.add_argument("--config", default=_env_default("config"),
                         help="JSON config file with listener settings")
    p_serve.add_argument("--bind", default=_env_default("bind"),
                         help="ip:port to listen on (default 0.0.0.0:2222)")
    p_serve.add_argument("--mode", choices=["ssh", "plain"],
                         default=_env_default("mode"))
    p_serve.add_argument("--log", default=_env_default("log", "events.jsonl"))
    p_serve.add_argument("--personality", default=_env_default("personality"))
    p_serve.add_argument("--templates", default=_env_default("templates"))
    p_serve.add_argument("--threshold-ms", type=int,
                         default=int(_env_default("threshold_ms", 1700)))
    p_serve.add_argument("--verdicts", default=_env_default("verdicts"),
                         help="verdict sidecar file (default: <log dir>/verdicts.jsonl)")
    p_serve.add_argument("--max-log-bytes", type=int,
                         default=_env_default("max_log_bytes"))

    p_an = sub.add_parser("analyze", help="re-run detection over recorded logs")
    p_an.add_argument("--logs", required=True, help="glob of log files")
    p_an.add_argument("--cowrie", action="store_true",
                      help="treat inputs as Cowrie-format JSON logs")
    p_an.add_argument("--threshold-ms", type=int, default=1700)
    p_an.add_argument("--templates", default=_env_default("templates"))
    p_an.add_argument("--format", choices=["json", "html"], default="json")
    p_an.add_argument("--out", default="-")

    p_sim = sub.add_parser("simulate", help="run one simulated attacker session")
    p_sim.add_argument("--target", required=True, help="host:port of the honeypot")
    p_sim.add_argument("--profile", required=True, help="attacker profile JSON file")
    p_sim.add_argument("--seed", type=int, default=None)

    p_cal = sub.add_parser("calibrate", help="injection-style success-rate grid")
    p_cal.add_argument("--trials", type=int, required=True)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--profile", default=None,
                       help="attacker profile JSON (default: built-in mock family)")
    p_cal.add_argument("--out", default="-")

    p_sc = sub.add_parser("scenarios", help="run the canonical detection scenarios")
    p_sc.add_argument("--threshold-ms", type=int, default=1700)
    return parser


def _load_templates(path: Optional[str]):
    return injection.load_templates(path) if path else injection.default_templates()


def _cmd_serve(args) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    cfg_obj = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg_obj = json.load(fh)
    if args.bind:
        cfg_obj["bind_address"] = args.bind
    if args.mode:
        cfg_obj["transport_mode"] = "plain_tcp_test" if args.mode == "plain" else "ssh"
    config = ListenerConfig(
        bind_address=cfg_obj.get("bind_address", "0.0.0.0:2222"),
        transport_mode=cfg_obj.get("transport_mode", "plain_tcp_test"),
        ssh_version_banner=cfg_obj.get("ssh_version_banner", ""),
        max_sessions=cfg_obj.get("max_sessions", 1024),
        session_idle_timeout_s=cfg_obj.get("session_idle_timeout_s", 300),
        auth_policy=cfg_obj.get("auth_policy", "accept_all"),
        credentials=tuple(tuple(c) for c in cfg_obj.get("credentials", [])),
    )
    personality = (shell.load_personality(args.personality)
                   if args.personality else shell.default_personality())
    base_dir = os.path.dirname(os.path.abspath(args.personality)) if args.personality else None
    filesystem = shell.load_seeded_filesystem(personality, base_dir)
    verdict_path = args.verdicts or os.path.join(
        os.path.dirname(os.path.abspath(args.log)) or ".", "verdicts.jsonl"
    )
    service = HoneypotService(
        config,
        EventLog(args.log, max_bytes=int(args.max_log_bytes) if args.max_log_bytes else None),
        personality=personality,
        filesystem=filesystem,
        templates=_load_templates(args.templates),
        detector_cfg=DetectorConfig(threshold_ms=args.threshold_ms),
        verdict_path=verdict_path,
    )
    try:
        service.start()
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    service.serve_forever()
    return 0


def _cmd_analyze(args) -> int:
    paths: List[str] = sorted(glob.glob(args.logs))
    try:
        result = analyzer.analyze(
            paths,
            DetectorConfig(threshold_ms=args.threshold_ms),
            store=_load_templates(args.templates),
            cowrie=args.cowrie,
        )
    except analyzer.AnalyzerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    doc = analyzer.render_report(result.report, args.format)
    if args.out == "-":
        sys.stdout.buffer.write(doc)
    else:
        with open(args.out, "wb") as fh:
            fh.write(doc)
    return 2 if result.report.skipped_lines else 0


def _cmd_simulate(args) -> int:
    host, _, port = args.target.rpartition(":")
    profile = attacker.load_profile(args.profile)
    if args.seed is not None:
        profile.seed = args.seed
    transcript = attacker.run_attacker(profile, (host or "127.0.0.1", int(port)))
    for entry in transcript.entries:
        print(f"{entry.ts_ms} {entry.direction:>4} {entry.text!r}")
    if transcript.error:
        print(f"error: {transcript.error}", file=sys.stderr)
        return 1
    return 0


def _cmd_calibrate(args) -> int:
    if args.profile:
        profile = attacker.load_profile(args.profile)
    else:
        profile = attacker.AttackerProfile(
            kind="llm_mock",
            susceptibility={"important_message": 0.8, "traditional_override": 0.3},
            complies_with_steal=0.5,
        )
    result = attacker.run_calibration(args.trials, profile, seed=args.seed)
    doc = json.dumps(result.to_dict(), indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(doc)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(doc)
    return 0


def _cmd_scenarios(args) -> int:
    results = attacker.run_detection_scenarios(threshold_ms=args.threshold_ms)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: expected {r.expected_label}, got {r.actual_label}")
        if not r.passed:
            failures += 1
            for line in r.evidence:
                print(f"       {line}")
    return 0 if failures == 0 else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "serve": _cmd_serve,
        "analyze": _cmd_analyze,
        "simulate": _cmd_simulate,
        "calibrate": _cmd_calibrate,
        "scenarios": _cmd_scenarios,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
