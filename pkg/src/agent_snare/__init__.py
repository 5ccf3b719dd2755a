"""agent-snare: an SSH-style honeypot that fingerprints LLM-driven attackers
by planting prompt injections in session output and checking who answers,
and how fast."""

from .detector import DetectorConfig, TimingProfile, Verdict, bucket_for_report, classify
from .model import ActorLabel, EventKind, SessionEvent, Stage, new_session_id

__version__ = "0.1.0"

__all__ = [
    "ActorLabel",
    "DetectorConfig",
    "EventKind",
    "SessionEvent",
    "Stage",
    "TimingProfile",
    "Verdict",
    "bucket_for_report",
    "classify",
    "new_session_id",
    "__version__",
]
