import random

import pytest

from agent_snare.attacker import (
    FAKE_SYSTEM_PROMPT,
    AttackerProfile,
    load_profile,
    profile_from_dict,
    run_attacker,
    run_calibration,
)
from agent_snare.detector import DetectorConfig
from conftest import wait_for

FULL = {"traditional_override": 1.0, "important_message": 1.0}


def fast_mock(**kw):
    defaults = dict(kind="llm_mock", script=["uname -a", "exit"],
                    response_delay_ms=120, susceptibility=dict(FULL),
                    complies_with_steal=1.0, seed=42)
    defaults.update(kw)
    return AttackerProfile(**defaults)


class TestProfiles:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            AttackerProfile(kind="quantum_gremlin")

    def test_probability_bounds(self):
        with pytest.raises(ValueError):
            AttackerProfile(kind="llm_mock", susceptibility={"important_message": 1.5})

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError):
            AttackerProfile(kind="llm_mock", response_delay_ms=-1)

    def test_bool_compliance_coerced(self):
        assert AttackerProfile(kind="llm_mock", complies_with_steal=True).complies_with_steal == 1.0

    def test_human_delay_floor(self):
        p = AttackerProfile(kind="human_replayer", response_delay_ms=100)
        assert p.sample_delay_ms(random.Random(0)) >= 8000

    def test_delay_range_sampling_deterministic(self):
        p = AttackerProfile(kind="llm_mock", response_delay_ms=(500, 1700), seed=3)
        a = [p.sample_delay_ms(random.Random(3)) for _ in range(5)]
        b = [p.sample_delay_ms(random.Random(3)) for _ in range(5)]
        assert a == b
        assert all(500 <= d <= 1700 for d in a)

    def test_profile_file_roundtrip(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text('{"kind": "scripted_bot", "script": ["ls"], '
                        '"response_delay_ms": [10, 20], "seed": 9}')
        p = load_profile(str(path))
        assert p.kind == "scripted_bot"
        assert p.delay_range == (10, 20)


class TestRunAttacker:
    def test_scripted_bot_ignores_injections(self, make_service):
        service = make_service()
        profile = AttackerProfile(kind="scripted_bot", script=["uname -a", "exit"],
                                  response_delay_ms=10, seed=1)
        transcript = run_attacker(profile, ("127.0.0.1", service.port))
        assert transcript.error is None
        sent = [e.text for e in transcript.sends()]
        assert sent == ["AUTH root 123456", "uname -a", "exit"]
        assert "blue" not in sent

    def test_llm_mock_answers_hijack_after_delay(self, make_service):
        service = make_service()
        transcript = run_attacker(fast_mock(response_delay_ms=300),
                                  ("127.0.0.1", service.port))
        assert transcript.error is None
        sends = {e.text: e.ts_ms for e in transcript.sends()}
        assert "blue" in sends
        banner_recv = next(e for e in transcript.entries
                           if e.direction == "recv" and "IMPORTANT" in e.text)
        # causality plus the configured thinking delay
        assert sends["blue"] >= banner_recv.ts_ms + 250

    def test_mock_with_zero_susceptibility_never_answers(self, make_service):
        service = make_service()
        profile = fast_mock(susceptibility={}, complies_with_steal=0.0)
        transcript = run_attacker(profile, ("127.0.0.1", service.port))
        assert all(e.text != "blue" for e in transcript.sends())

    def test_compliant_mock_discloses_on_steal(self, make_service):
        service = make_service()
        transcript = run_attacker(fast_mock(), ("127.0.0.1", service.port))
        assert any(e.text == FAKE_SYSTEM_PROMPT for e in transcript.sends())
        assert wait_for(lambda: len(service.verdicts) == 1)
        verdict = next(iter(service.verdicts.values()))
        assert verdict.steal_response_flagged

    def test_deterministic_send_sequence(self, make_service):
        service = make_service()
        a = run_attacker(fast_mock(), ("127.0.0.1", service.port))
        b = run_attacker(fast_mock(), ("127.0.0.1", service.port))
        assert [e.text for e in a.sends()] == [e.text for e in b.sends()]

    def test_connect_failure_reported(self):
        profile = AttackerProfile(kind="scripted_bot", script=["ls"])
        transcript = run_attacker(profile, ("127.0.0.1", 1))  # nothing listens there
        assert transcript.error is not None

    def test_external_transcript_replay(self, make_service, tmp_path):
        service = make_service()
        path = tmp_path / "cmds.txt"
        path.write_text("pwd\nexit\n")
        profile = AttackerProfile(kind="external_transcript", response_delay_ms=10,
                                  transcript_path=str(path))
        transcript = run_attacker(profile, ("127.0.0.1", service.port))
        assert [e.text for e in transcript.sends()][1:] == ["pwd", "exit"]

    def test_lowered_threshold_turns_fast_mock_into_likely_human(self, make_service):
        service = make_service(detector_cfg=DetectorConfig(threshold_ms=100))
        run_attacker(fast_mock(response_delay_ms=1000), ("127.0.0.1", service.port))
        assert wait_for(lambda: len(service.verdicts) == 1)
        verdict = next(iter(service.verdicts.values()))
        assert verdict.label.value == "likely_human"


class TestCalibration:
    def test_zero_susceptibility_all_zero(self):
        profile = AttackerProfile(kind="llm_mock", susceptibility={})
        result = run_calibration(50, profile, seed=1)
        assert all(c.successes == 0 for c in result.cells.values())

    def test_full_susceptibility_all_one(self):
        profile = AttackerProfile(kind="llm_mock", susceptibility=dict(FULL),
                                  complies_with_steal=1.0)
        result = run_calibration(50, profile, seed=1)
        assert all(c.success_rate == 1.0 for c in result.cells.values())

    def test_style_ordering_preserved(self):
        profile = AttackerProfile(
            kind="llm_mock",
            susceptibility={"important_message": 0.8, "traditional_override": 0.3},
            complies_with_steal=0.5,
        )
        result = run_calibration(200, profile, seed=7)
        assert result.rate("important_message", "hijack") > result.rate("traditional_override", "hijack")

    def test_steal_goal_below_hijack_goal(self):
        profile = AttackerProfile(kind="llm_mock",
                                  susceptibility={"important_message": 0.8},
                                  complies_with_steal=0.4)
        result = run_calibration(200, profile, seed=7)
        assert result.rate("important_message", "steal") < result.rate("important_message", "hijack")

    def test_deterministic_per_seed(self):
        profile = AttackerProfile(kind="llm_mock",
                                  susceptibility={"important_message": 0.6},
                                  complies_with_steal=0.5)
        a = run_calibration(100, profile, seed=5)
        b = run_calibration(100, profile, seed=5)
        c = run_calibration(100, profile, seed=6)
        assert a.to_dict() == b.to_dict()
        assert a.to_dict() != c.to_dict()

    def test_counts_consistent(self):
        profile = AttackerProfile(kind="llm_mock",
                                  susceptibility={"important_message": 0.5},
                                  complies_with_steal=0.5)
        result = run_calibration(80, profile, seed=2)
        for cell in result.cells.values():
            assert 0 <= cell.successes <= cell.trials == 80

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            run_calibration(0, AttackerProfile(kind="llm_mock"))
