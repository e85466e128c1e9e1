import json

import pytest
import requests

from voxevo.advisor import (
    AdvisorMode,
    AdvisorRequest,
    AdvisorSettings,
    AdvisorSource,
    AuditLog,
    LlmAdvisor,
    ReplayAdvisor,
    ScriptedAdvisor,
    build_prompt,
    make_advisor,
    parse_reply,
    scripted_advisor,
)
from voxevo.errors import ConfigError, ParseError
from voxevo.evolution import Evaluator, initial_state, run_evolution
from voxevo.genome import EncodingSpec
from voxevo.models import HYPERPARAM_RANGES, GenerationReport, HyperParams
from voxevo.morphology import MaterialTable
from voxevo.physics import SimConfig

VALID = '{"mutation_rate":0.2,"mutation_scale":0.05,"crossover_rate":0.5,"elite_fraction":0.2}'


def report(generation, best=0.1, diversity=0.5, params=None):
    return GenerationReport(generation=generation, params=params or HyperParams(), best_fitness=best,
                            mean_fitness=best / 2, std_fitness=0.01, diversity=diversity, evaluations=10,
                            wall_time=1.0)


def request_for(*reports, params=None):
    return AdvisorRequest(window=list(reports), current_params=params or HyperParams(),
                          generation=reports[-1].generation + 1)


class FakeResponse:
    def __init__(self, content=None, status=200):
        self.content = content
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} error")

    def json(self):
        return {"choices": [{"message": {"role": "assistant", "content": self.content}}]}


class FakeSession:
    """Plays back chat replies in order; an exception instance is raised instead of returned"""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        reply = self.replies[min(len(self.calls), len(self.replies)) - 1]
        if isinstance(reply, Exception):
            raise reply
        return FakeResponse(reply)


def llm_settings(**overrides):
    values = dict(mode=AdvisorMode.LLM, endpoint="http://advisor.test/v1/chat/completions", backoff_seconds=0.0)
    values.update(overrides)
    return AdvisorSettings(**values)


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestPrompt:
    def test_byte_identical(self):
        req = request_for(report(3), report(4), report(5))
        assert build_prompt(req) == build_prompt(req)

    def test_one_row_per_report(self):
        one = build_prompt(request_for(report(7)))
        assert sum(line.startswith("| 7 |") for line in one.splitlines()) == 1
        assert sum(line.startswith("| ") and line[2].isdigit() for line in one.splitlines()) == 1

    def test_rows_oldest_first(self):
        text = build_prompt(request_for(report(3, best=0.1), report(4, best=0.2), report(5, best=0.3)))
        assert text.index("| 3 |") < text.index("| 4 |") < text.index("| 5 |")

    def test_names_required_keys(self):
        text = build_prompt(request_for(report(0)))
        for key in HYPERPARAM_RANGES:
            assert f'"{key}"' in text
        assert "material_multipliers" not in text
        assert "material_multipliers" in build_prompt(request_for(report(0)), allow_multipliers=True)

    def test_window_must_be_consecutive(self):
        with pytest.raises(ValueError):
            request_for(report(1), report(3))
        with pytest.raises(ValueError):
            AdvisorRequest(window=[], current_params=HyperParams())


class TestParseReply:
    def test_in_range_passthrough(self):
        params = parse_reply(VALID)
        assert (params.mutation_rate, params.mutation_scale, params.crossover_rate, params.elite_fraction) == (
            0.2, 0.05, 0.5, 0.2)

    def test_out_of_range_clamped(self):
        params = parse_reply('{"mutation_rate":5.0,"mutation_scale":0,"crossover_rate":-1,"elite_fraction":0.99}')
        assert params.mutation_rate == 1.0
        assert params.mutation_scale == 0.001
        assert params.crossover_rate == 0.0
        assert params.elite_fraction == 0.9

    def test_json_inside_prose(self):
        text = f"Diversity is dropping {{so}} I suggest: {VALID}. Good luck!"
        assert parse_reply(text).crossover_rate == 0.5

    def test_unknown_keys_ignored(self):
        assert parse_reply(VALID[:-1] + ',"population":500}').mutation_rate == 0.2

    @pytest.mark.parametrize("text", [
        "I think you should explore more!",
        '{"mutation_rate":0.2,"mutation_scale":0.05,"crossover_rate":0.5}',
        '{"mutation_rate":"high","mutation_scale":0.05,"crossover_rate":0.5,"elite_fraction":0.2}',
        '{"mutation_rate":true,"mutation_scale":0.05,"crossover_rate":0.5,"elite_fraction":0.2}',
        "[0.1, 0.2]",
    ])
    def test_rejected(self, text):
        with pytest.raises(ParseError):
            parse_reply(text)

    def test_multipliers_need_permission(self):
        text = VALID[:-1] + ',"material_multipliers":{"hard_bone":50,"empty":2}}'
        assert parse_reply(text).material_multipliers is None
        assert parse_reply(text, allow_multipliers=True).material_multipliers == {"hard_bone": 10.0}

    def test_round_trip(self):
        params = HyperParams(mutation_rate=0.3, mutation_scale=0.07, crossover_rate=0.9, elite_fraction=0.15)
        assert parse_reply(params.model_dump_json()) == params


class TestScripted:
    def test_no_rule_fires(self):
        reply = scripted_advisor(request_for(report(0, best=0.1), report(1, best=0.2), report(2, best=0.3)))
        assert reply.params == HyperParams()
        assert reply.source == AdvisorSource.SCRIPTED

    def test_low_diversity_raises_mutation(self):
        reply = scripted_advisor(request_for(report(0, best=0.1), report(1, best=0.2, diversity=0.01)))
        assert reply.params.mutation_rate == pytest.approx(0.15)
        assert reply.params.mutation_scale == pytest.approx(0.15)
        assert reply.params.crossover_rate == 0.4

    def test_stalled_fitness_raises_crossover(self):
        reply = scripted_advisor(request_for(report(0), report(1), report(2)))
        assert reply.params.crossover_rate == pytest.approx(0.5)
        assert reply.params.mutation_rate == 0.1

    def test_single_report_never_stalls(self):
        assert scripted_advisor(request_for(report(0))).params == HyperParams()

    def test_clamped(self):
        params = HyperParams(mutation_rate=0.9, mutation_scale=0.9, crossover_rate=0.95)
        reply = scripted_advisor(request_for(report(0, diversity=0.0), report(1, diversity=0.0), params=params))
        assert reply.params.mutation_rate == 1.0
        assert reply.params.crossover_rate == 1.0

    def test_pure(self):
        req = request_for(report(0), report(1, diversity=0.02))
        assert scripted_advisor(req) == scripted_advisor(req)


class TestLlmAdvisor:
    def test_valid_reply(self, tmp_path):
        session = FakeSession([VALID])
        advisor = LlmAdvisor(llm_settings(), AuditLog(tmp_path / "audit.jsonl"), session=session, api_key="k")
        reply = advisor.advise(request_for(report(0), report(1), report(2)))

        assert reply.source == AdvisorSource.LLM
        assert reply.params.mutation_rate == 0.2
        body = session.calls[0]["json"]
        assert body["model"] == "gpt-4-turbo"
        assert [m["role"] for m in body["messages"]] == ["system", "user"]
        assert session.calls[0]["headers"]["Authorization"] == "Bearer k"

        lines = read_lines(tmp_path / "audit.jsonl")
        assert lines[0]["outcome"] == "accepted"
        assert lines[0]["raw_reply"] == VALID
        assert lines[-1]["final"] is True

    def test_retries_then_accepts(self, tmp_path):
        session = FakeSession([requests.ConnectionError("refused"), "no idea", VALID])
        advisor = LlmAdvisor(llm_settings(), AuditLog(tmp_path / "audit.jsonl"), session=session, api_key="k")
        reply = advisor.advise(request_for(report(0)))
        assert reply.source == AdvisorSource.LLM
        assert len(session.calls) == 3
        outcomes = [line.get("outcome") for line in read_lines(tmp_path / "audit.jsonl")]
        assert outcomes[:3] == ["error: refused", "error: reply contains no JSON object", "accepted"]

    def test_unreachable_endpoint_keeps_params(self, tmp_path):
        session = FakeSession([requests.ConnectionError("unreachable")])
        current = HyperParams(mutation_rate=0.25)
        advisor = LlmAdvisor(llm_settings(), AuditLog(tmp_path / "audit.jsonl"), session=session, api_key="k")
        reply = advisor.advise(request_for(report(0), report(1), params=current))
        assert reply.source == AdvisorSource.FALLBACK
        assert reply.params == current
        assert len(session.calls) == 3
        assert read_lines(tmp_path / "audit.jsonl")[-1]["source"] == "fallback-previous"

    def test_http_error_falls_back(self):
        class FailingSession(FakeSession):
            def post(self, url, json=None, headers=None, timeout=None):
                self.calls.append(url)
                return FakeResponse(VALID, status=503)

        session = FailingSession([])
        reply = LlmAdvisor(llm_settings(retries=1), session=session, api_key="k").advise(request_for(report(0)))
        assert reply.source == AdvisorSource.FALLBACK
        assert len(session.calls) == 2

    def test_preamble_sent_once(self):
        session = FakeSession([VALID])
        LlmAdvisor(llm_settings(), session=session, api_key="k").advise(request_for(report(0)))
        system, user = session.calls[0]["json"]["messages"]
        assert system["content"] not in user["content"]
        assert user["content"].count(user["content"].splitlines()[0]) == 1

    def test_default_backoff_waits(self, monkeypatch):
        waits = []
        monkeypatch.setattr("time.sleep", waits.append)
        settings = AdvisorSettings(mode=AdvisorMode.LLM, endpoint="http://advisor.test/v1/chat/completions")
        session = FakeSession([requests.ConnectionError("unreachable")])
        reply = LlmAdvisor(settings, session=session, api_key="k").advise(request_for(report(0)))
        assert waits == [1.0, 2.0]
        assert reply.source == AdvisorSource.FALLBACK
        assert len(session.calls) == 3

    def test_endpoint_required(self):
        with pytest.raises(ConfigError):
            LlmAdvisor(AdvisorSettings(mode=AdvisorMode.LLM))


class TestSupervisedEvolution:
    def test_ga_survives_every_reply_kind(self, tmp_path):
        replies = [
            VALID,
            "Sure! Here you go: " + VALID.replace("0.2,", "0.3,", 1) + " Let me know.",
            '{"mutation_rate":5.0,"mutation_scale":2.0,"crossover_rate":0.5,"elite_fraction":0.01}',
            "garbage garbage garbage",
            requests.ConnectionError("down"),
        ]

        class CyclingSession(FakeSession):
            def post(self, url, json=None, headers=None, timeout=None):
                reply = replies[len(self.calls) % len(replies)]
                self.calls.append(url)
                if isinstance(reply, Exception):
                    raise reply
                return FakeResponse(reply)

        advisor = LlmAdvisor(llm_settings(retries=0), AuditLog(tmp_path / "audit.jsonl"),
                             session=CyclingSession([]), api_key="k")
        evaluator = Evaluator(MaterialTable(), SimConfig(dt=1e-4, duration=0.01), (3, 3, 3))
        state = initial_state(0, 4, EncodingSpec(m=4), (8,))
        run_evolution(state, advisor, evaluator, generations=20)

        assert len(state.history) == 21
        for r in state.history:
            for key, (low, high) in HYPERPARAM_RANGES.items():
                assert low <= getattr(r.params, key) <= high
        assert state.history[5].params.mutation_rate == 1.0
        assert state.history[5].params.elite_fraction == 0.05

        finals = [line for line in read_lines(tmp_path / "audit.jsonl") if line.get("final")]
        assert len(finals) == 18
        assert [f["source"] for f in finals[:5]] == ["llm", "llm", "llm", "fallback-previous", "fallback-previous"]


class TestReplay:
    def test_replays_scripted_run(self, tmp_path):
        log = tmp_path / "audit.jsonl"
        evaluator = Evaluator(MaterialTable(), SimConfig(dt=1e-4, duration=0.01), (3, 3, 3))

        original = initial_state(4, 4, EncodingSpec(m=4), (8,))
        run_evolution(original, ScriptedAdvisor(AuditLog(log)), evaluator, generations=6)

        replayed = initial_state(4, 4, EncodingSpec(m=4), (8,))
        run_evolution(replayed, ReplayAdvisor(log), evaluator, generations=6)

        assert [r.params for r in replayed.history] == [r.params for r in original.history]

    def test_unknown_generation_falls_back(self, tmp_path):
        log = tmp_path / "empty.jsonl"
        log.write_text("")
        reply = ReplayAdvisor(log).advise(request_for(report(0), params=HyperParams(crossover_rate=0.7)))
        assert reply.source == AdvisorSource.FALLBACK
        assert reply.params.crossover_rate == 0.7

    def test_bad_log_line(self, tmp_path):
        log = tmp_path / "broken.jsonl"
        log.write_text("{not json\n")
        with pytest.raises(ConfigError):
            ReplayAdvisor(log)


class TestMakeAdvisor:
    def test_modes(self, tmp_path):
        assert make_advisor(AdvisorSettings(), tmp_path) is None
        assert isinstance(make_advisor(AdvisorSettings(mode=AdvisorMode.SCRIPTED), tmp_path), ScriptedAdvisor)
        assert isinstance(make_advisor(llm_settings(), tmp_path, session=FakeSession([VALID])), LlmAdvisor)
        with pytest.raises(ConfigError):
            make_advisor(AdvisorSettings(mode=AdvisorMode.REPLAY), tmp_path)
