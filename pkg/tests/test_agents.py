"""
Тесты агентов: разбор ответов, резервная политика, выбор режима
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from src.agents.query_agent import QueryAgent
from src.agents.reviewer_agent import HistoricalCase, ReviewerAgent, parse_reviewer_reply
from src.agents.signal_agent import (
    ReasoningMode,
    SignalAgent,
    fallback_policy,
    parse_response,
    relevant_emergency,
    select_mode,
)
from src.core.observation import LaneState, build_observation
from src.utils import error_handler
from src.utils.error_handler import ParseError, PreconditionError, ResponseFormatError, TransportError
from tests.test_cases import (
    SAMPLE_GUIDANCE,
    SAMPLE_QUERY,
    FUZZ_MUTATIONS,
    FUZZ_SEEDS,
    MALFORMED_RESPONSES,
    SAMPLE_RESPONSE,
)


def _mutate(text: str, rng: np.random.Generator) -> str:
    """Случайно испортить ответ агента"""
    mutation = FUZZ_MUTATIONS[int(rng.integers(len(FUZZ_MUTATIONS)))]
    if mutation == "drop_signal":
        return text.replace("<signal>4</signal>", "")
    if mutation == "replace_phase":
        value = rng.choice(["0", "3", "7", "-2", "x", "", "2.0", " 1 ", "99999999999"])
        return text.replace("<signal>4</signal>", f"<signal>{value}</signal>")
    if mutation == "truncate":
        return text[:int(rng.integers(len(text)))]
    if mutation == "duplicate_tags":
        return text.replace("</response>", f"<signal>{int(rng.integers(-3, 8))}</signal></response>")
    if mutation == "garbage_prefix":
        return "".join(rng.choice(list("<>/ab1 \n"), size=20)) + text
    if mutation == "swap_case":
        return text.replace("<signal>", "<SIGNAL>")
    return text.replace("</signal>", "")


def _obs_with_queues(cross_network, queues):
    """Наблюдение, где QV полос задает давление фаз"""
    states = {lane: LaneState(lane=lane, queued=q) for lane, q in queues.items()}
    return build_observation(cross_network, "I1", states)


class TestResponseParsing:
    """Тесты разбора ответа агента"""

    def test_sample_response(self):
        parsed = parse_response(SAMPLE_RESPONSE, 4)

        assert parsed.phase == 4
        assert parsed.analysis.startswith("The emergency vehicle Ambulance_1")
        assert "15.9 s" in parsed.explanation

    @pytest.mark.parametrize("text,error_name", MALFORMED_RESPONSES)
    def test_malformed_responses(self, text, error_name):
        with pytest.raises(getattr(error_handler, error_name)):
            parse_response(text, 4)

    def test_signal_with_whitespace(self):
        assert parse_response("<signal> 2 </signal>", 4).phase == 2

    def test_first_signal_wins(self):
        assert parse_response("<signal>1</signal><signal>3</signal>", 4).phase == 1

    def test_fuzzed_responses_always_yield_valid_phase(self, sample_obs, sample_ev):
        rng = np.random.default_rng(FUZZ_SEEDS)
        for _ in FUZZ_SEEDS:
            text = _mutate(SAMPLE_RESPONSE, rng)
            try:
                phase = parse_response(text, sample_obs.phase_count).phase
            except ResponseFormatError:
                phase = fallback_policy(sample_obs, sample_ev)
            assert 1 <= phase <= sample_obs.phase_count


class TestFallbackPolicy:
    """Тесты резервной политики"""

    def test_max_pressure(self, cross_network):
        obs = _obs_with_queues(cross_network, {"road#1_2": 7, "road#1_1": 4, "road#2_2": 10, "road#2_1": 8})
        assert fallback_policy(obs) == 3

    def test_pressure_tie_breaks_to_lower_index(self, cross_network):
        obs = _obs_with_queues(cross_network, {"road#1_2": 5, "road#2_2": 5})
        assert fallback_policy(obs) == 1

    def test_empty_intersection(self, cross_network):
        assert fallback_policy(_obs_with_queues(cross_network, {})) == 1

    def test_emergency_lane_served(self, sample_obs, sample_ev):
        assert fallback_policy(sample_obs, sample_ev) == 4

    def test_emergency_own_movement(self, sample_obs, sample_ev):
        ev = sample_ev.model_copy(update={"lane": "road#1_1", "next_movement": ("road#1_1", "-road#2_1")})
        assert fallback_policy(sample_obs, ev) == 2

    def test_emergency_elsewhere_uses_pressure(self, sample_obs, sample_ev):
        ev = sample_ev.model_copy(update={"lane": "road#9_1"})
        assert fallback_policy(sample_obs, ev) == 3


class TestModeSelection:
    """Тесты выбора режима рассуждения"""

    def test_emergency_on_approach(self, cross_network, sample_ev):
        assert select_mode(cross_network, "I1", [sample_ev]) == ReasoningMode.DEEP

    def test_no_emergencies(self, cross_network):
        assert select_mode(cross_network, "I1", []) == ReasoningMode.LIGHTWEIGHT

    def test_emergency_elsewhere(self, cross_network, sample_ev):
        ev = sample_ev.model_copy(update={"lane": "road#9_1", "planned_route": ["road#9_1", "road#32_1"]})
        assert select_mode(cross_network, "I1", [ev]) == ReasoningMode.LIGHTWEIGHT

    def test_upcoming_emergency(self, cross_network, sample_ev):
        ev = sample_ev.model_copy(update={
            "vehicle_id": "Ambulance_2", "lane": "road#64_1", "planned_route": ["road#64_1", "road#2_1"]
        })
        assert select_mode(cross_network, "I1", [ev]) == ReasoningMode.DEEP

    def test_on_lane_preferred_over_upcoming(self, cross_network, sample_ev):
        upcoming = sample_ev.model_copy(update={
            "vehicle_id": "Ambulance_0", "lane": "road#64_1", "planned_route": ["road#64_1", "road#4_1"]
        })
        chosen = relevant_emergency(cross_network, "I1", [upcoming, sample_ev])
        assert chosen.vehicle_id == "Ambulance_1"


class TestSignalAgent:
    """Тесты агента управления фазами"""

    @pytest.mark.asyncio
    async def test_deep_decision(self, mock_client, sample_obs, sample_ev, sample_guidance):
        agent = SignalAgent(mock_client)
        decision = await agent.decide(sample_obs, ReasoningMode.DEEP, sample_ev, [sample_guidance])

        assert decision.phase == 4
        assert not decision.fallback_used
        assert "15.9 s" in decision.explanation
        assert decision.analysis is not None
        assert decision.emergency_vehicle == "Ambulance_1"
        assert decision.guidance_ids == ["g0001"]

    @pytest.mark.asyncio
    async def test_lightweight_decision(self, mock_client, sample_obs):
        decision = await SignalAgent(mock_client).decide(sample_obs, ReasoningMode.LIGHTWEIGHT)

        assert decision.phase == 3
        assert decision.analysis is None
        assert decision.emergency_vehicle is None

    @pytest.mark.asyncio
    async def test_deep_without_emergency(self, mock_client, sample_obs):
        with pytest.raises(PreconditionError):
            await SignalAgent(mock_client).decide(sample_obs, ReasoningMode.DEEP)

    @pytest.mark.asyncio
    async def test_malformed_response_falls_back(self, mocker, mock_client, sample_obs, sample_ev):
        mocker.patch.object(mock_client, "chat", mocker.AsyncMock(return_value="<signal>9</signal>"))
        decision = await SignalAgent(mock_client).decide(sample_obs, ReasoningMode.DEEP, sample_ev)

        assert decision.fallback_used
        assert decision.phase == 4
        assert decision.response == "<signal>9</signal>"

    @pytest.mark.asyncio
    async def test_deep_response_without_analysis_falls_back(self, mocker, mock_client, sample_obs, sample_ev):
        text = "<evaluation and explanation>fine</evaluation and explanation><signal>1</signal>"
        mocker.patch.object(mock_client, "chat", mocker.AsyncMock(return_value=text))
        decision = await SignalAgent(mock_client).decide(sample_obs, ReasoningMode.DEEP, sample_ev)

        assert decision.fallback_used
        assert decision.phase == 4

    @pytest.mark.asyncio
    async def test_backend_failure_falls_back(self, mocker, mock_client, sample_obs):
        mocker.patch.object(mock_client, "chat", mocker.AsyncMock(side_effect=TransportError("down")))
        decision = await SignalAgent(mock_client).decide(sample_obs, ReasoningMode.LIGHTWEIGHT)

        assert decision.fallback_used
        assert decision.phase == 3
        assert decision.response == ""


class TestReviewerAgent:
    """Тесты рецензента"""

    def test_missing_field(self):
        reply = '{"guidance": [{"situation": "a", "recommended_action": "b"}]}'
        with pytest.raises(ParseError) as exc_info:
            parse_reviewer_reply(reply)
        assert exc_info.value.details["field"] == "intended_effect"

    def test_not_json(self):
        with pytest.raises(ParseError):
            parse_reviewer_reply("I could not review these cases.")

    def test_ids_in_order(self):
        reply = (
            'Here you go: {"guidance": ['
            '{"situation": "a", "recommended_action": "b", "intended_effect": "c"},'
            '{"situation": "d", "recommended_action": "e", "intended_effect": "f"}]}'
        )
        assert [item.id for item in parse_reviewer_reply(reply)] == ["g0001", "g0002"]

    @pytest.mark.asyncio
    async def test_blocked_lane_case(self, mock_client, sample_obs, sample_ev):
        case = HistoricalCase(
            intersection_id="I1", step=100, obs_t=sample_obs, ev_t=sample_ev,
            action=4, obs_next=sample_obs, ev_next=None,
        )
        items = await ReviewerAgent(mock_client).review_cases([case, case])

        assert len(items) == 1
        assert items[0].situation == SAMPLE_GUIDANCE["situation"]
        assert items[0].recommended_action == SAMPLE_GUIDANCE["recommended_action"]

    @pytest.mark.asyncio
    async def test_no_cases(self, mock_client):
        with pytest.raises(PreconditionError):
            await ReviewerAgent(mock_client).review_cases([])

    def test_case_action_out_of_range(self, sample_obs, sample_ev):
        with pytest.raises(ValueError):
            HistoricalCase(
                intersection_id="I1", step=0, obs_t=sample_obs, ev_t=sample_ev,
                action=5, obs_next=sample_obs,
            )


class TestQueryAgent:
    """Тесты генератора запросов"""

    @pytest.mark.asyncio
    async def test_query_for_blocked_lane(self, mock_client, sample_obs, sample_ev):
        assert await QueryAgent(mock_client).generate_query(sample_obs, sample_ev) == SAMPLE_QUERY

    @pytest.mark.asyncio
    async def test_query_needs_emergency(self, mock_client, sample_obs):
        with pytest.raises(PreconditionError):
            await QueryAgent(mock_client).generate_query(sample_obs, None)
