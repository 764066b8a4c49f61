"""
Агент светофора перекрестка

Выбирает режим рассуждения по наличию спецтранспорта, отправляет
промпт в шлюз, разбирает тегированный ответ и при ошибке формата или
бэкенда применяет резервное правило.
"""
import hashlib
import re
import time
from enum import Enum
from typing import List, Optional, Sequence

from pydantic import BaseModel

from src.agents.base_agent import BaseAgent
from src.core.llm_client import LLMClient
from src.core.network_model import RoadNetwork
from src.core.observation import (
    TrafficObservation,
    render_emergency_prompt,
    render_regular_prompt,
)
from src.core.traffic_sim import EmergencyVehicleState
from src.core.vector_store import GuidanceItem
from src.utils.error_handler import (
    BackendError,
    MissingTagError,
    NonIntegerPhaseError,
    PhaseOutOfRangeError,
    PreconditionError,
    ResponseFormatError,
)
from src.utils.logger import agent_logger, log_decision, log_performance

ANALYSIS_TAG = "traffic analysis"
EXPLANATION_TAG = "evaluation and explanation"
SIGNAL_TAG = "signal"

_INTEGER = re.compile(r"[+-]?\d+")


class ReasoningMode(str, Enum):
    DEEP = "Deep"
    LIGHTWEIGHT = "Lightweight"


class ParsedResponse(BaseModel):
    analysis: Optional[str] = None
    explanation: Optional[str] = None
    phase: int


class AgentDecision(BaseModel):
    """Решение агента на точке решения"""
    intersection_id: str
    phase: int
    explanation: str = ""
    analysis: Optional[str] = None
    prediction: Optional[str] = None
    mode: ReasoningMode
    fallback_used: bool = False
    prompt: str = ""
    response: str = ""
    prompt_hash: str = ""
    response_hash: str = ""
    emergency_vehicle: Optional[str] = None
    guidance_ids: List[str] = []


def _tag(text: str, tag: str) -> Optional[str]:
    match = re.search(rf"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", text, re.DOTALL)
    return match.group(1).strip() if match else None


def parse_response(text: str, phase_count: int) -> ParsedResponse:
    """
    Разобрать ответ агента

    Args:
        text: Ответ модели
        phase_count: J_i перекрестка

    Returns:
        ParsedResponse; analysis/explanation = None, если тегов нет

    Raises:
        MissingTagError: Нет <signal>...</signal>
        NonIntegerPhaseError: Содержимое <signal> не целое
        PhaseOutOfRangeError: Фаза вне [1, J_i]
    """
    raw = _tag(text, SIGNAL_TAG)
    if raw is None:
        raise MissingTagError(SIGNAL_TAG)
    if not _INTEGER.fullmatch(raw):
        raise NonIntegerPhaseError(raw)
    phase = int(raw)
    if not 1 <= phase <= phase_count:
        raise PhaseOutOfRangeError(phase, phase_count)
    return ParsedResponse(
        analysis=_tag(text, ANALYSIS_TAG),
        explanation=_tag(text, EXPLANATION_TAG),
        phase=phase,
    )


def _heads_here(network: RoadNetwork, lane_id: str, intersection_id: str) -> bool:
    try:
        return network.head_intersection(lane_id) == intersection_id
    except KeyError:
        return False


def relevant_emergency(
    network: RoadNetwork,
    intersection_id: str,
    emergencies: Sequence[EmergencyVehicleState]
) -> Optional[EmergencyVehicleState]:
    """
    Спецтранспорт, ради которого перекресток рассуждает глубоко

    Машина на входящей полосе важнее; иначе - та, которой осталось меньше
    полос до перекрестка; при равенстве - по ID.
    """
    candidates = []
    for ev in emergencies:
        for distance, lane_id in enumerate(ev.planned_route):
            if _heads_here(network, lane_id, intersection_id):
                candidates.append((distance, ev.vehicle_id, ev))
                break
    if not candidates:
        return None
    return min(candidates, key=lambda c: (c[0], c[1]))[2]


def select_mode(
    network: RoadNetwork,
    intersection_id: str,
    emergencies: Sequence[EmergencyVehicleState]
) -> ReasoningMode:
    """Deep, если спецтранспорт на перекрестке или перекресток есть в его маршруте"""
    if relevant_emergency(network, intersection_id, emergencies) is not None:
        return ReasoningMode.DEEP
    return ReasoningMode.LIGHTWEIGHT


def fallback_policy(obs: TrafficObservation, ev: Optional[EmergencyVehicleState] = None) -> int:
    """
    Резервный выбор фазы

    Спецтранспорт на входящей полосе: наименьшая фаза с его следующим
    движением, иначе наименьшая фаза, обслуживающая полосу. Без него:
    максимум QV + AV(near), при равенстве - меньший индекс.
    """
    if ev is not None and ev.lane in obs.lanes:
        if ev.next_movement is not None:
            own = [p.index for p in obs.phases if tuple(ev.next_movement) in p.movements]
            if own:
                return min(own)
        serving = obs.phases_with_lane(ev.lane)
        if serving:
            return min(serving)
    indices = [p.index for p in obs.phases]
    return min(indices, key=lambda k: (-obs.pressure(k), k))


class SignalAgent(BaseAgent):
    """Агент управления фазами одного перекрестка"""

    def __init__(self, client: Optional[LLMClient] = None):
        super().__init__("signal", client)

    def _get_system_prompt(self) -> str:
        return (
            "You control the traffic signal of one intersection. "
            "Answer strictly in the requested output format."
        )

    async def decide(
        self,
        obs: TrafficObservation,
        mode: ReasoningMode,
        ev: Optional[EmergencyVehicleState] = None,
        guidance: Optional[Sequence[GuidanceItem]] = None
    ) -> AgentDecision:
        """
        Принять решение для перекрестка

        Args:
            obs: Наблюдение
            mode: Режим рассуждения
            ev: Спецтранспорт (обязателен в режиме Deep)
            guidance: Найденные рекомендации (могут быть пустыми)

        Returns:
            AgentDecision с фазой в [1, J_i]
        """
        if mode == ReasoningMode.DEEP and ev is None:
            raise PreconditionError("Deep reasoning needs an emergency vehicle state")

        deep = mode == ReasoningMode.DEEP
        guidance = list(guidance or [])
        bundle = render_emergency_prompt(obs, ev, guidance) if deep else render_regular_prompt(obs)
        start_time = time.time()
        response = ""

        base = {
            "intersection_id": obs.intersection_id,
            "mode": mode,
            "prompt": bundle.text,
            "prompt_hash": bundle.prompt_hash,
            "emergency_vehicle": ev.vehicle_id if deep else None,
            "guidance_ids": [item.id for item in guidance],
        }

        try:
            exchange = await self.ask(bundle.text)
            response = exchange.response
            parsed = parse_response(response, obs.phase_count)
            if deep and parsed.analysis is None:
                raise MissingTagError(ANALYSIS_TAG)
            if deep and parsed.explanation is None:
                raise MissingTagError(EXPLANATION_TAG)
            decision = AgentDecision(
                **base,
                phase=parsed.phase,
                explanation=parsed.explanation or "",
                analysis=parsed.analysis if deep else None,
                prediction=parsed.explanation if deep else None,
                response=response,
                response_hash=exchange.response_hash,
            )
        except (ResponseFormatError, BackendError) as e:
            phase = fallback_policy(obs, ev if deep else None)
            agent_logger.warning(
                f"Fallback used | Intersection: {obs.intersection_id} | Step: {obs.step} | "
                f"Reason: {e.error_code.value} {e.message} | Phase: {phase}"
            )
            decision = AgentDecision(
                **base,
                phase=phase,
                explanation=f"Fallback rule applied: {e.message}",
                analysis=f"Response rejected: {e.message}" if deep else None,
                prediction=f"Fallback rule selected phase {phase}" if deep else None,
                fallback_used=True,
                response=response,
                response_hash=hashlib.sha256(response.encode("utf-8")).hexdigest(),
            )

        log_performance("signal_decision", time.time() - start_time, success=not decision.fallback_used)
        log_decision(obs.intersection_id, obs.step, mode.value, decision.phase, decision.fallback_used)
        return decision
