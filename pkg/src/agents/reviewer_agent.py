"""
Агент-рецензент: сжимает исторические экстренные случаи в рекомендации
"""
import json
import time
from typing import List, Optional

from pydantic import BaseModel, model_validator
from pydantic import ValidationError as PydanticValidationError

from src.agents.base_agent import BaseAgent
from src.core.llm_client import LLMClient
from src.core.observation import TrafficObservation, load_template
from src.core.traffic_sim import EmergencyVehicleState
from src.core.vector_store import GuidanceItem
from src.utils.error_handler import ParseError, PreconditionError
from src.utils.logger import log_performance, rag_logger


class HistoricalCase(BaseModel):
    """Случай b_l: состояние, действие и следующее состояние"""
    intersection_id: str
    step: int
    obs_t: TrafficObservation
    ev_t: EmergencyVehicleState
    action: int
    obs_next: TrafficObservation
    ev_next: Optional[EmergencyVehicleState] = None

    @model_validator(mode="after")
    def _valid_action(self) -> "HistoricalCase":
        if not 1 <= self.action <= self.obs_t.phase_count:
            raise ValueError(f"action {self.action} outside [1, {self.obs_t.phase_count}]")
        return self


class _GuidanceDraft(BaseModel):
    situation: str
    recommended_action: str
    intended_effect: str


class _ReviewerReply(BaseModel):
    guidance: List[_GuidanceDraft]


def parse_reviewer_reply(text: str) -> List[GuidanceItem]:
    """
    Разобрать JSON-ответ рецензента

    Raises:
        ParseError: Ответ не JSON или у рекомендации нет обязательного поля
    """
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ParseError("Reviewer reply holds no JSON object", {"reply": text[:200]})
    try:
        payload = json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise ParseError(f"Reviewer reply is not valid JSON: {e.msg}", {"reply": text[:200]})

    try:
        reply = _ReviewerReply.model_validate(payload)
    except PydanticValidationError as e:
        error = e.errors()[0]
        field = str(error["loc"][-1])
        raise ParseError(
            f"Reviewer reply is missing or has invalid field '{field}'",
            {"field": field, "location": [str(p) for p in error["loc"]]}
        )

    items = []
    for index, draft in enumerate(reply.guidance, start=1):
        try:
            items.append(GuidanceItem(id=f"g{index:04d}", **draft.model_dump()))
        except PydanticValidationError as e:
            field = str(e.errors()[0]["loc"][-1])
            raise ParseError(f"Guidance item {index} has empty field '{field}'", {"field": field})
    return items


class ReviewerAgent(BaseAgent):
    """Рецензент исторических случаев"""

    def __init__(self, client: Optional[LLMClient] = None):
        super().__init__("reviewer", client)

    def _get_system_prompt(self) -> str:
        return "You review emergency traffic cases and reply with JSON only."

    async def review_cases(self, cases: List[HistoricalCase]) -> List[GuidanceItem]:
        """
        Сформировать рекомендации по историческим случаям

        Args:
            cases: Непустой список случаев

        Returns:
            Рекомендации с ID g0001, g0002, ...
        """
        if not cases:
            raise PreconditionError("review_cases needs at least one historical case")

        start_time = time.time()
        prompt = load_template("reviewer").format(
            cases="\n".join(case.model_dump_json() for case in cases)
        )
        exchange = await self.ask(prompt)
        items = parse_reviewer_reply(exchange.response)

        log_performance("review_cases", time.time() - start_time)
        rag_logger.info(f"Reviewed {len(cases)} cases into {len(items)} guidance items")
        return items
