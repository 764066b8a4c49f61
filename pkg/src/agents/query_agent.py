"""
Генератор поисковых запросов по текущей экстренной ситуации
"""
from typing import Optional

from src.agents.base_agent import BaseAgent
from src.core.llm_client import LLMClient
from src.core.observation import (
    TrafficObservation,
    load_template,
    render_emergency_state,
    render_queuing,
    render_topology,
)
from src.core.traffic_sim import EmergencyVehicleState
from src.utils.error_handler import ParseError, PreconditionError
from src.utils.logger import rag_logger


class QueryAgent(BaseAgent):
    """Агент q_t = QGen(obs, Ev)"""

    def __init__(self, client: Optional[LLMClient] = None):
        super().__init__("query", client)

    def _get_system_prompt(self) -> str:
        return "You write one-line retrieval queries."

    async def generate_query(
        self,
        obs: TrafficObservation,
        ev: Optional[EmergencyVehicleState]
    ) -> str:
        if ev is None:
            raise PreconditionError("Query generation needs an emergency vehicle state")

        prompt = load_template("query").format(
            topology=render_topology(obs),
            queuing=render_queuing(obs),
            emergency_state=render_emergency_state(ev),
        )
        exchange = await self.ask(prompt)
        query = " ".join(exchange.response.split())
        if not query:
            raise ParseError("Query generator returned an empty query")

        rag_logger.debug(f"Query | Intersection: {obs.intersection_id} | EV: {ev.vehicle_id} | {query}")
        return query
