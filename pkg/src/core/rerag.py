"""
Экстренный RAG с рецензентом: построение репозитория и поиск рекомендаций
"""
from typing import List, Optional, Tuple

from src.agents.query_agent import QueryAgent
from src.agents.reviewer_agent import HistoricalCase, ReviewerAgent
from src.core.llm_client import LLMClient
from src.core.observation import TrafficObservation
from src.core.traffic_sim import EmergencyVehicleState
from src.core.vector_store import (
    GuidanceItem,
    GuidanceRepository,
    build_repository,
    embed,
    retrieve,
)
from src.utils.config import settings
from src.utils.logger import rag_logger


class RERAG:
    """Фасад: рецензент -> эмбеддинги -> репозиторий; запрос -> top-K"""

    def __init__(
        self,
        client: LLMClient,
        repository: Optional[GuidanceRepository] = None,
        top_k: Optional[int] = None
    ):
        self.client = client
        self.repository = repository
        self.top_k = top_k or settings.rag_top_k
        self.reviewer = ReviewerAgent(client)
        self.query_agent = QueryAgent(client)

    async def build(self, cases: List[HistoricalCase]) -> GuidanceRepository:
        """Рецензировать случаи и векторизовать рекомендации"""
        items = await self.reviewer.review_cases(cases)
        self.repository = await build_repository(items, self.client)
        return self.repository

    async def guidance_for(
        self,
        obs: TrafficObservation,
        ev: EmergencyVehicleState
    ) -> List[Tuple[GuidanceItem, float]]:
        """
        Найти рекомендации для текущей ситуации

        Returns:
            Пары (рекомендация, близость); пусто, если репозиторий пуст
        """
        if self.repository is None or self.repository.size == 0:
            return []
        query = await self.query_agent.generate_query(obs, ev)
        vector = await embed(query, self.client)
        results = retrieve(vector, self.repository, self.top_k)
        rag_logger.debug(
            f"Retrieved {[item.id for item, _ in results]} for {obs.intersection_id} | EV: {ev.vehicle_id}"
        )
        return results
