"""
Базовый класс для всех LLM-агентов
"""
import hashlib
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

from src.core.llm_client import LLMClient, llm_client
from src.utils.logger import agent_logger, log_performance


@dataclass(frozen=True)
class Exchange:
    """Один обмен с бэкендом"""
    request_hash: str
    response: str

    @property
    def response_hash(self) -> str:
        return hashlib.sha256(self.response.encode("utf-8")).hexdigest()


class BaseAgent(ABC):
    """Базовый класс агента: системный промпт + один запрос к шлюзу"""

    def __init__(self, agent_type: str, client: Optional[LLMClient] = None):
        """
        Инициализация агента

        Args:
            agent_type: Тип агента (signal, reviewer, query)
            client: Клиент шлюза (по умолчанию глобальный)
        """
        self.agent_type = agent_type
        self.client = client or llm_client
        self.system_prompt = self._get_system_prompt()

        agent_logger.debug(f"Initialized {agent_type} agent | Backend: {self.client.config.kind.value}")

    @abstractmethod
    def _get_system_prompt(self) -> str:
        """
        Получить системный промпт для агента

        Returns:
            Системный промпт
        """
        pass

    async def ask(self, prompt: str) -> Exchange:
        """
        Отправить промпт и получить ответ

        Args:
            prompt: Текст пользовательского сообщения

        Returns:
            Exchange с хешем запроса и текстом ответа
        """
        request = self.client.build_request([
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": prompt},
        ])

        start_time = time.time()
        try:
            response = await self.client.chat(request)
        except Exception:
            log_performance(f"{self.agent_type}_round_trip", time.time() - start_time, success=False)
            raise

        log_performance(f"{self.agent_type}_round_trip", time.time() - start_time, success=True)
        return Exchange(request_hash=request.request_hash, response=response)
