"""
Модуль конфигурации приложения
"""
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Настройки приложения"""

    model_config = SettingsConfigDict(
        env_prefix="REG_TSC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_env: str = Field(default="development")
    log_level: str = Field(default="INFO")
    log_json: bool = Field(default=False)
    output_dir: str = Field(default="runs")
    max_decision_time: float = Field(default=5.0)

    # LLM Gateway Settings
    llm_backend: str = Field(default="mock")
    llm_base_url: str = Field(default="")
    llm_api_key_env: str = Field(default="REG_TSC_API_KEY")
    llm_chat_model: str = Field(default="gpt-4o-mini")
    llm_embedding_model: str = Field(default="text-embedding-3-small")
    llm_temperature: float = Field(default=0.0, ge=0.0)
    llm_max_tokens: int = Field(default=1024, gt=0)
    llm_timeout: float = Field(default=60.0, gt=0.0)
    llm_max_retries: int = Field(default=2, ge=0)
    llm_retry_delay: float = Field(default=1.0, ge=0.0)
    llm_cache_dir: str = Field(default="")

    # RERAG Settings
    embedding_dim: int = Field(default=256, gt=0)
    rag_top_k: int = Field(default=1, ge=1)

    # Refinement Settings
    sampling_epsilon: float = Field(default=0.1, gt=0.0)

    def get_cache_dir(self) -> Optional[Path]:
        """Получить директорию кэша ответов (None если кэш выключен)"""
        if not self.llm_cache_dir:
            return None
        return Path(self.llm_cache_dir)

    def is_production(self) -> bool:
        """Проверить, является ли окружение продакшн"""
        return self.app_env.lower() == "production"


# Глобальный экземпляр настроек
settings = Settings()
