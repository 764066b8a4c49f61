"""
Модуль шлюза к LLM: чат и эмбеддинги

Два бэкенда: удаленный OpenAI-совместимый (AsyncOpenAI) и
детерминированный мок. Ответы кэшируются на диске по хешу запроса.
"""
import hashlib
import json
import os
import time
import uuid
from enum import Enum
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, TypeVar

import openai
from openai import AsyncOpenAI
from pydantic import BaseModel, Field, model_validator

from src.core.mock_backend import MockBackend
from src.utils.config import settings
from src.utils.error_handler import (
    ApiError,
    BackendError,
    BackendTimeoutError,
    EmptyTextError,
    PreconditionError,
    TransportError,
    run_with_retry,
    validate_model,
)
from src.utils.logger import llm_logger, log_performance

T = TypeVar("T")

RETRYABLE_ERRORS = (
    openai.APIConnectionError,
    openai.InternalServerError,
    openai.RateLimitError,
)


class BackendKind(str, Enum):
    REMOTE = "Remote"
    MOCK = "Mock"


class BackendConfig(BaseModel):
    """Настройки бэкенда"""
    kind: BackendKind = BackendKind.MOCK
    base_url: str = ""
    api_key_env_var: str = "REG_TSC_API_KEY"
    timeout: float = Field(default=60.0, gt=0.0)
    max_retries: int = Field(default=2, ge=0)
    retry_delay: float = Field(default=1.0, ge=0.0)
    cache_dir: Optional[str] = None
    chat_model: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-small"
    embedding_dim: int = Field(default=256, gt=0)
    temperature: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=1024, gt=0)

    @model_validator(mode="after")
    def _remote_needs_url(self) -> "BackendConfig":
        if self.kind == BackendKind.REMOTE and not self.base_url:
            raise ValueError("Remote backend requires base_url")
        return self

    @classmethod
    def from_settings(cls, kind: Optional[str] = None, **overrides: Any) -> "BackendConfig":
        """Собрать конфигурацию из глобальных настроек"""
        cache_dir = settings.get_cache_dir()
        data = {
            "kind": _parse_kind(kind or settings.llm_backend),
            "base_url": settings.llm_base_url,
            "api_key_env_var": settings.llm_api_key_env,
            "timeout": settings.llm_timeout,
            "max_retries": settings.llm_max_retries,
            "retry_delay": settings.llm_retry_delay,
            "cache_dir": str(cache_dir) if cache_dir else None,
            "chat_model": settings.llm_chat_model,
            "embedding_model": settings.llm_embedding_model,
            "embedding_dim": settings.embedding_dim,
            "temperature": settings.llm_temperature,
            "max_tokens": settings.llm_max_tokens,
        }
        data.update(overrides)
        return validate_model(cls, data, "backend configuration")


def _parse_kind(value: str) -> BackendKind:
    for kind in BackendKind:
        if value.lower() == kind.value.lower():
            return kind
    raise PreconditionError(f"Unknown backend kind {value!r}", {"allowed": [k.value for k in BackendKind]})


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    """Запрос к чату"""
    model: str
    messages: List[ChatMessage] = Field(min_length=1)
    temperature: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=1024, gt=0)

    @property
    def request_hash(self) -> str:
        """Стабильный дайджест всех полей запроса"""
        return _digest({"kind": "chat", **self.model_dump(mode="json")})


def _digest(payload: Dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Дисковый кэш ответов: один JSON-файл на хеш запроса"""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Optional[Any]:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))["value"]
        except (OSError, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
            # испорченная запись считается промахом и будет перезаписана
            llm_logger.warning(f"Unreadable cache entry {path.name} dropped | Error: {type(e).__name__}: {e}")
            path.unlink(missing_ok=True)
            return None

    def put(self, key: str, value: Any) -> None:
        path = self._path(key)
        tmp = path.with_name(f"{key}.{uuid.uuid4().hex}.tmp")
        tmp.write_text(json.dumps({"key": key, "value": value}, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)


class LLMClient:
    """Клиент шлюза: чат и эмбеддинги через выбранный бэкенд"""

    def __init__(self, config: Optional[BackendConfig] = None):
        self.config = config or BackendConfig.from_settings()
        self.cache = ResponseCache(Path(self.config.cache_dir)) if self.config.cache_dir else None
        self.mock = MockBackend(self.config.embedding_dim)
        self._client: Optional[AsyncOpenAI] = None

        self.backend_calls = 0
        self.cache_hits = 0

        llm_logger.info(
            f"LLM Client initialized | Backend: {self.config.kind.value} | "
            f"Model: {self.config.chat_model} | Cache: {self.config.cache_dir or 'off'}"
        )

    @property
    def is_mock(self) -> bool:
        return self.config.kind == BackendKind.MOCK

    def build_request(self, messages: List[Dict[str, str]]) -> ChatRequest:
        return ChatRequest(
            model=self.config.chat_model,
            messages=[ChatMessage(**m) for m in messages],
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )

    def _remote(self) -> AsyncOpenAI:
        if self._client is None:
            api_key = os.environ.get(self.config.api_key_env_var)
            if not api_key:
                raise BackendError(
                    f"Environment variable {self.config.api_key_env_var} with the API key is not set"
                )
            self._client = AsyncOpenAI(
                api_key=api_key,
                base_url=f"{self.config.base_url.rstrip('/')}/v1",
                timeout=self.config.timeout,
                max_retries=0,
            )
        return self._client

    async def chat(self, request: ChatRequest) -> str:
        """
        Выполнить запрос к чату

        Args:
            request: Запрос

        Returns:
            Текст первого варианта ответа

        Raises:
            TransportError: Бэкенд недоступен после всех повторов
            BackendTimeoutError: Истекло время ожидания
            ApiError: Ответ не-2xx
        """
        key = request.request_hash
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                llm_logger.debug(f"Cache hit for chat request {key[:12]}")
                return cached

        start_time = time.time()
        try:
            self.backend_calls += 1
            if self.is_mock:
                content = self.mock.chat([m.model_dump() for m in request.messages])
            else:
                content = await self._remote_chat(request)
            log_performance("llm_chat", time.time() - start_time, success=True)
        except BackendError:
            log_performance("llm_chat", time.time() - start_time, success=False)
            raise

        if self.cache is not None:
            self.cache.put(key, content)
        return content

    async def embed_texts(self, texts: List[str]) -> List[List[float]]:
        """
        Векторизовать тексты с сохранением порядка

        Args:
            texts: Непустой список непустых текстов

        Returns:
            Векторы в порядке входа
        """
        if not texts:
            raise PreconditionError("embed_texts needs at least one text")
        if any(not t.strip() for t in texts):
            raise EmptyTextError()

        key = _digest({"kind": "embeddings", "model": self._embedding_model(), "input": list(texts)})
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                return cached

        start_time = time.time()
        try:
            self.backend_calls += 1
            if self.is_mock:
                vectors = self.mock.embed(texts)
            else:
                vectors = await self._remote_embed(texts)
            log_performance("llm_embed", time.time() - start_time, success=True)
        except BackendError:
            log_performance("llm_embed", time.time() - start_time, success=False)
            raise

        llm_logger.debug(f"Embedded {len(texts)} texts | Dim: {len(vectors[0])}")
        if self.cache is not None:
            self.cache.put(key, vectors)
        return vectors

    def _embedding_model(self) -> str:
        if self.is_mock:
            return f"mock-hash-{self.config.embedding_dim}"
        return self.config.embedding_model

    async def _remote_chat(self, request: ChatRequest) -> str:
        client = self._remote()

        async def call() -> str:
            response = await client.chat.completions.create(
                model=request.model,
                messages=[m.model_dump() for m in request.messages],
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
            return response.choices[0].message.content or ""

        return await self._with_retry(call, "chat.completions")

    async def _remote_embed(self, texts: List[str]) -> List[List[float]]:
        client = self._remote()

        async def call() -> List[List[float]]:
            response = await client.embeddings.create(model=self.config.embedding_model, input=texts)
            return [list(item.embedding) for item in sorted(response.data, key=lambda d: d.index)]

        return await self._with_retry(call, "embeddings")

    async def _with_retry(self, call: Callable[[], Awaitable[T]], name: str) -> T:
        context = {"endpoint": name, "base_url": self.config.base_url}
        try:
            return await run_with_retry(
                call,
                max_retries=self.config.max_retries,
                base_delay=self.config.retry_delay,
                retry_on=RETRYABLE_ERRORS,
                name=name,
            )
        except openai.APITimeoutError as e:
            raise BackendTimeoutError(f"Backend timed out on {name}: {e}", context)
        except openai.APIConnectionError as e:
            raise TransportError(f"Backend unreachable on {name}: {e}", context)
        except (openai.InternalServerError, openai.RateLimitError) as e:
            raise TransportError(
                f"Backend failed on {name} after {self.config.max_retries + 1} attempts",
                {**context, "status_code": e.status_code}
            )
        except openai.APIStatusError as e:
            body = e.body if e.body is not None else e.response.text
            raise ApiError(e.status_code, body, context)

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.close()
            self._client = None


# Глобальный экземпляр клиента
llm_client = LLMClient()
