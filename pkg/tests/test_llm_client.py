"""
Тесты шлюза к LLM: кэш, повторы, разбор ошибок бэкенда
"""
import sys
from pathlib import Path

import httpx
import openai
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from src.core.llm_client import BackendConfig, BackendKind, LLMClient
from src.core.observation import render_regular_prompt
from src.utils.error_handler import (
    ApiError,
    BackendError,
    BackendTimeoutError,
    EmptyTextError,
    PreconditionError,
    TransportError,
    ValidationError,
)

BASE_URL = "http://llm.local"


def _request() -> httpx.Request:
    return httpx.Request("POST", f"{BASE_URL}/v1/chat/completions")


def _remote_client(mocker, side_effect) -> tuple:
    """Удаленный клиент с подмененным AsyncOpenAI"""
    client = LLMClient(BackendConfig(kind=BackendKind.REMOTE, base_url=BASE_URL, retry_delay=0.0))
    fake = mocker.MagicMock()
    fake.chat.completions.create = mocker.AsyncMock(side_effect=side_effect)
    mocker.patch.object(client, "_remote", return_value=fake)
    return client, fake.chat.completions.create


class TestBackendConfig:
    """Тесты конфигурации бэкенда"""

    def test_remote_requires_base_url(self):
        with pytest.raises(ValidationError):
            BackendConfig.from_settings("remote", base_url="")

    def test_kind_is_case_insensitive(self):
        assert BackendConfig.from_settings("MOCK").kind == BackendKind.MOCK

    def test_unknown_kind(self):
        with pytest.raises(PreconditionError):
            BackendConfig.from_settings("carrier-pigeon")


class TestMockBackend:
    """Тесты детерминированного бэкенда"""

    @pytest.mark.asyncio
    async def test_same_request_same_response(self, sample_obs):
        prompt = render_regular_prompt(sample_obs).text
        answers = []
        for _ in range(2):
            client = LLMClient(BackendConfig(kind=BackendKind.MOCK))
            answers.append(await client.chat(client.build_request([{"role": "user", "content": prompt}])))
        assert answers[0] == answers[1]
        assert "<signal>3</signal>" in answers[0]

    @pytest.mark.asyncio
    async def test_embeddings_are_unit_vectors(self, mock_client):
        vectors = await mock_client.embed_texts(["queue on road#2_1", "queue on road#2_1", "clear lane"])

        assert vectors[0] == vectors[1]
        assert vectors[0] != vectors[2]
        assert len(vectors[0]) == mock_client.config.embedding_dim
        assert sum(v * v for v in vectors[2]) == pytest.approx(1.0)

    @pytest.mark.asyncio
    async def test_embed_nothing(self, mock_client):
        with pytest.raises(PreconditionError):
            await mock_client.embed_texts([])

    @pytest.mark.asyncio
    async def test_embed_blank_text(self, mock_client):
        with pytest.raises(EmptyTextError):
            await mock_client.embed_texts(["ok", "   "])


class TestCache:
    """Тесты дискового кэша"""

    @pytest.mark.asyncio
    async def test_cache_hit(self, tmp_path):
        client = LLMClient(BackendConfig(kind=BackendKind.MOCK, cache_dir=str(tmp_path)))
        request = client.build_request([{"role": "user", "content": "<signal>?</signal>"}])

        first = await client.chat(request)
        second = await client.chat(request)

        assert first == second
        assert client.backend_calls == 1
        assert client.cache_hits == 1
        assert (tmp_path / f"{request.request_hash}.json").exists()

    @pytest.mark.asyncio
    async def test_cache_shared_between_clients(self, tmp_path):
        config = BackendConfig(kind=BackendKind.MOCK, cache_dir=str(tmp_path))
        first = LLMClient(config)
        await first.embed_texts(["hello"])

        second = LLMClient(config)
        await second.embed_texts(["hello"])
        assert second.backend_calls == 0
        assert second.cache_hits == 1

    @pytest.mark.parametrize("payload", ['{"key": "abc", "val', "{}", "[1, 2]", ""])
    @pytest.mark.asyncio
    async def test_corrupt_entry_is_a_miss(self, tmp_path, payload):
        client = LLMClient(BackendConfig(kind=BackendKind.MOCK, cache_dir=str(tmp_path)))
        request = client.build_request([{"role": "user", "content": "<signal>?</signal>"}])
        (tmp_path / f"{request.request_hash}.json").write_text(payload, encoding="utf-8")

        answer = await client.chat(request)

        assert client.backend_calls == 1
        assert client.cache_hits == 0
        assert await client.chat(request) == answer
        assert client.cache_hits == 1

    def test_request_hash_covers_parameters(self, mock_client):
        messages = [{"role": "user", "content": "hi"}]
        base = mock_client.build_request(messages)
        warmer = base.model_copy(update={"temperature": 0.7})

        assert base.request_hash == mock_client.build_request(messages).request_hash
        assert base.request_hash != warmer.request_hash


class TestRemoteErrors:
    """Тесты обработки ошибок удаленного бэкенда"""

    @pytest.mark.asyncio
    async def test_server_error_retried_then_transport_error(self, mocker):
        error = openai.InternalServerError(
            "boom", response=httpx.Response(500, request=_request()), body=None
        )
        client, create = _remote_client(mocker, error)

        with pytest.raises(TransportError) as exc_info:
            await client.chat(client.build_request([{"role": "user", "content": "hi"}]))

        assert create.await_count == 3
        assert exc_info.value.details["status_code"] == 500
        assert exc_info.value.exit_code == 3

    @pytest.mark.asyncio
    async def test_client_error_not_retried(self, mocker):
        error = openai.BadRequestError(
            "bad", response=httpx.Response(400, request=_request()), body={"error": "bad request"}
        )
        client, create = _remote_client(mocker, error)

        with pytest.raises(ApiError) as exc_info:
            await client.chat(client.build_request([{"role": "user", "content": "hi"}]))

        assert create.await_count == 1
        assert exc_info.value.status_code == 400
        assert exc_info.value.body == {"error": "bad request"}

    @pytest.mark.asyncio
    async def test_timeout(self, mocker):
        client, _ = _remote_client(mocker, openai.APITimeoutError(request=_request()))

        with pytest.raises(BackendTimeoutError):
            await client.chat(client.build_request([{"role": "user", "content": "hi"}]))

    @pytest.mark.asyncio
    async def test_recovers_after_transient_failure(self, mocker):
        response = mocker.MagicMock()
        response.choices = [mocker.MagicMock()]
        response.choices[0].message.content = "<signal>2</signal>"
        error = openai.InternalServerError(
            "boom", response=httpx.Response(503, request=_request()), body=None
        )
        client, create = _remote_client(mocker, [error, response])

        answer = await client.chat(client.build_request([{"role": "user", "content": "hi"}]))

        assert answer == "<signal>2</signal>"
        assert create.await_count == 2

    @pytest.mark.asyncio
    async def test_embedding_failure_logged(self, mocker):
        client = LLMClient(BackendConfig(kind=BackendKind.REMOTE, base_url=BASE_URL, retry_delay=0.0))
        fake = mocker.MagicMock()
        fake.embeddings.create = mocker.AsyncMock(side_effect=openai.InternalServerError(
            "boom", response=httpx.Response(502, request=_request()), body=None
        ))
        mocker.patch.object(client, "_remote", return_value=fake)
        log_performance = mocker.patch("src.core.llm_client.log_performance")

        with pytest.raises(TransportError):
            await client.embed_texts(["queue on road#2_1"])

        log_performance.assert_called_once_with("llm_embed", mocker.ANY, success=False)

    @pytest.mark.asyncio
    async def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("REG_TSC_TEST_ABSENT_KEY", raising=False)
        client = LLMClient(BackendConfig(
            kind=BackendKind.REMOTE, base_url=BASE_URL, api_key_env_var="REG_TSC_TEST_ABSENT_KEY"
        ))

        with pytest.raises(BackendError):
            await client.chat(client.build_request([{"role": "user", "content": "hi"}]))
