"""
Тесты экстренного RAG: косинусная близость, поиск, репозиторий, сборка
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from src.agents.reviewer_agent import HistoricalCase
from src.bench.guidance_builder import build_guidance, load_cases
from src.core.rerag import RERAG
from src.core.vector_store import (
    EmbeddingVector,
    GuidanceItem,
    GuidanceRepository,
    cosine_similarity,
    embed,
    retrieve,
)
from src.utils.error_handler import (
    DimensionMismatchError,
    EmptyRepositoryError,
    EmptyTextError,
    ParseError,
    PreconditionError,
    ZeroVectorError,
)


def _random_repository(rng: np.random.Generator, size: int, dim: int) -> GuidanceRepository:
    items = [
        GuidanceItem(
            id=f"g{k + 1:04d}",
            situation=f"situation {k}",
            recommended_action=f"action {k}",
            intended_effect=f"effect {k}",
        )
        for k in range(size)
    ]
    vectors = [EmbeddingVector(values=rng.normal(size=dim).tolist()) for _ in range(size)]
    return GuidanceRepository(items=items, vectors=vectors)


def _brute_force(query: np.ndarray, repository: GuidanceRepository, k: int) -> list:
    matrix = np.array([v.values for v in repository.vectors])
    scores = matrix @ query / (np.linalg.norm(matrix, axis=1) * np.linalg.norm(query))
    order = sorted(range(repository.size), key=lambda i: (-scores[i], repository.items[i].id))
    return [repository.items[i].id for i in order[:k]]


@pytest.fixture
def blocked_case(sample_obs, sample_ev):
    return HistoricalCase(
        intersection_id="I1", step=120, obs_t=sample_obs, ev_t=sample_ev,
        action=4, obs_next=sample_obs, ev_next=sample_ev,
    )


class TestCosineSimilarity:
    """Тесты косинусной близости"""

    def test_known_value(self):
        value = cosine_similarity([1.0, 2.0, 2.0], [2.0, 0.0, 1.0])
        assert value == pytest.approx(4 / (3 * math.sqrt(5)), abs=1e-12)
        assert value == pytest.approx(0.596285, abs=1e-6)

    def test_identical_vectors(self):
        assert cosine_similarity([0.3, -0.4], [0.3, -0.4]) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_non_finite_vector_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingVector(values=[1.0, float("nan")])


class TestRetrieve:
    """Тесты поиска top-K"""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            repository = _random_repository(rng, int(rng.integers(1, 40)), 16)
            query = rng.normal(size=16)
            k = int(rng.integers(1, repository.size + 3))

            result = retrieve(query.tolist(), repository, k)

            assert [item.id for item, _ in result] == _brute_force(query, repository, k)
            assert len(result) == min(k, repository.size)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        repository = _random_repository(rng, 25, 8)
        query = rng.normal(size=8)

        plain = [item.id for item, _ in retrieve(query, repository, 5)]
        scaled = [item.id for item, _ in retrieve(7.0 * query, repository, 5)]
        assert plain == scaled

    def test_ties_break_by_id(self):
        items = [
            GuidanceItem(id=i, situation="s", recommended_action="a", intended_effect="e")
            for i in ("g0002", "g0001")
        ]
        vectors = [EmbeddingVector(values=[1.0, 0.0]), EmbeddingVector(values=[2.0, 0.0])]
        repository = GuidanceRepository(items=items, vectors=vectors)

        assert [item.id for item, _ in retrieve([1.0, 0.0], repository, 2)] == ["g0001", "g0002"]

    def test_empty_repository(self):
        with pytest.raises(EmptyRepositoryError):
            retrieve([1.0], GuidanceRepository(items=[], vectors=[]), 1)

    def test_invalid_k(self):
        repository = _random_repository(np.random.default_rng(0), 3, 4)
        with pytest.raises(PreconditionError):
            retrieve([1.0, 0.0, 0.0, 0.0], repository, 0)


class TestRepository:
    """Тесты хранения репозитория"""

    def test_save_load_same_retrieval(self, tmp_path):
        rng = np.random.default_rng(11)
        repository = _random_repository(rng, 12, 6)
        repository.save(tmp_path)
        loaded = GuidanceRepository.load(tmp_path)

        query = rng.normal(size=6)
        assert loaded == repository
        assert retrieve(query, loaded, 4) == retrieve(query, repository, 4)

    def test_corrupted_item_line(self, tmp_path):
        repository = _random_repository(np.random.default_rng(1), 3, 4)
        items_path, _ = repository.save(tmp_path)
        lines = items_path.read_text(encoding="utf-8").splitlines()
        lines[1] = '{"id": "g0002", "situation": '
        items_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

        with pytest.raises(ParseError) as exc_info:
            GuidanceRepository.load(tmp_path)
        assert exc_info.value.details["line"] == 2

    def test_misaligned_vectors(self):
        item = GuidanceItem(id="g0001", situation="s", recommended_action="a", intended_effect="e")
        with pytest.raises(ValueError):
            GuidanceRepository(items=[item], vectors=[])

    @pytest.mark.asyncio
    async def test_embed_empty_text(self, mock_client):
        with pytest.raises(EmptyTextError):
            await embed("  ", mock_client)


class TestRERAG:
    """Тесты построения и использования репозитория рекомендаций"""

    @pytest.mark.asyncio
    async def test_build_and_retrieve(self, mock_client, blocked_case, sample_obs, sample_ev):
        rerag = RERAG(mock_client, top_k=3)
        repository = await rerag.build([blocked_case])
        results = await rerag.guidance_for(sample_obs, sample_ev)

        assert repository.size == 1
        assert [item.id for item, _ in results] == ["g0001"]
        assert -1.0 <= results[0][1] <= 1.0

    @pytest.mark.asyncio
    async def test_no_repository_no_guidance(self, mock_client, sample_obs, sample_ev):
        assert await RERAG(mock_client).guidance_for(sample_obs, sample_ev) == []


class TestGuidanceBuilder:
    """Тесты сборки репозитория из журнала случаев"""

    def _write_log(self, path: Path, cases) -> Path:
        path.write_text("".join(case.model_dump_json() + "\n" for case in cases), encoding="utf-8")
        return path

    @pytest.mark.asyncio
    async def test_build_is_reproducible(self, mock_client, blocked_case, tmp_path):
        log = self._write_log(tmp_path / "cases.jsonl", [blocked_case, blocked_case])

        await build_guidance(log, mock_client, tmp_path / "first")
        await build_guidance(log, mock_client, tmp_path / "second")

        for name in ("guidance.jsonl", "guidance.vectors.json"):
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()

    @pytest.mark.asyncio
    async def test_corrupted_case_line(self, mock_client, blocked_case, tmp_path):
        log = self._write_log(tmp_path / "cases.jsonl", [blocked_case])
        with log.open("a", encoding="utf-8") as f:
            f.write("{not a case}\n")

        with pytest.raises(ParseError) as exc_info:
            await build_guidance(log, mock_client, tmp_path / "out")
        assert exc_info.value.details["line"] == 2
        assert "cases.jsonl:2" in exc_info.value.message

    @pytest.mark.asyncio
    async def test_empty_case_log(self, mock_client, tmp_path):
        log = tmp_path / "cases.jsonl"
        log.write_text("", encoding="utf-8")

        with pytest.raises(PreconditionError):
            await build_guidance(log, mock_client, tmp_path / "out")

    def test_load_cases_round_trip(self, blocked_case, tmp_path):
        log = self._write_log(tmp_path / "cases.jsonl", [blocked_case])
        assert load_cases(log) == [blocked_case]
