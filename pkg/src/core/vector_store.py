"""
Модуль репозитория рекомендаций для экстренных ситуаций

Рекомендации хранятся в памяти вместе с векторами; поиск - точный
полный перебор по косинусной близости.
"""
import json
import time
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.utils.error_handler import (
    DimensionMismatchError,
    EmptyRepositoryError,
    EmptyTextError,
    ParseError,
    PreconditionError,
    ZeroVectorError,
)
from src.utils.logger import log_performance, rag_logger

if TYPE_CHECKING:
    from src.core.llm_client import LLMClient

ITEMS_FILE = "guidance.jsonl"
VECTORS_FILE = "guidance.vectors.json"

VectorLike = Union["EmbeddingVector", Sequence[float], np.ndarray]


class EmbeddingVector(BaseModel):
    """Вектор эмбеддинга фиксированной размерности"""
    model_config = ConfigDict(frozen=True)

    values: List[float]

    @field_validator("values")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("embedding vector is empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding vector has non-finite components")
        return values

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class GuidanceItem(BaseModel):
    """Рекомендация: ситуация, действие, ожидаемый эффект"""
    model_config = ConfigDict(frozen=True)

    id: str
    situation: str
    recommended_action: str
    intended_effect: str

    @field_validator("situation", "recommended_action", "intended_effect")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("guidance text must be non-empty")
        return value

    def as_text(self) -> str:
        """Текст, который векторизуется"""
        return (
            f"Situation: {self.situation}\n"
            f"Recommended action: {self.recommended_action}\n"
            f"Intended effect: {self.intended_effect}"
        )


class GuidanceRepository(BaseModel):
    """Векторизованный репозиторий рекомендаций"""
    items: List[GuidanceItem]
    vectors: List[EmbeddingVector]

    @model_validator(mode="after")
    def _aligned(self) -> "GuidanceRepository":
        if len(self.items) != len(self.vectors):
            raise ValueError(f"{len(self.items)} items but {len(self.vectors)} vectors")
        dims = {v.dim for v in self.vectors}
        if len(dims) > 1:
            raise ValueError(f"vectors have mixed dimensions {sorted(dims)}")
        return self

    @property
    def size(self) -> int:
        return len(self.items)

    @property
    def dim(self) -> Optional[int]:
        return self.vectors[0].dim if self.vectors else None

    def save(self, directory: Union[str, Path]) -> Tuple[Path, Path]:
        """
        Сохранить репозиторий: guidance.jsonl и guidance.vectors.json

        Args:
            directory: Целевая директория

        Returns:
            Пути к двум файлам
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        items_path, vectors_path = directory / ITEMS_FILE, directory / VECTORS_FILE

        items_path.write_text(
            "".join(item.model_dump_json() + "\n" for item in self.items), encoding="utf-8"
        )
        vectors_path.write_text(
            json.dumps({
                "dim": self.dim,
                "ids": [item.id for item in self.items],
                "vectors": [v.values for v in self.vectors],
            }) + "\n",
            encoding="utf-8",
        )
        rag_logger.info(f"Guidance repository saved: {self.size} items -> {directory}")
        return items_path, vectors_path

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "GuidanceRepository":
        """Загрузить репозиторий, сохраненный методом save"""
        directory = Path(directory)
        items: List[GuidanceItem] = []
        items_path = directory / ITEMS_FILE
        try:
            lines = items_path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ParseError(f"Cannot read {items_path}: {e}")
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                items.append(GuidanceItem.model_validate_json(line))
            except ValueError as e:
                raise ParseError(f"{items_path}:{number}: invalid guidance item", {"line": number, "error": str(e)})

        vectors_path = directory / VECTORS_FILE
        try:
            payload = json.loads(vectors_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ParseError(f"Cannot read {vectors_path}: {e}")
        if payload.get("ids") != [item.id for item in items]:
            raise ParseError(f"{vectors_path} ids do not match {items_path}")

        try:
            return cls(items=items, vectors=[EmbeddingVector(values=v) for v in payload["vectors"]])
        except ValueError as e:
            raise ParseError(f"Inconsistent guidance repository in {directory}: {e}")


def _array(vector: VectorLike) -> np.ndarray:
    if isinstance(vector, EmbeddingVector):
        return vector.as_array()
    return np.asarray(vector, dtype=np.float64)


def cosine_similarity(a: VectorLike, b: VectorLike) -> float:
    """
    Косинусная близость (a·b)/(|a||b|)

    Raises:
        DimensionMismatchError: Размерности различаются
        ZeroVectorError: Один из векторов нулевой
    """
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise DimensionMismatchError(x.size, y.size)
    norm_x, norm_y = np.linalg.norm(x), np.linalg.norm(y)
    if norm_x == 0 or norm_y == 0:
        raise ZeroVectorError()
    return float(np.clip(np.dot(x, y) / (norm_x * norm_y), -1.0, 1.0))


def retrieve(
    query: VectorLike,
    repository: GuidanceRepository,
    k: int = 1
) -> List[Tuple[GuidanceItem, float]]:
    """
    Top-K рекомендаций по косинусной близости

    Порядок - по убыванию близости, при равенстве - по возрастанию ID.

    Args:
        query: Вектор запроса
        repository: Репозиторий
        k: Количество результатов

    Returns:
        min(k, D) пар (рекомендация, близость)
    """
    if repository.size == 0:
        raise EmptyRepositoryError()
    if k < 1:
        raise PreconditionError(f"K must be >= 1, got {k}")

    start_time = time.time()
    scored = [
        (item, cosine_similarity(query, vector))
        for item, vector in zip(repository.items, repository.vectors)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    log_performance("guidance_retrieve", time.time() - start_time)
    return scored[:k]


async def embed(text: str, client: "LLMClient") -> EmbeddingVector:
    """
    Векторизовать текст через шлюз

    Raises:
        EmptyTextError: Пустой текст
    """
    if not text.strip():
        raise EmptyTextError()
    vectors = await client.embed_texts([text])
    return EmbeddingVector(values=vectors[0])


async def build_repository(items: List[GuidanceItem], client: "LLMClient") -> GuidanceRepository:
    """Векторизовать рекомендации одним пакетом"""
    if not items:
        return GuidanceRepository(items=[], vectors=[])
    vectors = await client.embed_texts([item.as_text() for item in items])
    repository = GuidanceRepository(
        items=items, vectors=[EmbeddingVector(values=v) for v in vectors]
    )
    rag_logger.info(f"Guidance repository built: D={repository.size} | dim={repository.dim}")
    return repository
