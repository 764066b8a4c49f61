"""
Модуль обучающих данных

Награды, фильтр имитационных траекторий, буферы опыта по типам
перекрестков, приоритетная выборка, экспорт датасетов и игрушечная
модель для проверки (взвешенного) NLL и его градиента.
"""
import json
import math
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.utils.error_handler import (
    DatasetIOError,
    EmptyBufferError,
    NegativeInputError,
    PreconditionError,
    VocabularyError,
    WindowLengthError,
)
from src.utils.logger import train_logger


class RewardParams(BaseModel):
    lambda1: float = 5.0
    lambda2: float = 1.0
    tau: float = 5.0
    gamma: float = Field(default=1.0, gt=0.0)


class FilterParams(BaseModel):
    t_re: int = Field(ge=1)
    eta: float = 0.5


def compute_reward(
    ql_t: float,
    ql_next: float,
    wte: float,
    params: Optional[RewardParams] = None
) -> float:
    """
    Награда за интервал решения

    r = λ1·(QL_t − QL_next)/max(QL_next, 1) + λ2·(τ − WTE)/(WTE + γ)

    Raises:
        NegativeInputError: Отрицательная очередь или время ожидания
    """
    params = params or RewardParams()
    for name, value in (("QL_t", ql_t), ("QL_next", ql_next), ("WTE", wte)):
        if value < 0:
            raise NegativeInputError(name, value)
    queue_term = params.lambda1 * (ql_t - ql_next) / max(ql_next, 1)
    emergency_term = params.lambda2 * (params.tau - wte) / (wte + params.gamma)
    return queue_term + emergency_term


def filter_trajectory(reward_window: Sequence[float], params: FilterParams) -> bool:
    """
    Оставить траекторию, если сумма наград окна >= η

    Raises:
        WindowLengthError: Длина окна не равна t_re
    """
    if len(reward_window) != params.t_re:
        raise WindowLengthError(len(reward_window), params.t_re)
    return sum(reward_window) >= params.eta


class ReasoningTrajectory(BaseModel):
    """Кортеж (X, Y, r) с привязкой к перекрестку"""
    prompt: str
    response: str
    reward: float
    type_signature: str
    step: int
    intersection_id: str
    mode: str = "Lightweight"


class ExperienceBuffer:
    """Буфер опыта одного типа перекрестков"""

    def __init__(self, type_signature: str):
        self.type_signature = type_signature
        self.trajectories: List[ReasoningTrajectory] = []
        self._mean_reward: Optional[float] = None

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def mean_reward(self) -> Optional[float]:
        return self._mean_reward

    def add(self, trajectory: ReasoningTrajectory) -> None:
        if trajectory.type_signature != self.type_signature:
            raise PreconditionError(
                f"Trajectory of type {trajectory.type_signature} does not belong to buffer {self.type_signature}"
            )
        self.trajectories.append(trajectory)
        self._mean_reward = math.fsum(t.reward for t in self.trajectories) / len(self.trajectories)


def append_to_buffers(
    buffers: Dict[str, ExperienceBuffer],
    trajectories: Iterable[ReasoningTrajectory]
) -> Dict[str, ExperienceBuffer]:
    """Разложить траектории по буферам их типов"""
    for trajectory in trajectories:
        buffers.setdefault(trajectory.type_signature, ExperienceBuffer(trajectory.type_signature)).add(trajectory)
    return buffers


def sampling_probabilities(mean_rewards: Sequence[float], epsilon: float = 0.1) -> List[float]:
    """
    Вероятности выборки типов: обратно пропорциональны сдвинутой средней награде

    SPr_n = (1/(r̄_n + |min r̄| + ε)) / Σ_k 1/(r̄_k + |min r̄| + ε)
    """
    if len(mean_rewards) == 0:
        raise PreconditionError("sampling_probabilities needs at least one buffer")
    if epsilon <= 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}")

    rewards = np.asarray(mean_rewards, dtype=np.float64)
    inverse = 1.0 / (rewards + abs(rewards.min()) + epsilon)
    return (inverse / inverse.sum()).tolist()


def sample_refinement_batch(
    buffers: Sequence[ExperienceBuffer],
    probs: Sequence[float],
    batch_size: int,
    rng: np.random.Generator
) -> List[ReasoningTrajectory]:
    """
    Приоритетная выборка: буфер по probs, затем равномерно внутри буфера

    Raises:
        EmptyBufferError: Пустой буфер с положительной вероятностью
    """
    if len(buffers) != len(probs):
        raise PreconditionError(f"{len(buffers)} buffers but {len(probs)} probabilities")
    if abs(math.fsum(probs) - 1.0) > 1e-9:
        raise PreconditionError(f"Probabilities sum to {math.fsum(probs)}, not 1")
    for buffer, p in zip(buffers, probs):
        if p > 0 and len(buffer) == 0:
            raise EmptyBufferError(buffer.type_signature)

    choices = rng.choice(len(buffers), size=batch_size, p=np.asarray(probs, dtype=np.float64))
    batch = []
    for index in choices:
        buffer = buffers[int(index)]
        batch.append(buffer.trajectories[int(rng.integers(len(buffer)))])
    return batch


class DatasetKind(str, Enum):
    IMITATION = "imitation"
    REFINEMENT = "refinement"


class FineTuneRecord(BaseModel):
    prompt: str
    response: str
    weight: float

    @field_validator("weight")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("weight must be finite")
        return value


def export_dataset(
    records: Sequence[FineTuneRecord],
    path: Union[str, Path],
    kind: DatasetKind,
    clamp_negative: bool = False
) -> Path:
    """
    Записать датасет JSONL (prompt, response, weight)

    Args:
        records: Непустой список записей
        path: Файл назначения
        kind: imitation - вес всегда 1.0; refinement - вес = награда
        clamp_negative: Обрезать отрицательные веса refinement до 0

    Returns:
        Путь к файлу
    """
    if not records:
        raise PreconditionError("export_dataset needs at least one record")

    path = Path(path)
    lines = []
    for record in records:
        weight = 1.0 if kind == DatasetKind.IMITATION else record.weight
        if clamp_negative and weight < 0:
            weight = 0.0
        lines.append(json.dumps(
            {"prompt": record.prompt, "response": record.response, "weight": weight}, ensure_ascii=False
        ))

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset {path}: {e}", {"path": str(path)})

    train_logger.info(f"Exported {kind.value} dataset: {len(records)} records -> {path}")
    return path


def save_buffers(buffers: Dict[str, ExperienceBuffer], path: Union[str, Path]) -> Path:
    """Снимок буферов: одна траектория на строку, по сигнатурам"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for signature in sorted(buffers):
                for trajectory in buffers[signature].trajectories:
                    f.write(trajectory.model_dump_json() + "\n")
    except OSError as e:
        raise DatasetIOError(f"Cannot write buffer snapshot {path}: {e}", {"path": str(path)})
    return path


# ---------------------------------------------------------------------------
# Игрушечная модель для проверки функции потерь
# ---------------------------------------------------------------------------

class ToyLanguageModel:
    """
    Табличная softmax-модель следующего токена

    logits[prev, next]; строка vocab_size - начало последовательности (BOS).
    """

    def __init__(self, vocab_size: int, logits: Optional[np.ndarray] = None):
        if vocab_size < 1:
            raise PreconditionError(f"vocab_size must be >= 1, got {vocab_size}")
        self.vocab_size = vocab_size
        shape = (vocab_size + 1, vocab_size)
        self.logits = np.zeros(shape) if logits is None else np.asarray(logits, dtype=np.float64)
        if self.logits.shape != shape:
            raise PreconditionError(f"logits must have shape {shape}, got {self.logits.shape}")

    @classmethod
    def random(cls, vocab_size: int, rng: np.random.Generator, scale: float = 1.0) -> "ToyLanguageModel":
        return cls(vocab_size, rng.normal(0.0, scale, size=(vocab_size + 1, vocab_size)))

    @property
    def bos(self) -> int:
        return self.vocab_size

    def log_probs(self) -> np.ndarray:
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def check_sequence(self, sequence: Sequence[int]) -> None:
        for token in sequence:
            if isinstance(token, bool) or not isinstance(token, (int, np.integer)) \
                    or not 0 <= token < self.vocab_size:
                raise VocabularyError(token, self.vocab_size)


def toy_weighted_nll(
    model: ToyLanguageModel,
    batch: Sequence[Tuple[Sequence[int], float]]
) -> Tuple[float, np.ndarray]:
    """
    Взвешенный NLL и его аналитический градиент по логитам

    loss = −Σ_batch w · Σ_ω log P(y_ω | y_<ω)
    ∂loss/∂logits[prev] = w · (softmax(logits[prev]) − onehot(y_ω))
    """
    log_probs = model.log_probs()
    probs = np.exp(log_probs)
    loss = 0.0
    grad = np.zeros_like(model.logits)

    for sequence, weight in batch:
        model.check_sequence(sequence)
        prev = model.bos
        for token in sequence:
            loss -= weight * log_probs[prev, token]
            grad[prev] += weight * probs[prev]
            grad[prev, token] -= weight
            prev = int(token)
    return float(loss), grad


def toy_nll(model: ToyLanguageModel, sequences: Sequence[Sequence[int]]) -> float:
    """Невзвешенный NLL, вычисленный напрямую через softmax"""
    total = 0.0
    for sequence in sequences:
        model.check_sequence(sequence)
        prev = model.bos
        for token in sequence:
            row = model.logits[prev] - model.logits[prev].max()
            total -= row[token] - math.log(float(np.exp(row).sum()))
            prev = int(token)
    return total
