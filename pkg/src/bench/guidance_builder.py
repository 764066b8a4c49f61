"""
Сборка репозитория рекомендаций из журнала исторических случаев
"""
import time
from pathlib import Path
from typing import List, Union

from pydantic import ValidationError as PydanticValidationError

from src.agents.reviewer_agent import HistoricalCase
from src.core.llm_client import LLMClient
from src.core.rerag import RERAG
from src.core.vector_store import GuidanceRepository
from src.utils.error_handler import ParseError, PreconditionError
from src.utils.logger import bench_logger, log_performance


def load_cases(path: Union[str, Path]) -> List[HistoricalCase]:
    """
    Прочитать cases.jsonl

    Raises:
        ParseError: Файл не читается или строка не является случаем (с номером строки)
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParseError(f"Cannot read case log {path}: {e}", {"path": str(path)})

    cases = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            cases.append(HistoricalCase.model_validate_json(line))
        except PydanticValidationError as e:
            raise ParseError(
                f"{path}:{number}: invalid historical case",
                {"line": number, "error": e.errors()[0]["msg"]}
            )
    return cases


async def build_guidance(
    case_log: Union[str, Path],
    client: LLMClient,
    output_dir: Union[str, Path]
) -> GuidanceRepository:
    """
    Рецензировать случаи, векторизовать рекомендации и сохранить репозиторий

    Args:
        case_log: Путь к cases.jsonl
        client: Шлюз LLM (чат и эмбеддинги)
        output_dir: Куда записать guidance.jsonl и guidance.vectors.json

    Returns:
        Построенный репозиторий
    """
    start_time = time.time()
    cases = load_cases(case_log)
    if not cases:
        raise PreconditionError(f"Case log {case_log} holds no cases")

    repository = await RERAG(client).build(cases)
    repository.save(output_dir)

    log_performance("build_guidance", time.time() - start_time)
    bench_logger.info(f"Guidance built | Cases: {len(cases)} | Items: {repository.size} | Out: {output_dir}")
    return repository
