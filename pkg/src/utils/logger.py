"""
Модуль настройки логирования

Каждая запись несет контекст прогона (метка политики, сценарий, seed)
и шаг симуляции. Контекст задается run_context/set_step и живет в
contextvars, поэтому задачи asyncio.gather наследуют его от цикла прогона.
"""
import logging
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import colorlog
from pythonjsonlogger import jsonlogger

from src.utils.config import settings

RUN_LOG_FILE = "run.log"

_context: ContextVar[Dict[str, Any]] = ContextVar("run_context", default={})


class LatencyStats:
    """Счетчики длительностей операций за один прогон"""

    def __init__(self) -> None:
        self._durations: Dict[str, List[float]] = {}
        self._failed: Dict[str, int] = {}

    def record(self, operation: str, duration: float, success: bool) -> None:
        self._durations.setdefault(operation, []).append(duration)
        if not success:
            self._failed[operation] = self._failed.get(operation, 0) + 1

    def summary(self) -> Dict[str, Dict[str, float]]:
        return {
            operation: {
                "count": len(values),
                "failed": self._failed.get(operation, 0),
                "mean_s": round(sum(values) / len(values), 6),
                "max_s": round(max(values), 6),
            }
            for operation, values in sorted(self._durations.items())
        }


class RunContextFilter(logging.Filter):
    """Добавить в запись поля run и step из текущего контекста"""

    def filter(self, record: logging.LogRecord) -> bool:
        context = _context.get()
        record.run = context.get("run", "-")
        record.step = context.get("step", "-")
        return True


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """JSON-строка на запись: уровень, логгер, контекст прогона"""

    def add_fields(self, log_record, record, message_dict):
        super().add_fields(log_record, record, message_dict)
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["run"] = getattr(record, "run", "-")
        log_record["step"] = getattr(record, "step", "-")
        scenario = _context.get().get("scenario")
        if scenario is not None:
            log_record["scenario"] = scenario


def _json_formatter() -> CustomJsonFormatter:
    return CustomJsonFormatter("%(asctime)s %(level)s %(name)s %(message)s")


def setup_logger(
    name: str,
    level: Optional[str] = None,
    use_json: bool = False
) -> logging.Logger:
    """
    Настроить логгер: цветной stderr для разработки, JSON для продакшн

    Args:
        name: Имя логгера
        level: Уровень логирования (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        use_json: Использовать JSON формат

    Returns:
        Настроенный логгер
    """
    logger = logging.getLogger(name)
    log_level = getattr(logging, (level or settings.log_level).upper())
    logger.setLevel(log_level)
    logger.handlers.clear()

    # stdout остается для вывода CLI
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(log_level)
    handler.addFilter(RunContextFilter())

    if use_json or settings.log_json or settings.is_production():
        handler.setFormatter(_json_formatter())
    else:
        handler.setFormatter(colorlog.ColoredFormatter(
            "%(log_color)s%(asctime)s - %(name)s - %(levelname)s - [%(run)s step=%(step)s] %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red,bg_white",
            }
        ))

    logger.addHandler(handler)
    logger.propagate = False
    return logger


main_logger = setup_logger("main")
sim_logger = setup_logger("simulation")
agent_logger = setup_logger("agents")
llm_logger = setup_logger("llm")
rag_logger = setup_logger("rerag")
train_logger = setup_logger("training")
bench_logger = setup_logger("bench")
error_logger = setup_logger("errors", level="ERROR")

APP_LOGGERS = (main_logger, sim_logger, agent_logger, llm_logger, rag_logger, train_logger, bench_logger)


def set_level(level: str) -> None:
    """Переключить уровень всех логгеров приложения (флаг --log-level)"""
    for logger in APP_LOGGERS:
        logger.setLevel(getattr(logging, level.upper()))
        for handler in logger.handlers:
            if not isinstance(handler, logging.FileHandler):
                handler.setLevel(getattr(logging, level.upper()))


@contextmanager
def run_context(**fields: Any) -> Iterator[LatencyStats]:
    """
    Контекст прогона для всех записей внутри блока

    Args:
        **fields: run (метка политики), scenario, seed

    Yields:
        Счетчики длительностей, которые заполняет log_performance
    """
    stats = LatencyStats()
    token = _context.set({**fields, "latency": stats})
    try:
        yield stats
    finally:
        _context.reset(token)


def set_step(step: int) -> None:
    """Обновить шаг симуляции в текущем контексте"""
    _context.set({**_context.get(), "step": step})


def attach_run_log(directory: Union[str, Path]) -> logging.FileHandler:
    """
    Дублировать записи всех логгеров в JSON-файл прогона

    Args:
        directory: Директория результатов прогона

    Returns:
        Обработчик для detach_run_log
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(directory / RUN_LOG_FILE, mode="w", encoding="utf-8")
    handler.setLevel(logging.INFO)
    handler.addFilter(RunContextFilter())
    handler.setFormatter(_json_formatter())
    for logger in APP_LOGGERS:
        logger.addHandler(handler)
    return handler


def detach_run_log(handler: logging.FileHandler) -> None:
    for logger in APP_LOGGERS:
        logger.removeHandler(handler)
    handler.close()


def log_error(
    logger: logging.Logger,
    error: Exception,
    context: Optional[dict] = None
) -> None:
    """
    Логировать ошибку с кодом и контекстом

    Трассировка стека пишется только на уровне DEBUG: обработанные
    ошибки бэкенда во время прогона идут потоком.

    Args:
        logger: Логгер для записи
        error: Исключение
        context: Дополнительный контекст
    """
    code = getattr(error, "error_code", None)
    error_msg = f"{type(error).__name__}"
    if code is not None:
        error_msg += f" [{code.value}]"
    error_msg += f": {error}"
    if context:
        error_msg += f" | Context: {context}"

    with_trace = logger.isEnabledFor(logging.DEBUG)
    logger.error(error_msg, exc_info=with_trace)
    error_logger.error(error_msg, exc_info=with_trace)


def log_decision(
    intersection_id: str,
    step: int,
    mode: str,
    phase: int,
    fallback_used: bool = False
) -> None:
    """
    Логировать решение агента перекрестка

    Args:
        intersection_id: ID перекрестка
        step: Шаг симуляции
        mode: Режим рассуждения (Deep/Lightweight)
        phase: Выбранная фаза
        fallback_used: Использован ли резервный выбор
    """
    agent_logger.debug(
        f"Intersection: {intersection_id} | Step: {step} | Mode: {mode} | "
        f"Phase: {phase} | Fallback: {fallback_used}"
    )


def log_performance(
    operation: str,
    duration: float,
    success: bool = True
) -> None:
    """
    Учесть длительность операции в статистике прогона и в логе

    Args:
        operation: Название операции (без шага: шаг берется из контекста)
        duration: Длительность в секундах
        success: Успешность выполнения
    """
    stats = _context.get().get("latency")
    if stats is not None:
        stats.record(operation, duration, success)

    main_logger.debug(
        f"Performance: {operation} | Duration: {duration:.3f}s | Status: {'SUCCESS' if success else 'FAILED'}"
    )
    if duration > settings.max_decision_time:
        main_logger.warning(
            f"Decision time exceeded: {duration:.3f}s > {settings.max_decision_time}s for operation: {operation}"
        )
