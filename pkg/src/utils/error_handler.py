"""
Модуль обработки ошибок
"""
import asyncio
from enum import Enum
from typing import Any, Awaitable, Callable, Dict, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from src.utils.logger import error_logger

T = TypeVar("T")
M = TypeVar("M", bound=BaseModel)


class ErrorCode(Enum):
    """Коды ошибок системы"""
    # Общие ошибки
    UNKNOWN_ERROR = "E001"
    CONFIGURATION_ERROR = "E002"
    PRECONDITION_FAILED = "E003"

    # Ошибки модели сети
    PARSE_ERROR = "E101"
    VALIDATION_ERROR = "E102"

    # Ошибки симуляции
    NO_ROUTE = "E201"
    INVALID_PHASE = "E202"

    # Ошибки поиска рекомендаций
    EMPTY_TEXT = "E301"
    DIMENSION_MISMATCH = "E302"
    ZERO_VECTOR = "E303"
    EMPTY_REPOSITORY = "E304"

    # Ошибки формата ответа агента
    MISSING_TAG = "E401"
    PHASE_OUT_OF_RANGE = "E402"
    NON_INTEGER_PHASE = "E403"

    # Ошибки бэкенда LLM
    BACKEND_ERROR = "E501"
    TRANSPORT_ERROR = "E502"
    BACKEND_TIMEOUT = "E503"
    API_ERROR = "E504"

    # Ошибки обучающих данных
    NEGATIVE_INPUT = "E601"
    WINDOW_LENGTH = "E602"
    EMPTY_BUFFER = "E603"
    VOCABULARY_ERROR = "E604"
    DATASET_IO = "E605"

    # Ошибки стенда
    SCENARIO_MISMATCH = "E701"


BACKEND_CODES = {
    ErrorCode.BACKEND_ERROR,
    ErrorCode.TRANSPORT_ERROR,
    ErrorCode.BACKEND_TIMEOUT,
    ErrorCode.API_ERROR,
}

UNEXPECTED_CODES = {ErrorCode.UNKNOWN_ERROR, ErrorCode.DATASET_IO}


class RegTscException(Exception):
    """Базовое исключение системы управления светофорами"""

    def __init__(
        self,
        message: str,
        error_code: ErrorCode = ErrorCode.UNKNOWN_ERROR,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)

    @property
    def exit_code(self) -> int:
        """Код завершения процесса для CLI"""
        if self.error_code in BACKEND_CODES:
            return 3
        if self.error_code in UNEXPECTED_CODES:
            return 1
        return 2

    def to_dict(self) -> Dict[str, Any]:
        """Преобразовать исключение в словарь"""
        return {
            "error": True,
            "code": self.error_code.value,
            "message": self.message,
            "details": self.details
        }

    def get_user_message(self) -> str:
        """Получить сообщение для пользователя"""
        user_messages = {
            ErrorCode.PARSE_ERROR: "Input document could not be parsed",
            ErrorCode.VALIDATION_ERROR: "Input failed validation",
            ErrorCode.NO_ROUTE: "Network has no usable boundary-to-boundary route",
            ErrorCode.EMPTY_REPOSITORY: "Guidance repository is empty",
            ErrorCode.TRANSPORT_ERROR: "LLM backend unreachable after retries",
            ErrorCode.BACKEND_TIMEOUT: "LLM backend timed out",
            ErrorCode.API_ERROR: "LLM backend rejected the request",
            ErrorCode.SCENARIO_MISMATCH: "Compared runs do not share scenario and seed",
        }

        prefix = user_messages.get(self.error_code, "Error")
        return f"[{self.error_code.value}] {prefix}: {self.message}"


class PreconditionError(RegTscException):
    """Нарушено предусловие операции"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.PRECONDITION_FAILED, details)


class ParseError(RegTscException):
    """Документ или ответ не удалось разобрать"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.PARSE_ERROR, details)


class ValidationError(RegTscException):
    """Документ разобран, но нарушает инварианты модели"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.VALIDATION_ERROR, details)


class NoRouteError(RegTscException):
    """В сети нет маршрутов между граничными узлами"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.NO_ROUTE, details)


class InvalidPhaseError(RegTscException):
    """Недопустимый индекс фазы для перекрестка"""

    def __init__(self, intersection_id: str, phase: Any, details: Optional[Dict[str, Any]] = None):
        message = f"Invalid phase {phase!r} for intersection {intersection_id}"
        super().__init__(message, ErrorCode.INVALID_PHASE, details)


class EmptyTextError(RegTscException):
    """Пустой текст для эмбеддинга"""

    def __init__(self, message: str = "Empty text provided for embedding"):
        super().__init__(message, ErrorCode.EMPTY_TEXT)


class DimensionMismatchError(RegTscException):
    """Векторы разной размерности"""

    def __init__(self, left: int, right: int):
        message = f"Vector dimensions differ: {left} != {right}"
        super().__init__(message, ErrorCode.DIMENSION_MISMATCH, {"left": left, "right": right})


class ZeroVectorError(RegTscException):
    """Нулевой вектор в косинусной близости"""

    def __init__(self, message: str = "Cosine similarity is undefined for a zero vector"):
        super().__init__(message, ErrorCode.ZERO_VECTOR)


class EmptyRepositoryError(RegTscException):
    """Поиск в пустом репозитории рекомендаций"""

    def __init__(self, message: str = "Guidance repository holds no items"):
        super().__init__(message, ErrorCode.EMPTY_REPOSITORY)


class ResponseFormatError(RegTscException):
    """Базовая ошибка формата ответа агента"""


class MissingTagError(ResponseFormatError):
    """В ответе отсутствует обязательный тег"""

    def __init__(self, tag: str):
        super().__init__(f"Response lacks <{tag}>...</{tag}>", ErrorCode.MISSING_TAG, {"tag": tag})


class PhaseOutOfRangeError(ResponseFormatError):
    """Фаза вне диапазона [1, J_i]"""

    def __init__(self, phase: int, phase_count: int):
        super().__init__(
            f"Phase {phase} outside [1, {phase_count}]",
            ErrorCode.PHASE_OUT_OF_RANGE,
            {"phase": phase, "phase_count": phase_count}
        )


class NonIntegerPhaseError(ResponseFormatError):
    """Содержимое <signal> не является целым числом"""

    def __init__(self, raw: str):
        super().__init__(f"Signal value {raw!r} is not an integer", ErrorCode.NON_INTEGER_PHASE, {"raw": raw})


class BackendError(RegTscException):
    """Исключение для ошибок бэкенда LLM"""

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        error_code: ErrorCode = ErrorCode.BACKEND_ERROR
    ):
        super().__init__(message, error_code, details)


class TransportError(BackendError):
    """Бэкенд недоступен после всех повторов"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details, ErrorCode.TRANSPORT_ERROR)


class BackendTimeoutError(BackendError):
    """Бэкенд не ответил за отведенное время"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details, ErrorCode.BACKEND_TIMEOUT)


class ApiError(BackendError):
    """Бэкенд вернул не-2xx ответ"""

    def __init__(self, status_code: int, body: Any, details: Optional[Dict[str, Any]] = None):
        self.status_code = status_code
        self.body = body
        merged = {"status_code": status_code, "body": body, **(details or {})}
        super().__init__(f"Backend returned HTTP {status_code}", merged, ErrorCode.API_ERROR)


class NegativeInputError(RegTscException):
    """Отрицательная длина очереди или время ожидания"""

    def __init__(self, name: str, value: float):
        super().__init__(f"{name} must be >= 0, got {value}", ErrorCode.NEGATIVE_INPUT, {name: value})


class WindowLengthError(RegTscException):
    """Длина окна наград не совпадает с t_re"""

    def __init__(self, actual: int, expected: int):
        super().__init__(
            f"Reward window holds {actual} values, expected t_re={expected}",
            ErrorCode.WINDOW_LENGTH,
            {"actual": actual, "expected": expected}
        )


class EmptyBufferError(RegTscException):
    """Выборка из пустого буфера опыта"""

    def __init__(self, type_signature: str):
        super().__init__(
            f"Experience buffer {type_signature} is empty but has positive probability",
            ErrorCode.EMPTY_BUFFER,
            {"type_signature": type_signature}
        )


class VocabularyError(RegTscException):
    """Токен вне словаря игрушечной модели"""

    def __init__(self, token: Any, vocab_size: int):
        super().__init__(
            f"Token {token!r} outside vocabulary of size {vocab_size}",
            ErrorCode.VOCABULARY_ERROR,
            {"token": token, "vocab_size": vocab_size}
        )


class DatasetIOError(RegTscException):
    """Ошибка записи/чтения датасета"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.DATASET_IO, details)


class ScenarioMismatchError(RegTscException):
    """Сравниваемые прогоны используют разные сценарии или seed"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCode.SCENARIO_MISMATCH, details)


def handle_exception(
    error: Exception,
    context: Optional[Dict[str, Any]] = None,
    log_traceback: bool = True
) -> RegTscException:
    """
    Обработать исключение и преобразовать в RegTscException

    Args:
        error: Исходное исключение
        context: Контекст ошибки
        log_traceback: Логировать traceback

    Returns:
        RegTscException с соответствующими данными
    """
    if isinstance(error, RegTscException):
        error_logger.error(f"RegTscException: {error.message} | Context: {context}")
        return error

    if log_traceback:
        error_logger.error(
            f"Unhandled exception: {type(error).__name__}: {str(error)} | Context: {context}",
            exc_info=True,
        )

    details = dict(context or {})
    details["original_error"] = str(error)
    details["error_type"] = type(error).__name__

    return RegTscException(
        message=str(error),
        error_code=ErrorCode.UNKNOWN_ERROR,
        details=details
    )


def validate_model(model_cls: Type[M], data: Any, source: str) -> M:
    """
    Провалидировать словарь pydantic-моделью

    Args:
        model_cls: Класс модели
        data: Исходные данные
        source: Описание источника для сообщения об ошибке

    Returns:
        Экземпляр модели

    Raises:
        ValidationError: Данные нарушают ограничения модели
    """
    try:
        return model_cls.model_validate(data)
    except PydanticValidationError as e:
        problems = [
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        ]
        raise ValidationError(f"Invalid {source}: {problems[0]}", {"problems": problems})


async def run_with_retry(
    operation: Callable[[], Awaitable[T]],
    max_retries: int,
    base_delay: float,
    retry_on: Tuple[Type[BaseException], ...],
    name: str = "operation"
) -> T:
    """
    Выполнить корутину с повторами и экспоненциальной задержкой

    Всего выполняется max_retries + 1 попыток; задержка перед попыткой
    k (k >= 1) равна base_delay * 2 ** (k - 1). Исключения вне retry_on
    пробрасываются сразу, последнее из retry_on - после исчерпания попыток.

    Args:
        operation: Фабрика корутины (вызывается на каждой попытке)
        max_retries: Количество повторов после первой попытки
        base_delay: Базовая задержка в секундах
        retry_on: Типы исключений, при которых делается повтор
        name: Имя операции для логов

    Returns:
        Результат успешной попытки
    """
    attempts = max_retries + 1

    for attempt in range(attempts):
        try:
            return await operation()
        except retry_on as e:
            error_logger.warning(
                f"Attempt {attempt + 1}/{attempts} failed for {name}: {type(e).__name__}: {str(e)}"
            )
            if attempt == attempts - 1:
                raise
            await asyncio.sleep(base_delay * (2 ** attempt))

    raise RuntimeError("unreachable")
