"""
Typed readers for values parsed from JSON input files.

Each reader accepts exactly the JSON types that fit the field and raises
SchemaValidationError otherwise. Ranges are checked by the types that own the
values.
"""

import math
from typing import Any, Callable, List, TypeVar

from models.errors import SchemaValidationError

T = TypeVar("T")


def expect_int(value: Any, where: str) -> int:
    """
    An integer; floats are accepted only when they are whole numbers.

    Examples:
        3 -> 3, 3.0 -> 3, 2.7 / "3" / true -> SchemaValidationError
    """
    if isinstance(value, bool):
        raise SchemaValidationError(f"{where} must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and math.isfinite(value) and value.is_integer():
        return int(value)
    raise SchemaValidationError(f"{where} must be an integer, got {value!r}")


def expect_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaValidationError(f"{where} must be a number, got {value!r}")
    return float(value)


def expect_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaValidationError(f"{where} must be true or false, got {value!r}")
    return value


def expect_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaValidationError(f"{where} must be a string, got {value!r}")
    return value


def expect_list(value: Any, read: Callable[[Any, str], T], where: str) -> List[T]:
    """A JSON list whose entries all pass `read`."""
    if not isinstance(value, list):
        raise SchemaValidationError(f"{where} must be a list, got {value!r}")
    return [read(item, f"{where}[{i}]") for i, item in enumerate(value)]
