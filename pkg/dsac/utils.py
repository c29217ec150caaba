"""ColorizeFilter adapted from
https://github.com/davidfischer-ch/pytoolbox/blob/master/pytoolbox/logging.py
"""

import json
import logging
import pathlib
import re
from collections import deque
from types import MappingProxyType
from typing import Any, Deque, Dict, List, NamedTuple, Optional, Union

import filelock
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from termcolor import colored

from dsac.exceptions import (
    AuthenticationError,
    ConflictError,
    CorruptStatusListError,
    DataSpaceError,
    IndexOutOfRangeError,
    InvalidTokenError,
    KeyMismatchError,
    NotFoundError,
    ServiceUnavailableError,
    StatusListFullError,
    UnclassifiableRequestError,
    ValidationError,
)

__all__ = (
    "ColorizeFilter",
    "RequestLogEntry",
    "duration_in_seconds",
    "error_detail",
    "get_filelock",
    "install_error_handlers",
    "install_request_log",
    "read_json_snapshot",
    "split_csv",
    "status_for",
    "write_json_snapshot",
)

logger = logging.getLogger(__name__)


class ColorizeFilter(logging.Filter):
    COLOR_BY_LEVEL = MappingProxyType(
        {
            logging.DEBUG: "blue",
            logging.WARNING: "yellow",
            logging.ERROR: "red",
            logging.INFO: "white",
        },
    )

    def filter(self, record: logging.LogRecord) -> bool:
        record.raw_msg = record.msg
        color = self.COLOR_BY_LEVEL.get(record.levelno)
        if color:
            record.msg = colored(record.msg, color)  # type: ignore[arg-type]
        return True


def duration_in_seconds(induration: Optional[str]) -> float:
    """Return the duration in seconds from strings such as '5m' into 300.

    >>> duration_in_seconds('30')
    30.0
    >>> duration_in_seconds('1.5m')
    90.0
    >>> duration_in_seconds('2h')
    7200.0
    >>> duration_in_seconds('')
    Traceback (most recent call last):
        raise ValueError('no string specified')
    ValueError: no string specified
    """
    if induration is None or induration.strip() == "":
        raise ValueError("no string specified")

    units = {
        "s": 1,
        "m": 60,
        "h": 60 * 60,
        "d": 24 * 60 * 60,
    }
    match = re.search(r"^\s*([0-9\.]+)\s*([smhd])?\s*$", induration, re.IGNORECASE)

    if match is None:
        raise ValueError(f"not a duration: {induration!r}")

    amount, unit = match.groups()
    seconds = float(amount)

    if unit:
        seconds = seconds * units[unit.lower()]

    return seconds


def get_filelock(path: Union[pathlib.Path, str], timeout: int = 10) -> filelock.FileLock:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lock_path = str(path.resolve()) + ".lock"
    return filelock.FileLock(lock_path, timeout=timeout)


def read_json_snapshot(path: Optional[pathlib.Path]) -> Optional[Any]:
    if path is None or not path.exists():
        return None
    with get_filelock(path), open(path, encoding="UTF-8") as f:
        return json.load(f)


def write_json_snapshot(path: Optional[pathlib.Path], data: Any) -> None:
    if path is None:
        return
    tmp_path = path.with_name(path.name + ".tmp")
    with get_filelock(path):
        with open(tmp_path, "w", encoding="UTF-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        tmp_path.replace(path)


STATUS_BY_ERROR = MappingProxyType(
    {
        ValidationError: 400,
        UnclassifiableRequestError: 400,
        AuthenticationError: 401,
        InvalidTokenError: 401,
        KeyMismatchError: 400,
        NotFoundError: 404,
        ConflictError: 409,
        IndexOutOfRangeError: 400,
        CorruptStatusListError: 400,
        StatusListFullError: 503,
        ServiceUnavailableError: 503,
    },
)


def status_for(exc: Exception) -> int:
    return next((code for cls, code in STATUS_BY_ERROR.items() if isinstance(exc, cls)), 500)


def install_error_handlers(app: FastAPI) -> None:
    """Map the DataSpaceError hierarchy onto JSON error responses."""

    async def handle_data_space_error(request: Request, exc: Exception) -> JSONResponse:
        status = status_for(exc)
        if status >= 500:
            logger.warning(f"{request.method} {request.url.path}: {exc}")
        return JSONResponse(
            {"error": getattr(exc, "kind", "error"), "detail": str(exc)},
            status_code=status,
        )

    app.add_exception_handler(DataSpaceError, handle_data_space_error)


class RequestLogEntry(NamedTuple):
    method: str
    path: str
    query: str


def install_request_log(app: FastAPI, maxlen: int = 10_000) -> Deque[RequestLogEntry]:
    """Record every request the app receives; used as test instrumentation."""
    request_log: Deque[RequestLogEntry] = deque(maxlen=maxlen)

    @app.middleware("http")
    async def record_request(request: Request, call_next):  # noqa: ANN001, ANN202
        request_log.append(
            RequestLogEntry(request.method, request.url.path, request.url.query),
        )
        return await call_next(request)

    app.state.request_log = request_log
    return request_log


def error_detail(body: Dict[str, Any]) -> str:
    return str(body.get("detail") or body.get("reason") or body.get("error") or body)


def split_csv(value: Optional[str]) -> List[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]
