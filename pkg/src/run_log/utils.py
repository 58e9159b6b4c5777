from datetime import datetime, timezone
import json
import logging
import math
import traceback

import numpy as np

# Attributes every LogRecord carries; anything else arrived through ``extra``
_RECORD_ATTRS = frozenset(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def build_payload(record, run_id: str) -> dict:
    """
    Convert a LogRecord into a run log entry.
    Fields passed through ``extra=`` go into ``fields``.
    """
    metadata = {
        "logger_name": record.name,
        "module": record.module,
        "func_name": record.funcName,
        "lineno": record.lineno,
    }

    if record.exc_info:
        metadata["exception"] = "".join(traceback.format_exception(*record.exc_info))

    fields = {k: v for k, v in vars(record).items() if k not in _RECORD_ATTRS}

    payload = {
        "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
        "level": record.levelname,
        "run_id": run_id,
        "message": record.getMessage(),
        "metadata": metadata,
    }
    if fields:
        payload["fields"] = _jsonable(fields)
    return payload


def write_line(stream, payload: dict):
    stream.write(json.dumps(payload) + "\n")
    stream.flush()
