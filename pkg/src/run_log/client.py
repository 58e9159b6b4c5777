from pathlib import Path
import logging

from .handler import RunLogHandler

LOG_FORMAT = "%(levelname)s: %(message)s"


def init(
    path: str | Path | None = None,
    run_id: str = "run",
    level: int | str = logging.INFO,
) -> RunLogHandler | None:
    """Configure console logging and, with ``path``, a JSON-lines run log.

    The run log handler sits on the root logger, so it captures records
    from every module of the package.
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in list(root_logger.handlers):
        if isinstance(handler, RunLogHandler):
            root_logger.removeHandler(handler)
            handler.close()

    if not any(type(h) is logging.StreamHandler for h in root_logger.handlers):
        console = logging.StreamHandler()
        console.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger.addHandler(console)

    if path is None:
        return None
    capture_handler = RunLogHandler(path, run_id=run_id)
    capture_handler.setLevel(level)
    root_logger.addHandler(capture_handler)
    return capture_handler
