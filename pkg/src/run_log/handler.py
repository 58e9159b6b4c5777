from pathlib import Path
import logging

from .utils import build_payload, write_line


class RunLogHandler(logging.Handler):
    """
    Appends every record as one JSON object per line to the run log file.
    Structured ``extra`` fields (filter step stats, iteration numbers) are kept.
    """

    def __init__(self, path: str | Path, run_id: str = "run"):
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id
        self._stream = open(self.path, "a", encoding="utf-8")

    def emit(self, record):
        try:
            payload = build_payload(record, run_id=self.run_id)
            write_line(self._stream, payload)
        except Exception:
            self.handleError(record)

    def close(self):
        try:
            if not self._stream.closed:
                self._stream.close()
        finally:
            super().close()
