from abc import ABC, abstractmethod
from datetime import datetime, timezone
import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd

from config import Config
from errors import ConfigError

logger = logging.getLogger(__name__)


class ResultStore(ABC):
    """Abstract base class for run output backends"""

    @abstractmethod
    def save_dataset(self, x_true: np.ndarray | None, y: np.ndarray, name: str = "data") -> Path:
        """Persist a simulated or loaded dataset"""
        pass

    @abstractmethod
    def load_dataset(self, path: str | Path) -> tuple[np.ndarray | None, np.ndarray]:
        """Read (x_true, y); x_true is None when the file has no such column"""
        pass

    @abstractmethod
    def save_chain(self, frame: pd.DataFrame, name: str = "chain") -> Path:
        pass

    @abstractmethod
    def load_chain(self, path: str | Path) -> pd.DataFrame:
        pass

    @abstractmethod
    def save_trace(self, frame: pd.DataFrame, name: str = "trace") -> Path:
        """Persist a particle trace dump (n, k, x, weight, log_weight, ancestor)"""
        pass

    @abstractmethod
    def save_json(self, payload: Dict[str, Any], name: str) -> Path:
        pass


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        # JSON has no infinities
        return str(value)
    return value


class CsvResultStore(ResultStore):
    """CSV files for tables, JSON for manifests and summaries, all under one run directory"""

    def __init__(self, out_dir: str | Path | None = None):
        self.out_dir = Path(out_dir or Config.OUTPUT_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str, suffix: str) -> Path:
        return self.out_dir / f"{name}{suffix}"

    def save_dataset(self, x_true, y, name="data"):
        y = np.asarray(y, dtype=float)
        frame = pd.DataFrame({"n": np.arange(1, y.size + 1)})
        frame["x_true"] = np.asarray(x_true, dtype=float) if x_true is not None else np.nan
        frame["y"] = y
        path = self._path(name, ".csv")
        frame.to_csv(path, index=False)
        logger.info(f"Wrote dataset with {y.size} observations to {path}")
        return path

    def load_dataset(self, path):
        path = Path(path)
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError:
            raise ConfigError(f"Dataset file not found: {path}", field="data.path")
        if "y" not in frame.columns:
            raise ConfigError(f"Dataset {path} has no 'y' column", field="data.path")
        frame = frame.sort_values("n") if "n" in frame.columns else frame
        y = frame["y"].to_numpy(dtype=float)
        if not np.all(np.isfinite(y)):
            raise ConfigError(f"Dataset {path} contains non-finite observations", field="data.path")
        x_true = None
        if "x_true" in frame.columns and frame["x_true"].notna().all():
            x_true = frame["x_true"].to_numpy(dtype=float)
        return x_true, y

    def save_chain(self, frame, name="chain"):
        path = self._path(name, ".csv")
        frame.to_csv(path, index=False)
        logger.info(f"Wrote {len(frame)} chain iterations to {path}")
        return path

    def load_chain(self, path):
        path = Path(path)
        try:
            return pd.read_csv(path)
        except FileNotFoundError:
            raise ConfigError(f"Chain file not found: {path}", field="chain")

    def save_trace(self, frame, name="trace"):
        path = self._path(name, ".csv")
        frame.to_csv(path, index=False)
        logger.info(f"Wrote particle trace ({len(frame)} rows) to {path}")
        return path

    def save_json(self, payload, name):
        path = self._path(name, ".json")
        with open(path, "w") as f:
            json.dump(_to_jsonable(payload), f, indent=2)
        return path

    def save_manifest(self, command: str, config: Dict[str, Any], seed: int, outputs: Dict[str, Any]) -> Path:
        manifest = {
            "command": command,
            "created": datetime.now(timezone.utc).isoformat(),
            "seed": seed,
            "config": config,
            "outputs": {k: str(v) for k, v in outputs.items()},
        }
        return self.save_json(manifest, "manifest")
