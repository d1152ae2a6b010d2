import csv
import json
import logging
import os
from typing import Any, Dict, List, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"
TIME_FORMAT = "{:.12g}"


def _plain(value: Any) -> Any:
    """numpy scalars and arrays to JSON-native values (floats keep their repr)."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class ResultWriter:
    """Sink stage: every file carries the config digest and the tool version.

    CSV tables start with their header row; their provenance goes to a `.meta.json` sidecar.
    """

    def __init__(self, out_dir: str, prefix: str, config_digest: str, formats: Sequence[str] = ("json", "csv")) -> None:
        self.out_dir = out_dir
        self.prefix = prefix
        self.config_digest = config_digest
        self.formats = tuple(formats)
        self._ensure_directory()

    def _ensure_directory(self) -> None:
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except Exception as e:
            logger.error(f"Failed to create output directory {self.out_dir}: {e}")
            raise

    def path_for(self, name: str, extension: str) -> str:
        return os.path.join(self.out_dir, f"{self.prefix}_{name}.{extension}")

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        if "json" not in self.formats:
            logger.debug(f"Skipping {name}.json (json not in output formats).")
            return ""
        return self._dump(self.path_for(name, "json"), payload)

    def _dump(self, path: str, payload: Dict[str, Any]) -> str:
        document = dict(_plain(payload))
        document["config_digest"] = self.config_digest
        document["version"] = TOOL_VERSION
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(document, f, sort_keys=True, indent=2, ensure_ascii=False)
                f.write("\n")
            logger.info(f"Wrote {path}")
            return path
        except Exception as e:
            logger.error(f"Failed to write {path}: {e}")
            raise

    def write_csv(self, name: str, columns: List[str], rows: List[Dict[str, Any]], time_columns: Sequence[str] = ("t",)) -> str:
        if "csv" not in self.formats:
            logger.debug(f"Skipping {name}.csv (csv not in output formats).")
            return ""
        path = self.path_for(name, "csv")
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([self._cell(row[c], c in time_columns) for c in columns])
            logger.info(f"Wrote {path} ({len(rows)} rows)")
        except Exception as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        self._dump(self.path_for(name, "meta.json"), {"table": os.path.basename(path), "columns": list(columns), "rows": len(rows)})
        return path

    @staticmethod
    def _cell(value: Any, is_time: bool) -> str:
        value = _plain(value)
        if is_time:
            return TIME_FORMAT.format(value)
        if isinstance(value, float):
            return repr(value)
        return str(value)
