"""
Config and artifact I/O: strict JSON experiment files, atomic writers and
newline-delimited symbol files.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ConfigError(ValueError):
    """Config could not be parsed or validated; ``field_path`` is dotted."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.error_type = "config"
        self.field_path = field_path


def _reject_duplicates(pairs: List[tuple]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"duplicate key '{key}'", field_path=key)
        out[key] = value
    return out


def _reject_constant(name: str) -> float:
    # JSON parses Infinity/-Infinity/NaN through here; only +Infinity is meaningful.
    if name == "Infinity":
        return float("inf")
    raise ConfigError(f"'{name}' is not a valid number")


class ConfigLoader:
    """Read experiment documents and write result artifacts."""

    @staticmethod
    def parse(text: str) -> Dict[str, Any]:
        try:
            doc = json.loads(text, object_pairs_hook=_reject_duplicates, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("top level must be a JSON object")
        return doc

    @staticmethod
    def load(path: PathLike) -> Dict[str, Any]:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config '{path}': {exc.strerror}") from exc
        doc = ConfigLoader.parse(text)
        logger.info(f"Loaded config {path} ({len(doc)} sections)")
        return doc

    # ═══════════════════════════════════════════════════════════
    # ATOMIC WRITERS
    # ═══════════════════════════════════════════════════════════

    @staticmethod
    def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
        """Write to a temp file in the target directory, then rename over ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.info(f"Wrote {path} ({len(data)} bytes)")
        return path

    @staticmethod
    def atomic_write_text(path: PathLike, text: str) -> Path:
        return ConfigLoader.atomic_write_bytes(path, text.encode("utf-8"))

    @staticmethod
    def write_json(path: PathLike, payload: Any) -> Path:
        text = json.dumps(payload, indent=2, sort_keys=False, allow_nan=True) + "\n"
        return ConfigLoader.atomic_write_text(path, text)

    @staticmethod
    def write_csv(path: PathLike, rows: List[Dict[str, Any]], columns: List[str]) -> Path:
        frame = pd.DataFrame(rows, columns=columns)
        text = frame.to_csv(index=False, float_format="%.9g", lineterminator="\n")
        return ConfigLoader.atomic_write_text(path, text)

    # ═══════════════════════════════════════════════════════════
    # SYMBOL FILES
    # ═══════════════════════════════════════════════════════════

    @staticmethod
    def read_symbols(path: PathLike) -> np.ndarray:
        values = []
        for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise ConfigError(f"line {lineno} is not an integer: {line!r}", field_path=str(path)) from exc
        return np.array(values, dtype=np.intp)

    @staticmethod
    def write_symbols(path: PathLike, symbols: Iterable[int]) -> Path:
        return ConfigLoader.atomic_write_text(path, "".join(f"{int(s)}\n" for s in symbols))
