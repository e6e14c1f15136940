"""Reading samples and configs; writing CSV tables, JSON reports and run manifests."""

from __future__ import annotations

import csv
import json
import math
import re
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dictionary import SampleSet


class DataFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_SPLIT = re.compile(r"[,\s;]+")


def read_sample(path) -> SampleSet:
    """Delimiter-separated numeric rows (comma, tab, semicolon or spaces), optional header."""
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if not rows and width is None:
                    width = len(fields)  # header
                    continue
                raise DataFormatError(f"non-numeric field in {line!r}", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError("non-finite value", lineno)
            if width is None:
                width = len(values)
            if len(values) != width:
                raise DataFormatError(f"expected {width} columns, found {len(values)}", lineno)
            rows.append(values)
    if not rows:
        raise DataFormatError("no observations found")
    return SampleSet(np.array(rows, dtype=float))


def write_sample(sample: SampleSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        for row in sample.points:
            w.writerow([repr(float(v)) for v in row])


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: configuration must be a key-value mapping")
    return cfg


def bundled_config(name: str) -> dict:
    """One of the study configs shipped with the package, e.g. ``fig1_k2``."""
    ref = resources.files("spades") / "configs" / f"{name}.yaml"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    cfg = yaml.safe_load(ref.read_text(encoding="utf-8"))
    return cfg


def bundled_config_names() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("spades") / "configs").iterdir()
                  if p.name.endswith(".yaml"))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
