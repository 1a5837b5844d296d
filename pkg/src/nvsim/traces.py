"""Sampled traces and the CSV/JSON formats used to exchange them.

CSV layout: ``# key=value`` metadata lines, one header row, then samples
written with 12 significant digits and LF line endings. Files are written
atomically (temporary file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FLOAT_FMT = "%.12g"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    if isinstance(value, (list, tuple)):
        return "[" + ";".join(_fmt(v) for v in value) + "]"
    return str(value)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_table(columns: Mapping[str, Sequence], metadata: Mapping | None = None) -> str:
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    lengths = {len(d) for d in data}
    if len(lengths) > 1:
        raise ValueError("all columns must have the same length")
    lines = [f"# {k}={_fmt(v)}" for k, v in (metadata or {}).items()]
    lines.append(",".join(names))
    for row in zip(*data):
        lines.append(",".join(FLOAT_FMT % v for v in row))
    return "\n".join(lines) + "\n"


def write_table(path, columns: Mapping[str, Sequence], metadata: Mapping | None = None) -> Path:
    return atomic_write_text(path, format_table(columns, metadata))


def read_table(path) -> tuple[dict, dict]:
    """Read a CSV written by :func:`write_table`; returns (columns, metadata)."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif header is None:
            header = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header row")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: arr[:, k] for k, name in enumerate(header)}, meta


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass
class SpectrumTrace:
    """Signal sampled on a strictly increasing frequency axis (MHz)."""

    axis: np.ndarray
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)

    header = ("frequency_mhz", "signal")
    signal_range = (0.0, 1.05)     # normalised PL, 1 = off-resonant baseline

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.axis.shape != self.signal.shape:
            raise ValueError("axis and signal must have the same shape")
        if self.axis.size > 1 and np.any(np.diff(self.axis) <= 0):
            raise ValueError("axis must be strictly increasing")
        if not (np.all(np.isfinite(self.axis)) and np.all(np.isfinite(self.signal))):
            raise ValueError("trace contains non-finite values")
        if self.signal_range is not None and self.signal.size:
            lo, hi = self.signal_range
            if self.signal.min() < lo or self.signal.max() > hi:
                raise ValueError(f"signal outside [{lo}, {hi}]")

    def __len__(self):
        return self.axis.size

    def to_csv(self, path=None) -> str:
        text = format_table({self.header[0]: self.axis, self.header[1]: self.signal}, self.metadata)
        if path is not None:
            atomic_write_text(path, text)
        return text

    @classmethod
    def from_csv(cls, path):
        cols, meta = read_table(path)
        a, s = cls.header
        return cls(cols[a], cols[s], meta)


@dataclass
class TimeTrace(SpectrumTrace):
    """Observable sampled on an ascending time grid (microseconds)."""

    observable: str = ""

    header = ("time_us", "value")
    signal_range = None

    def __post_init__(self):
        super().__post_init__()
        if self.observable:
            self.metadata.setdefault("observable", self.observable)

    @property
    def times(self) -> np.ndarray:
        return self.axis

    @property
    def values(self) -> np.ndarray:
        return self.signal
