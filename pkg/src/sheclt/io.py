"""Binary field dumps and byte-stable CSV output.

Arrays are stored as a one-line JSON header (shape, dtype, metadata)
followed by raw little-endian float64 bytes.  CSV cells are formatted with
17 significant digits so reruns produce byte-identical files on any
platform.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError

CSV_FORMAT = "%.17g"


def save_array(path, array, meta=None) -> None:
    array = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = {"shape": list(array.shape), "dtype": "<f8", "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(array.tobytes())


def load_array(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if header.get("dtype") != "<f8":
        raise ConfigError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    array = np.frombuffer(raw, dtype="<f8").reshape(header["shape"])
    return array, header.get("meta", {})


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FORMAT % float(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
