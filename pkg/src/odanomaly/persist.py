"""Structured-text persistence for model parameters.

Format (line oriented, UTF-8):

    odanomaly-model v1
    kind <kind>
    meta <key> <json-value>        # repeatable
    array <name> <rows> <cols>     # followed by <rows> lines of <cols>
    ...                            # space-separated decimals (%.17g)
    end

Floats carry 17 significant digits, which round-trips IEEE doubles
exactly, so a reloaded model is bit-identical to the saved one.
"""

from __future__ import annotations

import json

import numpy as np

from .core import fmt_float
from .errors import DataError

MAGIC = "odanomaly-model v1"


def write_model(stream, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    stream.write(MAGIC + "\n")
    stream.write(f"kind {kind}\n")
    for key, value in meta.items():
        stream.write(f"meta {key} {json.dumps(value, separators=(',', ':'))}\n")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DataError(f"array {name!r} must be 1-D or 2-D, got {arr.ndim}-D")
        stream.write(f"array {name} {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            stream.write(" ".join(fmt_float(v) for v in row) + "\n")
    stream.write("end\n")


def read_model(stream) -> tuple[str, dict, dict[str, np.ndarray]]:
    lines = iter(stream.read().splitlines())
    if next(lines, None) != MAGIC:
        raise DataError(f"not a model file (expected {MAGIC!r} header)")
    kind = None
    meta: dict = {}
    arrays: dict[str, np.ndarray] = {}
    for line in lines:
        if not line.strip():
            continue
        if line == "end":
            break
        tag, _, rest = line.partition(" ")
        if tag == "kind":
            kind = rest.strip()
        elif tag == "meta":
            key, _, raw = rest.partition(" ")
            try:
                meta[key] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"bad meta value for {key!r}: {exc}") from None
        elif tag == "array":
            try:
                name, rows_s, cols_s = rest.split()
                rows, cols = int(rows_s), int(cols_s)
            except ValueError:
                raise DataError(f"bad array declaration {line!r}") from None
            data = np.empty((rows, cols), dtype=np.float64)
            for r in range(rows):
                row_line = next(lines, None)
                if row_line is None:
                    raise DataError(f"array {name!r} truncated at row {r}")
                values = row_line.split()
                if len(values) != cols:
                    raise DataError(
                        f"array {name!r} row {r} has {len(values)} values, expected {cols}"
                    )
                data[r] = [float(v) for v in values]
            arrays[name] = data
        else:
            raise DataError(f"unknown line tag {tag!r} in model file")
    else:
        raise DataError("model file missing 'end' terminator")
    if kind is None:
        raise DataError("model file missing 'kind' line")
    return kind, meta, arrays


def save_model(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_model(fh, kind, meta, arrays)


def load_model(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        return read_model(fh)
