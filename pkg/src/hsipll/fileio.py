"""Flat text formats shared by the pipeline: key=value files and ASCII label rasters.

One parser serves both the cube header and the pipeline config. Rasters are
plain ASCII integer grids (one row per line), used for ground truth and for
segmentation caching.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError


def parse_kv_lines(lines, source: str = "<input>") -> dict[str, str]:
    """Parse `key = value` lines, ignoring blanks and `#` comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        if key in out:
            raise DataError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv_file(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_lines(fh, source=path)


def write_kv_file(path: str, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items:
            fh.write(f"{key} = {value}\n")


def read_label_raster(path: str) -> np.ndarray:
    """Read an ASCII integer raster; returns an int array of shape (rows, cols)."""
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    rows: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer token ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: empty raster")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: ragged row ({len(row)} != {width} values)")
    return np.asarray(rows, dtype=np.int64)


def write_label_raster(path: str, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")
