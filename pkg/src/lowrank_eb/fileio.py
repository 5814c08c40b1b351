"""Output formats: 16-bit PGM images, raw float64 arrays and CSV tables.

Every binary file gets a JSON sidecar (``<file>.json``) describing how to
read it back. Images are stored in grid order (row 0 is the smallest y);
the PGM is flipped so it displays with y pointing up.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "write_json",
    "read_json",
    "write_pgm",
    "read_pgm",
    "write_raw",
    "read_raw",
    "write_csv",
    "format_float",
]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def format_float(v) -> str:
    """Shortest round-trip text for a float; ``NA`` for missing values."""
    if v is None:
        return "NA"
    v = float(v)
    if math.isnan(v):
        return "NA"
    return repr(v)


def write_pgm(path, image: np.ndarray, **meta) -> None:
    """Binary PGM (P5), 16-bit big-endian, min-max scaled.

    The scaling range goes to the sidecar so the values can be recovered to
    within ``(max - min) / 65535``.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if not np.all(np.isfinite(img)):
        raise ValueError("cannot write non-finite values to PGM")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros_like(img) if span == 0 else (img - lo) / span * 65535.0
    data = np.rint(np.flipud(scaled)).astype(">u2")
    ny, nx = img.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    write_json(
        path.with_name(path.name + ".json"),
        {"format": "pgm-p5-16bit-be", "shape": [ny, nx], "min": lo, "max": hi, "flipped_vertically": True, **meta},
    )


def read_pgm(path) -> np.ndarray:
    """Read a PGM written by :func:`write_pgm` back to grid order and values."""
    path = Path(path)
    raw = path.read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise ValueError(f"{path} is not a 16-bit P5 PGM")
    nx, ny = int(parts[1]), int(parts[2])
    data = np.frombuffer(raw[len(raw) - 2 * nx * ny :], dtype=">u2").reshape(ny, nx)
    meta = read_json(path.with_name(path.name + ".json"))
    img = np.flipud(data.astype(float)) / 65535.0
    return meta["min"] + img * (meta["max"] - meta["min"])


def write_raw(path, arr: np.ndarray, **meta) -> None:
    """Raw little-endian float64, row-major, with a JSON header sidecar."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    path = Path(path)
    path.write_bytes(arr.tobytes(order="C"))
    write_json(
        path.with_name(path.name + ".json"),
        {"dtype": "<f8", "order": "C", "shape": list(arr.shape), **meta},
    )


def read_raw(path) -> np.ndarray:
    path = Path(path)
    meta = read_json(path.with_name(path.name + ".json"))
    if meta.get("dtype") != "<f8" or meta.get("order") != "C":
        raise ValueError(f"unsupported raw layout in {path}.json")
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"]).copy()


def write_csv(path, header: list[str], rows, append: bool = False) -> None:
    """RFC 4180 CSV (CRLF line ends); floats in shortest round-trip form."""
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if new:
            w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) or v is None else v for v in row])
