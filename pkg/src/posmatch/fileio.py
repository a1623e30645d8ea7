"""Binary matrix files, weight directories and JSON records.

Matrix file layout (little endian)::

    b"LPRD" | u32 version=1 | u32 rank | u64 dims[rank] | f64 payload (row-major)
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LPRD"
VERSION = 1


class FormatError(ValueError):
    pass


def write_matrix(path, array) -> None:
    a = np.array(array, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, a.ndim))
        f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        f.write(a.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12 + 8 * rank
    if len(data) < off:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", data, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) - off != 8 * count:
        raise FormatError(f"{path}: payload is {len(data) - off} bytes, expected {8 * count}")
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(dims).astype(np.float64)


def write_weights(directory, arrays: dict[str, np.ndarray]) -> None:
    """One matrix file per named tensor: ``<directory>/<name>.lprd``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in sorted(arrays.items()):
        write_matrix(d / f"{name}.lprd", arr)


def read_weights(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{directory} is not a weight directory")
    return {p.name[: -len(".lprd")]: read_matrix(p) for p in sorted(d.glob("*.lprd"))}


def write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)
