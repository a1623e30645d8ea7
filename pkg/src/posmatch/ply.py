"""Minimal PLY I/O for point clouds.

Reads ``ascii`` and ``binary_little_endian`` files; only the ``x, y, z``
properties of the ``vertex`` element are kept.  Writes float64 (``double``)
coordinates so binary round trips are exact.
"""
from __future__ import annotations

import os

import numpy as np

from .geometry import as_cloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(f):
    if f.readline().strip() != b"ply":
        raise PlyError("not a PLY file")
    fmt = None
    elements = []  # [name, count, [(prop_name, dtype) or (prop_name, ("list", count_t, item_t))]]
    while True:
        line = f.readline()
        if not line:
            raise PlyError("unterminated PLY header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise PlyError(f"unknown PLY type {tok[1]!r}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _skip_binary_element(f, count, props):
    if all(not isinstance(t, tuple) for _, t in props):
        f.read(count * sum(np.dtype(t).itemsize for _, t in props))
        return
    for _ in range(count):
        for _, t in props:
            if isinstance(t, tuple):
                n = np.frombuffer(f.read(np.dtype(t[1]).itemsize), dtype="<" + t[1])[0]
                f.read(int(n) * np.dtype(t[2]).itemsize)
            else:
                f.read(np.dtype(t).itemsize)


def read_ply(path) -> np.ndarray:
    """Vertex coordinates of a PLY file as an ``(n, 3)`` float64 array."""
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f)
        for name, count, props in elements:
            names = [p for p, _ in props]
            if name != "vertex":
                if fmt == "ascii":
                    for _ in range(count):
                        f.readline()
                else:
                    _skip_binary_element(f, count, props)
                continue
            if not {"x", "y", "z"} <= set(names):
                raise PlyError("vertex element lacks x, y, z")
            if fmt == "ascii":
                if any(isinstance(t, tuple) for _, t in props):
                    raise PlyError("list properties on vertices are not supported")
                rows = [f.readline().split() for _ in range(count)]
                if any(len(r) < len(props) for r in rows):
                    raise PlyError("truncated vertex data")
                data = np.array([[float(v) for v in r[: len(props)]] for r in rows]).reshape(count, len(props))
                cols = [names.index(c) for c in "xyz"]
                return np.ascontiguousarray(data[:, cols], dtype=np.float64)
            if any(isinstance(t, tuple) for _, t in props):
                raise PlyError("list properties on vertices are not supported")
            dt = np.dtype([(p, "<" + t) for p, t in props])
            buf = f.read(dt.itemsize * count)
            if len(buf) != dt.itemsize * count:
                raise PlyError("truncated vertex data")
            rec = np.frombuffer(buf, dtype=dt)
            return np.stack([rec[c].astype(np.float64) for c in "xyz"], axis=1)
    raise PlyError("no vertex element")


def write_ply(path, points, binary: bool = True) -> None:
    pts = as_cloud(points)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(pts.astype("<f8").tobytes())
        else:
            for p in pts:
                f.write(("%r %r %r\n" % (float(p[0]), float(p[1]), float(p[2]))).encode("ascii"))
