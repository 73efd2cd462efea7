"""Minimal PLY reader/writer for point clouds (vertex x, y, z only).

Supports ``ascii 1.0`` and ``binary_little_endian 1.0``. Other elements and
properties are skipped; faces may appear before or after the vertices.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_TYPES = {
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
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class _Property:
    name: str
    dtype: str
    count_dtype: str | None = None  # set for list properties


@dataclass
class _Element:
    name: str
    count: int
    props: list


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    end = data.find(b"end_header")
    if end < 0:
        raise PlyError("header has no end_header line", len(data))
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        here = offset
        offset += len(raw) + 1
        if not words or words[0] in ("ply", "comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) != 3:
                raise PlyError(f"malformed format line {line!r}", here)
            if words[1] not in ("ascii", "binary_little_endian") or words[2] != "1.0":
                raise PlyError(f"unsupported format {words[1]} {words[2]}", here)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"malformed element line {line!r}", here)
            elements.append(_Element(words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyError("property before any element", here)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _TYPES or words[3] not in _TYPES:
                    raise PlyError(f"unknown property type in {line!r}", here)
                elements[-1].props.append(_Property(words[4], _TYPES[words[3]], _TYPES[words[2]]))
            elif len(words) == 3 and words[1] in _TYPES:
                elements[-1].props.append(_Property(words[2], _TYPES[words[1]]))
            else:
                raise PlyError(f"malformed property line {line!r}", here)
        else:
            raise PlyError(f"unexpected header keyword {words[0]!r}", here)
    if fmt is None:
        raise PlyError("header has no format line", 0)
    vertex = [e for e in elements if e.name == "vertex"]
    if not vertex:
        raise PlyError("no vertex element", 0)
    names = [p.name for p in vertex[0].props]
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}", 0)
    return fmt, elements, body_start


def _read_ascii(data: bytes, elements, pos: int) -> np.ndarray:
    lines = data[pos:].split(b"\n")
    offsets = np.cumsum([0] + [len(l) + 1 for l in lines]) + pos
    li = 0
    for el in elements:
        rows = []
        for _ in range(el.count):
            while li < len(lines) and not lines[li].strip():
                li += 1
            if li >= len(lines):
                raise PlyError(f"truncated payload: element {el.name!r} expects {el.count} rows, "
                               f"found {len(rows)}", int(min(offsets[li], len(data))))
            rows.append(lines[li].split())
            li += 1
        if el.name == "vertex":
            names = [p.name for p in el.props]
            if any(p.count_dtype for p in el.props):
                raise PlyError("list properties on vertices are not supported", pos)
            cols = [names.index(a) for a in "xyz"]
            try:
                return np.array([[float(r[c]) for c in cols] for r in rows], dtype=float).reshape(-1, 3)
            except (ValueError, IndexError):
                raise PlyError("malformed vertex row", pos) from None
    raise PlyError("no vertex element", pos)


def _read_binary(data: bytes, elements, pos: int) -> np.ndarray:
    for el in elements:
        if all(p.count_dtype is None for p in el.props):
            dt = np.dtype([(p.name, "<" + p.dtype) for p in el.props])
            need = dt.itemsize * el.count
            if pos + need > len(data):
                have = (len(data) - pos) // dt.itemsize
                raise PlyError(f"truncated payload: element {el.name!r} expects {el.count} rows, "
                               f"found {have}", pos + have * dt.itemsize)
            if el.name == "vertex":
                arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
                return np.stack([arr[a].astype(float) for a in "xyz"], axis=1)
            pos += need
            continue
        if el.name == "vertex":
            raise PlyError("list properties on vertices are not supported", pos)
        for _ in range(el.count):  # skip a variable-length element row by row
            for p in el.props:
                if p.count_dtype is None:
                    pos += np.dtype(p.dtype).itemsize
                    continue
                csize = np.dtype(p.count_dtype).itemsize
                if pos + csize > len(data):
                    raise PlyError(f"truncated payload in element {el.name!r}", pos)
                cnt = int(np.frombuffer(data, "<" + p.count_dtype, 1, pos)[0])
                pos += csize + cnt * np.dtype(p.dtype).itemsize
            if pos > len(data):
                raise PlyError(f"truncated payload in element {el.name!r}", len(data))
    raise PlyError("no vertex element", pos)


def load_ply(path) -> np.ndarray:
    """Vertex coordinates of a PLY file as an (n, 3) float array."""
    data = Path(path).read_bytes()
    fmt, elements, pos = _parse_header(data)
    if fmt == "ascii":
        return _read_ascii(data, elements, pos)
    return _read_binary(data, elements, pos)


def write_ply(path, points, binary: bool = False, double: bool = False) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tname = "double" if double else "float"
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(pts)}\n"
        f"property {tname} x\nproperty {tname} y\nproperty {tname} z\n"
        "end_header\n"
    ).encode("ascii")
    if binary:
        body = pts.astype("<f8" if double else "<f4").tobytes()
    else:
        body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode("ascii")
    Path(path).write_bytes(header + body)
