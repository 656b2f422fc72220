"""Image files: comma-separated text and 16-bit binary PGM with a JSON sidecar.

CSV row ``i`` holds ``values[i, :]``, i.e. samples at fixed ``x_i`` along y.
An optional first line ``# m=<int> delta=<float>`` is checked on reading.
PGM files store ``round((v - offset) / scale)`` as big-endian 16-bit words;
``offset`` and ``scale`` live in ``<file>.json`` next to the image.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import DataError
from .grid import ImageGrid

_HEADER = re.compile(r"#\s*m\s*=\s*(\d+)\s+delta\s*=\s*([-+0-9.eE]+)")


def read_image(path) -> ImageGrid:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cannot read {path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix in (".csv", ".txt"):
        return _read_csv(path)
    raise DataError(f"unsupported image format {suffix!r} (use .csv or .pgm)")


def write_image(path, image) -> Path:
    path = Path(path)
    grid = image if isinstance(image, ImageGrid) else ImageGrid(image)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, grid)
    elif suffix in (".csv", ".txt"):
        _write_csv(path, grid)
    else:
        raise DataError(f"unsupported image format {suffix!r} (use .csv or .pgm)")
    return path


def _read_csv(path):
    text = path.read_text()
    lines = text.splitlines()
    header = None
    if lines and lines[0].lstrip().startswith("#"):
        header = _HEADER.match(lines[0].strip())
        lines = lines[1:]
    rows = [ln for ln in lines if ln.strip()]
    try:
        values = np.array([[float(v) for v in ln.split(",")] for ln in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    if values.ndim != 2:
        raise DataError(f"{path}: rows have unequal lengths")
    grid = ImageGrid(values)
    if header is not None:
        m = int(header.group(1))
        if m != grid.m:
            raise DataError(f"{path}: header says m={m} but data is {grid.m}x{grid.m}")
    return grid


def _write_csv(path, grid):
    with open(path, "w") as fh:
        fh.write(f"# m={grid.m} delta={grid.delta!r}\n")
        for row in grid.values:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def _sidecar(path):
    return path.with_name(path.name + ".json")


def _read_pgm(path):
    data = path.read_bytes()
    tokens = []
    pos = 0
    # magic, width, height, maxval separated by whitespace, comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise DataError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if raw.size != count:
        raise DataError(f"{path}: truncated pixel data")
    values = raw.reshape(h, w).astype(float)
    side = _sidecar(path)
    if side.is_file():
        meta = json.loads(side.read_text())
        values = meta.get("offset", 0.0) + meta.get("scale", 1.0) * values
    return ImageGrid(values)


def _write_pgm(path, grid):
    v = grid.values
    lo, hi = float(v.min()), float(v.max())
    scale = (hi - lo) / 65535.0 if hi > lo else 1.0
    raw = np.rint((v - lo) / scale).astype(">u2")
    m = grid.m
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m} {m}\n65535\n".encode("ascii"))
        fh.write(raw.tobytes())
    _sidecar(path).write_text(json.dumps({"offset": lo, "scale": scale, "m": m}) + "\n")
