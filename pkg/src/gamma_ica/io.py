"""File formats: headerless numeric CSV, binary PGM (P5, 8-bit), JSON documents.

Numeric CSV holds one observation per row. Floats are written with
``repr`` (shortest round-trip decimal), so ``read(write(M)) == M`` exactly.
Every writer goes through a temporary file and ``os.replace``.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputError

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "read_matrix_csv",
    "write_matrix_csv",
    "write_table_csv",
    "read_table_csv",
    "read_pgm",
    "write_pgm",
    "read_json",
    "write_json",
    "file_digest",
    "format_float",
]


def format_float(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600 files; use ordinary permissions
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless numeric CSV into an ``(n_rows, n_cols)`` array.

    Raises
    ------
    InputError
        On unreadable files, ragged rows or non-numeric fields; the message
        names the file and the offending row.
    """
    path = Path(path)
    try:
        # newline="" lets csv handle both LF and CRLF line endings
        with open(path, newline="", encoding="utf-8") as fh:
            raw = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    rows = []
    width = None
    for lineno, fields in enumerate(raw, start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise InputError(f"{path}: row {lineno} has {len(fields)} fields, expected {width}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise InputError(f"{path}: row {lineno} has a non-numeric field ({exc})") from exc
    if not rows:
        raise InputError(f"{path}: no data rows")
    M = np.array(rows, dtype=float)
    if not np.all(np.isfinite(M)):
        bad = int(np.argwhere(~np.isfinite(M))[0][0]) + 1
        raise InputError(f"{path}: data row {bad} has a non-finite value")
    return M


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    buf = _io.StringIO()
    for row in M:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    atomic_write_text(path, buf.getvalue())


def write_table_csv(path, header, rows) -> None:
    """CSV with a header line; floats formatted with :func:`format_float`."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _pgm_tokens(data: bytes, path):
    # header: magic, width, height, maxval separated by whitespace, '#' comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into a ``(height, width)`` uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    tokens, offset = _pgm_tokens(data, path)
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise InputError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise InputError(f"{path}: unsupported PGM maxval {maxval}; only 8-bit (255) images are accepted")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise InputError(f"{path}: expected {width * height} pixels, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.dtype != np.uint8:
        if np.any((img < 0) | (img > 255)):
            raise ValueError("pixel values must lie in [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def write_json(path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
