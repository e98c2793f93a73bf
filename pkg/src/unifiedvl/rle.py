"""Run-length codec for dense label maps.

Maps are scanned row-major and written as comma-separated ``value:count``
runs in canonical form (adjacent runs always differ in value), e.g. the
2x2 map ``[[0, 0], [0, 1]]`` encodes to ``"0:3,1:1"``.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import CodecError, ShapeError

_RUN_RE = re.compile(r"(\d+):(\d+)")


def rle_encode(labels: np.ndarray) -> str:
    flat = np.asarray(labels).reshape(-1)
    if flat.size == 0:
        return ""
    if flat.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(flat, 1), 0)):
            raise ShapeError("label maps must hold integers")
        flat = flat.astype(np.int64)
    if np.any(flat < 0):
        raise ShapeError("label maps must be non-negative")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate([[0], change])
    counts = np.diff(np.concatenate([starts, [flat.size]]))
    return ",".join(f"{int(flat[s])}:{int(c)}" for s, c in zip(starts, counts))


def rle_decode(s: str, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`rle_encode`; strict about syntax and canonical form."""
    total = height * width
    if s == "":
        if total:
            raise CodecError(f"empty RLE string for {height}x{width} map", 0)
        return np.zeros((height, width), dtype=np.int64)
    values, counts = [], []
    pos = 0
    for i, chunk in enumerate(s.split(",")):
        m = _RUN_RE.fullmatch(chunk)
        if m is None:
            raise CodecError(f"malformed run {chunk!r}", pos)
        value, count = int(m.group(1)), int(m.group(2))
        if count < 1:
            raise CodecError(f"run count must be >= 1, got {count}", pos + len(m.group(1)) + 1)
        if values and values[-1] == value:
            raise CodecError(f"non-canonical: run {i} repeats value {value}", pos)
        values.append(value)
        counts.append(count)
        pos += len(chunk) + 1
    if sum(counts) != total:
        raise CodecError(f"runs cover {sum(counts)} pixels, map has {total}", len(s))
    return np.repeat(np.asarray(values, dtype=np.int64), counts).reshape(height, width)


def wrap_mask(rle: str) -> str:
    return f"<mask>{rle}</mask>"


def unwrap_mask(text: str) -> str:
    """Extract the RLE payload of the last ``<mask>...</mask>`` in ``text``."""
    start = text.rfind("<mask>")
    if start < 0:
        raise CodecError("no <mask> tag found", 0)
    end = text.find("</mask>", start)
    if end < 0:
        raise CodecError("unterminated <mask> tag", start)
    return text[start + len("<mask>"):end]


def format_label_map(labels: np.ndarray) -> str:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be 2-D, got shape {labels.shape}")
    h, w = labels.shape
    rows = [" ".join(str(int(v)) for v in row) for row in labels]
    return f"{h} {w}\n" + "".join(r + "\n" for r in rows)


def parse_label_map(text: str) -> np.ndarray:
    lines = text.splitlines()
    try:
        h, w = (int(t) for t in lines[0].split())
    except (IndexError, ValueError):
        raise CodecError("label map header must be 'H W'", 0) from None
    body = lines[1:1 + h]
    if len(body) != h:
        raise CodecError(f"expected {h} rows, found {len(body)}", len(lines[0]))
    out = np.zeros((h, w), dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != w:
            raise CodecError(f"row {i} has {len(parts)} values, expected {w}")
        try:
            out[i] = [int(p) for p in parts]
        except ValueError:
            raise CodecError(f"row {i} holds a non-integer value") from None
    if np.any(out < 0):
        raise CodecError("labels must be non-negative")
    return out
