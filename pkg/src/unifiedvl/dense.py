"""Dense prediction from vision-token logits.

Semantic maps: mean the logits of each category's token ids, reshape to the
token grid, bilinearly upsample, optionally apply a temperature softmax (or
the sigmoid background scoring) per pixel and take the argmax. Depth: upsample bin
logits x2, argmax over bins, nearest-resize the labels and dequantize.
Argmax ties always resolve to the lowest index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .depth import QuantSpec, dequantize
from .errors import CategoryError, CodecError, ShapeError
from .grammar import BoundingBox, crop_transform, expand_box

LOGITS_MAGIC = b"VLLT"
LOGITS_VERSION = 1


@dataclass
class LogitTensor:
    """Per-position logits; ``vocab_slice[j]`` is the token id of column ``j``.

    Without a slice, column ``j`` is token id ``j`` (full vocabulary).
    """

    values: np.ndarray  # (positions, n)
    vocab_slice: Sequence[int] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"logits must be 2-D (positions, vocab), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("logits hold non-finite values")
        if self.vocab_slice is not None:
            self.vocab_slice = [int(i) for i in self.vocab_slice]
            if len(self.vocab_slice) != self.values.shape[1]:
                raise ShapeError("vocab_slice length does not match logit columns")

    @property
    def positions(self) -> int:
        return self.values.shape[0]

    def columns(self, ids: Sequence[int]) -> np.ndarray:
        if self.vocab_slice is None:
            cols = np.asarray(ids, dtype=np.int64)
            if cols.size and (cols.min() < 0 or cols.max() >= self.values.shape[1]):
                raise CategoryError(f"token ids {list(ids)} outside logit columns")
            return cols
        index = {t: j for j, t in enumerate(self.vocab_slice)}
        try:
            return np.asarray([index[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise CategoryError(f"token id {exc} not in the logit slice") from None

    def to_bytes(self) -> bytes:
        return write_logits(self.values)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LogitTensor":
        arr = read_logits(data)
        return cls(arr.reshape(-1, arr.shape[-1]))


def read_logits(data: bytes) -> np.ndarray:
    """Decode a VLLT blob into an array of its stored shape."""
    if data[:4] != LOGITS_MAGIC:
        raise CodecError("not a logit tensor (bad magic)", 0)
    version, ndims = struct.unpack("<II", data[4:12])
    if version != LOGITS_VERSION:
        raise CodecError(f"unsupported logit tensor version {version}", 4)
    dims = struct.unpack(f"<{ndims}I", data[12:12 + 4 * ndims])
    body = data[12 + 4 * ndims:]
    count = int(np.prod(dims)) if dims else 1
    if len(body) != 4 * count:
        raise CodecError(f"logit body has {len(body)} bytes, expected {4 * count}", 12 + 4 * ndims)
    return np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64)


def write_logits(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    dims = values.shape
    head = LOGITS_MAGIC + struct.pack("<II", LOGITS_VERSION, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return head + values.astype("<f4").tobytes()


@dataclass
class DecodeConfig:
    temperature: float | None = None
    background_mode: bool = False
    background_scale: float = 0.25
    background_score: float = 0.5
    # slot for CRF-style refinement of the upsampled score volume (H, W, C)
    postprocess: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def aggregate_category_logits(z: LogitTensor, categories: Sequence[Sequence[int]]) -> np.ndarray:
    """(positions, C) matrix of per-category mean logits."""
    out = np.empty((z.positions, len(categories)))
    for c, ids in enumerate(categories):
        if len(ids) == 0:
            raise CategoryError(f"category {c} has no token ids")
        out[:, c] = z.values[:, z.columns(ids)].mean(axis=1)
    return out


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def bilinear_resize(grid: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Half-pixel-center bilinear resize of an (h, w) or (h, w, C) array to (H, W)."""
    grid = np.asarray(grid, dtype=np.float64)
    H, W = size
    if H < 1 or W < 1:
        raise ShapeError(f"target size must be positive, got {size}")
    if grid.ndim < 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ShapeError(f"source grid must be non-empty, got {grid.shape}")
    h, w = grid.shape[:2]
    if (h, w) == (H, W):
        return grid.copy()
    r0, r1, fy = _axis_weights(h, H)
    c0, c1, fx = _axis_weights(w, W)
    extra = (None,) * (grid.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = grid[r0][:, c0] * (1 - fx) + grid[r0][:, c1] * fx
    bot = grid[r1][:, c0] * (1 - fx) + grid[r1][:, c1] * fx
    return top * (1 - fy) + bot * fy


def nearest_resize(grid: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Half-pixel-center nearest-neighbour resize (for label maps)."""
    H, W = size
    if H < 1 or W < 1:
        raise ShapeError(f"target size must be positive, got {size}")
    h, w = grid.shape[:2]
    rows = np.minimum(((np.arange(H) + 0.5) * h / H).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(W) + 0.5) * w / W).astype(np.int64), w - 1)
    return grid[np.ix_(rows, cols)]


def _softmax(a: np.ndarray, tau: float) -> np.ndarray:
    a = a / tau
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def _check_grid(z: LogitTensor, grid: tuple[int, int]) -> None:
    h, w = grid
    if h * w != z.positions:
        raise ShapeError(f"grid {h}x{w} does not match {z.positions} logit positions")


def category_scores(z: LogitTensor, categories, cfg: DecodeConfig, grid: tuple[int, int],
                    image: tuple[int, int]) -> np.ndarray:
    """Upsampled (H, W, C) score volume ahead of the argmax."""
    _check_grid(z, grid)
    agg = aggregate_category_logits(z, categories)
    scores = bilinear_resize(agg.reshape(grid[0], grid[1], -1), image)
    # per-pixel transforms after interpolation keep the argmax of the
    # interpolated logits intact
    if cfg.background_mode:
        scores = 1.0 / (1.0 + np.exp(-scores * cfg.background_scale))
    elif cfg.temperature is not None:
        scores = _softmax(scores, cfg.temperature)
    if cfg.postprocess is not None:
        scores = cfg.postprocess(scores)
    return scores


def decode_semseg(z: LogitTensor, categories: Sequence[Sequence[int]], cfg: DecodeConfig | None,
                  grid: tuple[int, int], image: tuple[int, int]) -> np.ndarray:
    """(H, W) map of category indices 0..C-1 (C = background in background mode)."""
    cfg = cfg or DecodeConfig()
    if len(categories) < 1:
        raise CategoryError("need at least one category")
    scores = category_scores(z, categories, cfg, grid, image)
    if cfg.background_mode:
        bg = np.full(scores.shape[:2] + (1,), cfg.background_score)
        scores = np.concatenate([scores, bg], axis=-1)
    return np.argmax(scores, axis=-1)


def decode_semseg_background(z: LogitTensor, categories, cfg: DecodeConfig | None,
                             grid: tuple[int, int], image: tuple[int, int]) -> np.ndarray:
    """Sigmoid decoding with a constant background channel emitted as label C."""
    cfg = cfg or DecodeConfig()
    if not cfg.background_mode:
        cfg = DecodeConfig(None, True, cfg.background_scale, cfg.background_score, cfg.postprocess)
    return decode_semseg(z, categories, cfg, grid, image)


def decode_depth(z: LogitTensor, spec: QuantSpec, grid: tuple[int, int], image: tuple[int, int]) -> np.ndarray:
    """Depth map in meters; column j of ``z`` is bin label j+1.

    No temperature is applied in this mode.
    """
    _check_grid(z, grid)
    if z.values.shape[1] != spec.bins:
        raise ShapeError(f"expected {spec.bins} bin columns, got {z.values.shape[1]}")
    h, w = grid
    up = bilinear_resize(z.values.reshape(h, w, -1), (2 * h, 2 * w))
    labels = np.argmax(up, axis=-1) + 1
    return dequantize(nearest_resize(labels, image), spec)


def decode_binary(fg_bg: np.ndarray, grid: tuple[int, int], size: tuple[int, int]) -> np.ndarray:
    """(H, W) 0/1 mask from (positions, 2) logits ordered [BG, FG]; BG wins ties."""
    fg_bg = np.asarray(fg_bg, dtype=np.float64)
    if fg_bg.shape != (grid[0] * grid[1], 2):
        raise ShapeError(f"expected ({grid[0] * grid[1]}, 2) BG/FG logits, got {fg_bg.shape}")
    up = bilinear_resize(fg_bg.reshape(grid[0], grid[1], 2), size)
    return (up[..., 1] > up[..., 0]).astype(np.int64)


def grounding_then_segment(box: BoundingBox, fg_bg: np.ndarray, grid: tuple[int, int],
                           image_size: tuple[int, int], ratio: float = 1.2,
                           shorter_side: int = 1280) -> np.ndarray:
    """Binary mask on the original image for one grounded box.

    The box is expanded by ``ratio``, cropped and rescaled so its shorter
    side is ``shorter_side``; BG/FG logits over the crop's token grid are
    decoded at crop resolution and pasted back. ``image_size`` is (W, H).
    """
    expanded = expand_box(box, ratio, image_size)
    ct = crop_transform(expanded, shorter_side)
    tw, th = ct.target_size
    crop_mask = decode_binary(fg_bg, grid, (th, tw))
    return ct.paste_back(crop_mask, image_size)
