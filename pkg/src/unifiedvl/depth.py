"""Metric depth <-> discrete bin labels.

Labels run 1..bins; 0 is the ignore label. Binning is ceiling based, so bin
``b`` covers the half-open interval ``(edge[b-1], edge[b]]`` of the (linear
or log) depth axis, and ``d_min`` itself falls into bin 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ConfigError, RangeError, ShapeError

IGNORE_LABEL = 0


@dataclass(frozen=True)
class QuantSpec:
    scheme: str  # "linear" | "log_uniform"
    d_min: float
    d_max: float
    bins: int = 1000
    out_of_range: str = "clamp"  # "clamp" | "ignore"

    def __post_init__(self):
        if self.scheme not in ("linear", "log_uniform"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.out_of_range not in ("clamp", "ignore"):
            raise ConfigError(f"unknown out_of_range mode {self.out_of_range!r}")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        lo_ok = self.d_min >= 0 if self.scheme == "linear" else self.d_min > 0
        if not (lo_ok and self.d_min < self.d_max and math.isfinite(self.d_max)):
            raise ConfigError(f"invalid depth range [{self.d_min}, {self.d_max}] for {self.scheme}")

    def bin_width(self) -> float:
        """Width of one bin: meters (linear) or log-meters (log_uniform)."""
        if self.scheme == "linear":
            return (self.d_max - self.d_min) / self.bins
        return math.log(self.d_max / self.d_min) / self.bins

    def header(self) -> str:
        return f"{self.scheme} {self.d_min:g} {self.d_max:g} {self.bins}"


NYUV2 = QuantSpec("linear", 0.0, 10.0)
CITYSCAPES = QuantSpec("linear", 0.0, 80.0)
DDAD = QuantSpec("linear", 0.05, 120.0)
OPEN_WORLD = QuantSpec("log_uniform", 0.5, 100.0, out_of_range="ignore")
BUILTIN_SPECS = {"nyuv2": NYUV2, "cityscapes": CITYSCAPES, "ddad": DDAD, "open_world": OPEN_WORLD}


def _valid(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


def quantize(depth: np.ndarray, spec: QuantSpec) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    valid = _valid(d)
    safe = np.where(valid, d, spec.d_max)
    if spec.scheme == "linear":
        t = (safe - spec.d_min) * spec.bins / (spec.d_max - spec.d_min)
    else:
        t = np.log(safe / spec.d_min) * spec.bins / math.log(spec.d_max / spec.d_min)
    labels = np.clip(np.ceil(t), 1, spec.bins).astype(np.int64)
    if spec.out_of_range == "ignore":
        valid &= (d >= spec.d_min) & (d <= spec.d_max)
    return np.where(valid, labels, IGNORE_LABEL)


def dequantize(labels: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Bin centers in meters; the ignore label maps to NaN."""
    lab = np.asarray(labels)
    if np.any(lab < 0) or np.any(lab > spec.bins):
        raise RangeError(f"labels must lie in [0, {spec.bins}]")
    centers = (lab.astype(np.float64) - 0.5) / spec.bins
    if spec.scheme == "linear":
        depth = spec.d_min + centers * (spec.d_max - spec.d_min)
    else:
        depth = spec.d_min * np.exp(centers * math.log(spec.d_max / spec.d_min))
    return np.where(lab == IGNORE_LABEL, np.nan, depth)


def focal_rescale_factor(f_source: float, f_target: float = 2000.0) -> float:
    """Image resize factor that renormalizes a camera to ``f_target`` pixels."""
    if f_source <= 0 or f_target <= 0:
        raise ValueError("focal lengths must be positive")
    return f_target / f_source


def format_depth_map(depth: np.ndarray, spec: QuantSpec | None = None) -> str:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth map must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    head = spec.header() + "\n" if spec is not None else ""
    rows = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in depth)
    return f"{head}{h} {w}\n{rows}"


def parse_depth_map(text: str) -> tuple[np.ndarray, QuantSpec | None]:
    lines = text.splitlines()
    spec = None
    if lines and lines[0].split()[:1] and lines[0].split()[0] in ("linear", "log_uniform"):
        parts = lines[0].split()
        try:
            spec = QuantSpec(parts[0], float(parts[1]), float(parts[2]), int(parts[3]),
                             "ignore" if parts[0] == "log_uniform" else "clamp")
        except (IndexError, ValueError):
            raise CodecError("depth header must be 'scheme d_min d_max bins'", 0) from None
        lines = lines[1:]
    try:
        h, w = (int(t) for t in lines[0].split())
    except (IndexError, ValueError):
        raise CodecError("depth map size line must be 'H W'") from None
    body = lines[1:1 + h]
    if len(body) != h:
        raise CodecError(f"expected {h} rows, found {len(body)}")
    out = np.empty((h, w))
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != w:
            raise CodecError(f"row {i} has {len(parts)} values, expected {w}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise CodecError(f"row {i} holds a non-numeric value") from None
    return out, spec
