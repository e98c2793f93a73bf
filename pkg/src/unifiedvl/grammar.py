"""Coordinate-token grammar for boxes, detections, polygons and poses.

Surface forms::

    <box><x_a><y_b><x_c><y_d></box>
    <ref>cup</ref><box>...</box><box>...</box><ref>fork</ref>...
    <ins><poly><x_..><y_..>...</poly><poly>...</poly></ins>
    <person><box>...</box><kpt><x_..><y_..><v_1.0></kpt> x16 </person>

Whitespace byte tokens between structural tokens are ignored by the parser.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ParseError, RangeError, ShapeError, VLError
from .vocab import Axis, TokenClass, UnifiedVocab

MAX_POLY_POINTS = 20
NUM_KEYPOINTS = 16
MPII_JOINTS = (
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis", "thorax",
    "upper_neck", "head_top", "r_wrist", "r_elbow", "r_shoulder", "l_shoulder",
    "l_elbow", "l_wrist",
)
_WHITESPACE = frozenset(b" \t\r\n")


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ShapeError(f"box corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Detection:
    category: str
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        if not self.category:
            raise ShapeError("detection category must be non-empty")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise ShapeError(f"detection {self.category!r} has no boxes")


@dataclass(frozen=True)
class Polygon:
    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pts = tuple((int(x), int(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        if not 3 <= len(pts) <= MAX_POLY_POINTS:
            raise ShapeError(f"polygon needs 3..{MAX_POLY_POINTS} points, got {len(pts)}")


@dataclass(frozen=True)
class InstanceOutline:
    parts: tuple[Polygon, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ShapeError("instance outline needs at least one polygon")


@dataclass(frozen=True)
class PoseInstance:
    box: BoundingBox
    keypoints: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        kps = tuple((int(x), int(y), float(v)) for x, y, v in self.keypoints)
        object.__setattr__(self, "keypoints", kps)
        if len(kps) != NUM_KEYPOINTS:
            raise ShapeError(f"pose needs {NUM_KEYPOINTS} keypoints, got {len(kps)}")
        if any(v not in (0.0, 1.0) for _, _, v in kps):
            raise ShapeError("keypoint visibility must be 0.0 or 1.0")

    def keypoint_array(self) -> np.ndarray:
        return np.asarray(self.keypoints, dtype=np.float64)


Structured = Union[BoundingBox, Sequence[Detection], InstanceOutline, PoseInstance, Sequence[PoseInstance]]
KINDS = ("box", "detections", "poly", "pose")


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


class _Emitter:
    def __init__(self, vocab: UnifiedVocab, strict: bool):
        self.vocab = vocab
        self.strict = strict
        self.out: list[int] = []

    def tag(self, name: str) -> None:
        self.out.append(self.vocab.tag(name))

    def coord(self, axis: Axis, value: int) -> None:
        if not self.strict:
            value = self.vocab.clamp_coord(value)
        self.out.append(self.vocab.coord_token(axis, value))

    def point(self, x: int, y: int) -> None:
        self.coord(Axis.X, x)
        self.coord(Axis.Y, y)

    def box(self, b: BoundingBox) -> None:
        self.tag("box")
        self.point(b.x1, b.y1)
        self.point(b.x2, b.y2)
        self.tag("/box")

    def detections(self, dets: Sequence[Detection]) -> None:
        for det in dets:
            self.tag("ref")
            self.out += self.vocab.encode_text(det.category)
            self.tag("/ref")
            for b in det.boxes:
                self.box(b)

    def outline(self, inst: InstanceOutline) -> None:
        self.tag("ins")
        for poly in inst.parts:
            self.tag("poly")
            for x, y in poly.points:
                self.point(x, y)
            self.tag("/poly")
        self.tag("/ins")

    def pose(self, p: PoseInstance) -> None:
        self.tag("person")
        self.box(p.box)
        for x, y, v in p.keypoints:
            self.tag("kpt")
            self.point(x, y)
            self.out.append(self.vocab.visibility_token(v))
            self.tag("/kpt")
        self.tag("/person")


def emit_structured(value: Structured, vocab: UnifiedVocab, strict: bool = True) -> list[int]:
    """Serialize a structured value to token ids.

    With ``strict=False`` coordinates are clamped into the vocabulary range
    instead of raising :class:`RangeError`.
    """
    em = _Emitter(vocab, strict)
    if isinstance(value, BoundingBox):
        em.box(value)
    elif isinstance(value, InstanceOutline):
        em.outline(value)
    elif isinstance(value, PoseInstance):
        em.pose(value)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, Detection) for v in value):
        em.detections(value)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, PoseInstance) for v in value):
        for p in value:
            em.pose(p)
    else:
        raise TypeError(f"cannot emit {type(value).__name__}")
    return em.out


def kind_of(value: Structured) -> str:
    if isinstance(value, BoundingBox):
        return "box"
    if isinstance(value, InstanceOutline):
        return "poly"
    if isinstance(value, PoseInstance):
        return "pose"
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], PoseInstance):
        return "pose"
    return "detections"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: Sequence[int], vocab: UnifiedVocab):
        self.toks = [int(t) for t in tokens]
        self.vocab = vocab
        self.pos = 0

    def fail(self, rule: str, detail: str = "") -> ParseError:
        return ParseError(rule, self.pos, detail)

    def cls(self, tid: int) -> TokenClass | None:
        try:
            return self.vocab.token_class(tid)
        except RangeError:
            return None

    def skip_ws(self) -> None:
        while (
            self.pos < len(self.toks)
            and self.toks[self.pos] in _WHITESPACE
            and self.cls(self.toks[self.pos]) is TokenClass.TEXT
        ):
            self.pos += 1

    def peek_tag(self) -> str | None:
        self.skip_ws()
        if self.pos >= len(self.toks):
            return None
        tid = self.toks[self.pos]
        if self.cls(tid) is TokenClass.PARSING:
            return self.vocab.tag_name(tid)
        return None

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.toks)

    def expect_tag(self, name: str) -> None:
        self.skip_ws()
        if self.pos >= len(self.toks):
            raise self.fail("unbalanced tags", f"expected <{name}> but input ended")
        tid = self.toks[self.pos]
        c = self.cls(tid)
        if c is TokenClass.PARSING and self.vocab.tag_name(tid) == name:
            self.pos += 1
            return
        if c is TokenClass.PARSING:
            raise self.fail("unbalanced tags", f"expected <{name}>, found <{self.vocab.tag_name(tid)}>")
        if c in (TokenClass.X, TokenClass.Y) and name.startswith("/"):
            raise self.fail("axis order", f"coordinate token where <{name}> was expected")
        raise self.fail("unexpected token", f"expected <{name}>, found id {tid}")

    def coord(self, axis: Axis) -> int:
        self.skip_ws()
        if self.pos >= len(self.toks):
            raise self.fail("unbalanced tags", f"expected {axis.value} coordinate but input ended")
        tid = self.toks[self.pos]
        c = self.cls(tid)
        if c not in (TokenClass.X, TokenClass.Y):
            if c is TokenClass.PARSING and axis is Axis.Y:
                raise self.fail("axis order", "x coordinate without matching y")
            if c is TokenClass.PARSING:
                raise self.fail("unbalanced tags", f"<{self.vocab.tag_name(tid)}> before the {axis.value} coordinate")
            raise self.fail("unexpected token", f"expected {axis.value} coordinate, found id {tid}")
        got, value = self.vocab.coord_value(tid)
        if got is not axis:
            raise self.fail("axis order", f"expected {axis.value} coordinate, found {got.value}")
        self.pos += 1
        return value

    def point(self) -> tuple[int, int]:
        return self.coord(Axis.X), self.coord(Axis.Y)

    def box(self) -> BoundingBox:
        self.expect_tag("box")
        start = self.pos
        x1, y1 = self.point()
        x2, y2 = self.point()
        self.expect_tag("/box")
        if x1 > x2 or y1 > y2:
            raise ParseError("box order", start, f"corners ({x1},{y1},{x2},{y2}) out of order")
        return BoundingBox(x1, y1, x2, y2)

    def detections(self) -> list[Detection]:
        dets: list[Detection] = []
        if self.at_end():
            return dets
        while not self.at_end():
            self.expect_tag("ref")
            start = self.pos
            while self.pos < len(self.toks) and self.cls(self.toks[self.pos]) is TokenClass.TEXT:
                self.pos += 1
            raw = self.toks[start:self.pos]
            if not raw:
                raise self.fail("empty category")
            self.expect_tag("/ref")
            name = self.vocab.decode_text(raw)
            boxes = []
            while self.peek_tag() == "box":
                boxes.append(self.box())
            if not boxes:
                raise self.fail("category without boxes", name)
            dets.append(Detection(name, tuple(boxes)))
        return dets

    def polygon(self) -> Polygon:
        self.expect_tag("poly")
        start = self.pos
        coords: list[tuple[Axis, int]] = []
        while True:
            self.skip_ws()
            if self.pos >= len(self.toks):
                raise self.fail("unbalanced tags", "polygon not closed")
            c = self.cls(self.toks[self.pos])
            if c not in (TokenClass.X, TokenClass.Y):
                break
            coords.append(self.vocab.coord_value(self.toks[self.pos]))
            self.pos += 1
        if len(coords) % 2:
            raise ParseError("odd coordinate count", start, f"{len(coords)} coordinates")
        points = []
        for i in range(0, len(coords), 2):
            (ax, x), (ay, y) = coords[i], coords[i + 1]
            if ax is not Axis.X or ay is not Axis.Y:
                raise ParseError("axis order", start + i, "polygon coordinates must alternate x, y")
            points.append((x, y))
        self.expect_tag("/poly")
        if not 3 <= len(points) <= MAX_POLY_POINTS:
            raise ParseError("polygon size", start, f"{len(points)} points")
        return Polygon(tuple(points))

    def outline(self) -> InstanceOutline:
        self.expect_tag("ins")
        parts = []
        while self.peek_tag() == "poly":
            parts.append(self.polygon())
        if not parts:
            raise self.fail("empty instance")
        self.expect_tag("/ins")
        return InstanceOutline(tuple(parts))

    def pose(self) -> PoseInstance:
        self.expect_tag("person")
        start = self.pos
        box = self.box()
        kps = []
        while self.peek_tag() == "kpt":
            self.pos += 1
            x, y = self.point()
            self.skip_ws()
            if self.pos >= len(self.toks) or self.cls(self.toks[self.pos]) is not TokenClass.VISIBILITY:
                raise self.fail("keypoint visibility", "expected <v_0.0> or <v_1.0>")
            v = self.vocab.visibility_value(self.toks[self.pos])
            self.pos += 1
            self.expect_tag("/kpt")
            kps.append((x, y, v))
        if len(kps) != NUM_KEYPOINTS:
            raise ParseError("keypoint count", start, f"expected {NUM_KEYPOINTS}, found {len(kps)}")
        self.expect_tag("/person")
        return PoseInstance(box, tuple(kps))

    def poses(self) -> list[PoseInstance]:
        out = []
        while not self.at_end():
            out.append(self.pose())
        return out


def parse_structured(tokens: Sequence[int], kind: str, vocab: UnifiedVocab) -> Structured:
    """Parse token ids into a structured value of ``kind``.

    Raises :class:`ParseError` (with ``rule`` and ``offset``) on any malformed
    input; never any other exception type for bad tokens.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    p = _Parser(tokens, vocab)
    try:
        if kind == "box":
            value: Structured = p.box()
        elif kind == "detections":
            value = p.detections()
        elif kind == "poly":
            value = p.outline()
        else:
            value = p.poses()
    except ParseError:
        raise
    except VLError as exc:
        raise p.fail("invalid token", str(exc)) from None
    if not p.at_end():
        raise p.fail("trailing tokens")
    return value


def parse_text(text: str, kind: str, vocab: UnifiedVocab) -> Structured:
    return parse_structured(vocab.tokenize(text), kind, vocab)


def emit_text(value: Structured, vocab: UnifiedVocab, strict: bool = True) -> str:
    return vocab.render(emit_structured(value, vocab, strict))


# ---------------------------------------------------------------------------
# polygon compression
# ---------------------------------------------------------------------------


def _seg_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (n, 2) to segment ab."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(p - a).T)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def _dp_tree(pts: np.ndarray) -> list[tuple[int, int, int, float]]:
    """Full Douglas-Peucker split tree of an open chain.

    Returns (parent_lo, parent_hi, split_index, split_distance) for every
    internal node, in DFS order.
    """
    nodes = []
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _seg_dist(pts[lo + 1:hi], pts[lo], pts[hi])
        k = int(np.argmax(d))
        nodes.append((lo, hi, lo + 1 + k, float(d[k])))
        stack.append((lo + 1 + k, hi))
        stack.append((lo, lo + 1 + k))
    return nodes


def _dp_keep(n: int, nodes, eps: float) -> list[int]:
    by_span = {(lo, hi): (k, d) for lo, hi, k, d in nodes}
    keep = {0, n - 1}
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if (lo, hi) not in by_span:
            continue
        k, d = by_span[(lo, hi)]
        if d > eps:
            keep.add(k)
            stack += [(lo, k), (k, hi)]
    return sorted(keep)


def ring_distance(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Distance of each point to the closed polyline through ``ring``."""
    best = np.full(len(points), np.inf)
    for i in range(len(ring)):
        best = np.minimum(best, _seg_dist(points, ring[i], ring[(i + 1) % len(ring)]))
    return best


def compress_polygon(points: Sequence[tuple[float, float]], max_pts: int = MAX_POLY_POINTS) -> Polygon:
    """Reduce a closed outline to at most ``max_pts`` vertices.

    Douglas-Peucker on the ring (closed by repeating the first vertex), with
    the tolerance chosen as the smallest split distance that meets the
    budget. Outputs with fewer than 3 vertices get the farthest remaining
    vertex added back.
    """
    if len(points) < 3:
        raise ShapeError(f"polygon needs at least 3 points, got {len(points)}")
    if max_pts < 3:
        raise ShapeError("max_pts must be at least 3")
    if len(points) <= max_pts:
        return Polygon(tuple(points))
    pts = np.asarray(points, dtype=np.float64)
    ring = np.vstack([pts, pts[:1]])
    nodes = _dp_tree(ring)
    n = len(ring)
    keep = None
    for eps in [0.0] + sorted({d for *_, d in nodes}):
        cand = _dp_keep(n, nodes, eps)
        if len(cand) - 1 <= max_pts:
            keep = cand[:-1]
            break
    assert keep is not None  # eps = max split distance keeps only the ends
    while len(keep) < 3:
        rest = [i for i in range(len(pts)) if i not in keep]
        d = ring_distance(pts[rest], pts[keep])
        if d.max() > 0:
            pick = rest[int(np.argmax(d))]
        else:
            # collinear: take the interior vertex nearest the middle of the chain
            lo, hi = keep[0], keep[-1]
            mid = (lo + hi) / 2
            pick = min((i for i in rest if lo < i < hi), key=lambda i: (abs(i - mid), i), default=rest[0])
        keep = sorted(keep + [pick])
    return Polygon(tuple(tuple(int(round(v)) for v in pts[i]) for i in keep))


# ---------------------------------------------------------------------------
# crop geometry for grounding-then-segmentation
# ---------------------------------------------------------------------------


def expand_box(box: BoundingBox, ratio: float = 1.2, image_size: tuple[int, int] | None = None) -> BoundingBox:
    """Scale a box about its center by ``ratio`` and clamp to the image.

    ``image_size`` is (width, height); box coordinates live in [0, W] x [0, H].
    """
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    if ratio == 1.0:
        x1, y1, x2, y2 = box.as_tuple()
    else:
        cx, cy = (box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2
        hw, hh = box.width * ratio / 2, box.height * ratio / 2
        # snap away from the box; 1e-9 absorbs representation error
        x1 = math.floor(cx - hw + 1e-9)
        y1 = math.floor(cy - hh + 1e-9)
        x2 = math.ceil(cx + hw - 1e-9)
        y2 = math.ceil(cy + hh - 1e-9)
    if image_size is not None:
        w, h = image_size
        x1, x2 = min(max(x1, 0), w), min(max(x2, 0), w)
        y1, y2 = min(max(y1, 0), h), min(max(y2, 0), h)
    return BoundingBox(x1, y1, x2, y2)


@dataclass(frozen=True)
class CropTransform:
    source_rect: BoundingBox
    scale: float
    target_size: tuple[int, int]  # (width, height)

    def forward(self, x, y):
        """Original-image coordinates to crop coordinates."""
        return (np.asarray(x, dtype=np.float64) - self.source_rect.x1) * self.scale, (
            np.asarray(y, dtype=np.float64) - self.source_rect.y1
        ) * self.scale

    def inverse(self, u, v):
        """Crop coordinates back to original-image coordinates."""
        return np.asarray(u, dtype=np.float64) / self.scale + self.source_rect.x1, (
            np.asarray(v, dtype=np.float64) / self.scale + self.source_rect.y1
        )

    def paste_back(self, crop_mask: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
        """Map a (target_h, target_w) crop-space mask onto the original image.

        Each original pixel inside the source rect takes the crop pixel its
        center lands in; pixels outside the rect are 0.
        """
        tw, th = self.target_size
        if crop_mask.shape != (th, tw):
            raise ShapeError(f"crop mask shape {crop_mask.shape} != {(th, tw)}")
        w, h = image_size
        out = np.zeros((h, w), dtype=crop_mask.dtype)
        r = self.source_rect
        x0, x1 = max(r.x1, 0), min(r.x2, w)
        y0, y1 = max(r.y1, 0), min(r.y2, h)
        if x0 >= x1 or y0 >= y1:
            return out
        u, v = self.forward(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
        cols = np.clip(np.floor(u).astype(np.int64), 0, tw - 1)
        rows = np.clip(np.floor(v).astype(np.int64), 0, th - 1)
        out[y0:y1, x0:x1] = crop_mask[np.ix_(rows, cols)]
        return out


def crop_transform(box: BoundingBox, shorter_side: int = 1280) -> CropTransform:
    if box.width <= 0 or box.height <= 0:
        raise ShapeError(f"cannot crop a zero-area box {box.as_tuple()}")
    scale = shorter_side / min(box.width, box.height)
    target = (max(1, int(round(box.width * scale))), max(1, int(round(box.height * scale))))
    return CropTransform(box, scale, target)


# ---------------------------------------------------------------------------
# line-oriented JSON I/O
# ---------------------------------------------------------------------------


def to_records(value: Structured) -> list[dict]:
    """One JSON-compatible dict per object, for the line-oriented file format."""
    if isinstance(value, BoundingBox):
        return [{"box": list(value.as_tuple())}]
    if isinstance(value, InstanceOutline):
        return [{"points": [[list(p) for p in part.points] for part in value.parts]}]
    if isinstance(value, PoseInstance):
        value = [value]
    recs = []
    for item in value:
        if isinstance(item, Detection):
            for b in item.boxes:
                recs.append({"category": item.category, "box": list(b.as_tuple())})
        else:
            recs.append({"box": list(item.box.as_tuple()), "keypoints": [list(k) for k in item.keypoints]})
    return recs


def from_records(records: Iterable[dict], kind: str) -> Structured:
    records = list(records)
    if kind == "box":
        if len(records) != 1:
            raise ShapeError(f"box kind expects one record, got {len(records)}")
        return BoundingBox(*records[0]["box"])
    if kind == "poly":
        if len(records) != 1:
            raise ShapeError(f"poly kind expects one record, got {len(records)}")
        return InstanceOutline(tuple(Polygon(tuple(map(tuple, part))) for part in records[0]["points"]))
    if kind == "pose":
        return [PoseInstance(BoundingBox(*r["box"]), tuple(map(tuple, r["keypoints"]))) for r in records]
    if kind == "detections":
        # consecutive records of one category form one <ref> block
        dets: list[Detection] = []
        for r in records:
            box = BoundingBox(*r["box"])
            if dets and dets[-1].category == r["category"]:
                dets[-1] = Detection(r["category"], dets[-1].boxes + (box,))
            else:
                dets.append(Detection(r["category"], (box,)))
        return dets
    raise ValueError(f"unknown kind {kind!r}")


def dumps_lines(value: Structured) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in to_records(value))


def loads_lines(text: str, kind: str) -> Structured:
    return from_records((json.loads(ln) for ln in text.splitlines() if ln.strip()), kind)
