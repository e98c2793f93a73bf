"""Unified image-text vocabulary.

The id space is a stack of contiguous ranges::

    text | image codes | x coords | y coords | visibility | depth bins | parsing

Text is byte-level (ids 0..255 are raw bytes, the rest of the text range is
reserved). Every other range holds atomic special tokens whose surface form
is ``<...>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import ConfigError, RangeError, TokenClassError

BYTE_SIZE = 256
MANIFEST_VERSION = "unified-vocab v1"

DEFAULT_PARSING_TOKENS: tuple[str, ...] = (
    "box", "/box", "ref", "/ref", "poly", "/poly", "ins", "/ins",
    "kpt", "/kpt", "person", "/person", "mask", "/mask",
    "FG", "BG", "OTHERS", "depth",
)
VISIBILITY_VALUES: tuple[str, ...] = ("0.0", "1.0")


class TokenClass(str, Enum):
    TEXT = "text"
    IMAGE = "image_codes"
    X = "x_coords"
    Y = "y_coords"
    VISIBILITY = "visibility"
    DEPTH = "depth_bins"
    PARSING = "parsing"


class Axis(str, Enum):
    X = "x"
    Y = "y"


@dataclass(frozen=True)
class VocabConfig:
    text_vocab_size: int = BYTE_SIZE
    image_codebook_size: int = 512
    coords_per_axis: int = 2048
    depth_bins: int = 1000
    parsing_tokens: tuple[str, ...] = DEFAULT_PARSING_TOKENS

    def validate(self) -> None:
        for name in ("text_vocab_size", "image_codebook_size", "coords_per_axis", "depth_bins"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.text_vocab_size < BYTE_SIZE:
            raise ConfigError(
                f"text_vocab_size must hold the {BYTE_SIZE} byte tokens, got {self.text_vocab_size}"
            )
        tags = tuple(self.parsing_tokens)
        if len(set(tags)) != len(tags):
            raise ConfigError("parsing_tokens contains duplicates")
        missing = [t for t in DEFAULT_PARSING_TOKENS if t not in tags]
        if missing:
            raise ConfigError(f"parsing_tokens is missing required tags: {missing}")


@dataclass(frozen=True)
class VocabRange:
    name: TokenClass
    base: int
    size: int

    @property
    def stop(self) -> int:
        return self.base + self.size

    def __contains__(self, token_id: int) -> bool:
        return self.base <= token_id < self.stop


_SPECIAL_RE = re.compile(r"<(x|y)_(\d+)>|<v_([01]\.0)>|<custom_(\d+)>|<img_(\d+)>|<(/?[A-Za-z]+)>")


@dataclass(frozen=True)
class UnifiedVocab:
    config: VocabConfig
    layout: tuple[VocabRange, ...]
    _parsing_index: dict = field(repr=False, compare=False, hash=False)

    @property
    def total_size(self) -> int:
        return self.layout[-1].stop

    def __len__(self) -> int:
        return self.total_size

    def range(self, cls: TokenClass) -> VocabRange:
        for r in self.layout:
            if r.name == cls:
                return r
        raise KeyError(cls)  # pragma: no cover - layout always has every class

    @property
    def image_range(self) -> VocabRange:
        return self.range(TokenClass.IMAGE)

    @property
    def depth_range(self) -> VocabRange:
        return self.range(TokenClass.DEPTH)

    def token_class(self, token_id: int) -> TokenClass:
        if not 0 <= token_id < self.total_size:
            raise RangeError(f"token id {token_id} outside [0, {self.total_size})")
        for r in self.layout:
            if token_id < r.stop:
                return r.name
        raise AssertionError("unreachable")  # pragma: no cover

    # ---- coordinates -------------------------------------------------
    def coord_token(self, axis: Axis | str, value: int) -> int:
        axis = Axis(axis.lower() if isinstance(axis, str) else axis)
        n = self.config.coords_per_axis
        if not 0 <= value < n:
            raise RangeError(f"{axis.value} coordinate {value} outside [0, {n})")
        r = self.range(TokenClass.X if axis is Axis.X else TokenClass.Y)
        return r.base + int(value)

    def coord_value(self, token_id: int) -> tuple[Axis, int]:
        cls = self.token_class(token_id)
        if cls is TokenClass.X:
            return Axis.X, token_id - self.range(cls).base
        if cls is TokenClass.Y:
            return Axis.Y, token_id - self.range(cls).base
        raise TokenClassError(f"token {token_id} is {cls.value}, not a coordinate")

    def clamp_coord(self, value: int) -> int:
        return min(max(int(value), 0), self.config.coords_per_axis - 1)

    # ---- visibility, depth bins, image codes, parsing tags -----------
    def visibility_token(self, value: float) -> int:
        key = f"{float(value):.1f}"
        if key not in VISIBILITY_VALUES:
            raise RangeError(f"visibility must be 0.0 or 1.0, got {value!r}")
        return self.range(TokenClass.VISIBILITY).base + VISIBILITY_VALUES.index(key)

    def visibility_value(self, token_id: int) -> float:
        if self.token_class(token_id) is not TokenClass.VISIBILITY:
            raise TokenClassError(f"token {token_id} is not a visibility token")
        return float(VISIBILITY_VALUES[token_id - self.range(TokenClass.VISIBILITY).base])

    def depth_token(self, label: int) -> int:
        """Id of ``<custom_label>``; labels are 1-based."""
        if not 1 <= label <= self.config.depth_bins:
            raise RangeError(f"depth label {label} outside [1, {self.config.depth_bins}]")
        return self.depth_range.base + label - 1

    def depth_label(self, token_id: int) -> int:
        if self.token_class(token_id) is not TokenClass.DEPTH:
            raise TokenClassError(f"token {token_id} is not a depth-bin token")
        return token_id - self.depth_range.base + 1

    def image_token(self, code: int) -> int:
        if not 0 <= code < self.config.image_codebook_size:
            raise RangeError(f"image code {code} outside [0, {self.config.image_codebook_size})")
        return self.image_range.base + int(code)

    def image_code(self, token_id: int) -> int:
        if self.token_class(token_id) is not TokenClass.IMAGE:
            raise TokenClassError(f"token {token_id} is not an image code")
        return token_id - self.image_range.base

    def tag(self, name: str) -> int:
        """Id of parsing tag ``name`` (written without angle brackets)."""
        try:
            return self._parsing_index[name.strip("<>")]
        except KeyError:
            raise TokenClassError(f"unknown parsing tag {name!r}") from None

    def tag_name(self, token_id: int) -> str:
        if self.token_class(token_id) is not TokenClass.PARSING:
            raise TokenClassError(f"token {token_id} is not a parsing tag")
        return self.config.parsing_tokens[token_id - self.range(TokenClass.PARSING).base]

    # ---- text --------------------------------------------------------
    def encode_text(self, s: str | bytes) -> list[int]:
        """Byte-level encoding; parsing tags inside ``s`` are NOT recognised."""
        data = s.encode("utf-8", "surrogateescape") if isinstance(s, str) else bytes(s)
        return list(data)

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        out = bytearray()
        for i in ids:
            cls = self.token_class(i)
            if cls is TokenClass.TEXT:
                if i >= BYTE_SIZE:
                    raise TokenClassError(f"text id {i} is reserved and has no byte value")
                out.append(i)
            elif cls is TokenClass.PARSING:
                out += f"<{self.tag_name(i)}>".encode()
            else:
                raise TokenClassError(f"token {i} is {cls.value}; only text and parsing ids decode to text")
        return bytes(out)

    def decode_text(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", "surrogateescape")

    def category_token_ids(self, name: str) -> list[int]:
        """Token ids of a category name, in encoder order (multiplicity kept)."""
        if not name:
            raise ValueError("category name must be non-empty")
        return self.encode_text(name)

    # ---- surface strings --------------------------------------------
    def token_str(self, token_id: int) -> str:
        cls = self.token_class(token_id)
        base = self.range(cls).base
        if cls is TokenClass.TEXT:
            return chr(token_id) if token_id < BYTE_SIZE else f"<text_{token_id}>"
        if cls is TokenClass.IMAGE:
            return f"<img_{token_id - base}>"
        if cls is TokenClass.X:
            return f"<x_{token_id - base}>"
        if cls is TokenClass.Y:
            return f"<y_{token_id - base}>"
        if cls is TokenClass.VISIBILITY:
            return f"<v_{VISIBILITY_VALUES[token_id - base]}>"
        if cls is TokenClass.DEPTH:
            return f"<custom_{token_id - base + 1}>"
        return f"<{self.tag_name(token_id)}>"

    def render(self, ids: Iterable[int]) -> str:
        """Surface string of a mixed id sequence (bytes decoded as UTF-8)."""
        parts: list[str] = []
        pending = bytearray()
        for i in ids:
            if self.token_class(i) is TokenClass.TEXT and i < BYTE_SIZE:
                pending.append(i)
                continue
            if pending:
                parts.append(pending.decode("utf-8", "surrogateescape"))
                pending.clear()
            parts.append(self.token_str(i))
        if pending:
            parts.append(pending.decode("utf-8", "surrogateescape"))
        return "".join(parts)

    def tokenize(self, text: str) -> list[int]:
        """Inverse of :meth:`render`: special tokens become atomic ids.

        A ``<...>`` span that is not a known special token is kept as bytes.
        Literal backslash-escaped underscores (``<x\\_12>``) are accepted.
        """
        text = text.replace("\\_", "_")
        ids: list[int] = []
        pos = 0
        for m in _SPECIAL_RE.finditer(text):
            tid = self._special_id(m)
            if tid is None:
                continue
            ids += self.encode_text(text[pos:m.start()])
            ids.append(tid)
            pos = m.end()
        ids += self.encode_text(text[pos:])
        return ids

    def _special_id(self, m: re.Match) -> int | None:
        axis, coord, vis, custom, img, tag = m.groups()
        try:
            if axis is not None:
                return self.coord_token(axis, int(coord))
            if vis is not None:
                return self.visibility_token(float(vis))
            if custom is not None:
                return self.depth_token(int(custom))
            if img is not None:
                return self.image_token(int(img))
            if tag in self._parsing_index:
                return self._parsing_index[tag]
        except RangeError:
            return None
        return None

    # ---- manifest ----------------------------------------------------
    def manifest(self) -> str:
        lines = [MANIFEST_VERSION]
        lines += [f"{r.name.value} {r.base} {r.size}" for r in self.layout]
        lines.append("parsing_tokens " + " ".join(self.config.parsing_tokens))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "UnifiedVocab":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != MANIFEST_VERSION:
            raise ConfigError(f"manifest must start with {MANIFEST_VERSION!r}")
        sizes: dict[str, int] = {}
        tags: tuple[str, ...] = DEFAULT_PARSING_TOKENS
        for ln in lines[1:]:
            head, *rest = ln.split()
            if head == "parsing_tokens":
                tags = tuple(rest)
                continue
            if len(rest) != 2:
                raise ConfigError(f"bad manifest line {ln!r}")
            sizes[head] = int(rest[1])
        try:
            config = VocabConfig(
                text_vocab_size=sizes["text"],
                image_codebook_size=sizes["image_codes"],
                coords_per_axis=sizes["x_coords"],
                depth_bins=sizes["depth_bins"],
                parsing_tokens=tags,
            )
        except KeyError as exc:
            raise ConfigError(f"manifest lacks range {exc}") from None
        vocab = build_vocab(config)
        if vocab.manifest().splitlines()[1:] != [ln.strip() for ln in lines[1:]]:
            raise ConfigError("manifest layout does not match the layout rebuilt from its sizes")
        return vocab


def build_vocab(config: VocabConfig | None = None) -> UnifiedVocab:
    config = config or VocabConfig()
    config.validate()
    sizes: Sequence[tuple[TokenClass, int]] = (
        (TokenClass.TEXT, config.text_vocab_size),
        (TokenClass.IMAGE, config.image_codebook_size),
        (TokenClass.X, config.coords_per_axis),
        (TokenClass.Y, config.coords_per_axis),
        (TokenClass.VISIBILITY, len(VISIBILITY_VALUES)),
        (TokenClass.DEPTH, config.depth_bins),
        (TokenClass.PARSING, len(config.parsing_tokens)),
    )
    layout = []
    base = 0
    for name, size in sizes:
        layout.append(VocabRange(name, base, size))
        base += size
    parsing_base = layout[-1].base
    index = {tag: parsing_base + i for i, tag in enumerate(config.parsing_tokens)}
    return UnifiedVocab(config=config, layout=tuple(layout), _parsing_index=index)
