"""RL-side math: task and auxiliary rewards, rollout admission, clipped objective."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError
from .grammar import BoundingBox, Detection, InstanceOutline, Polygon
from .metrics import ScoredBox, _average_precision, box_iou, ciou, map_coco, miou, polygon_iou

Judge = Callable[[str, str], float]


@dataclass
class RewardConfig:
    grounding_raw_iou: bool = False  # reward = IoU below 0.5 instead of IoU / 0.5
    small_count: int = 10
    num_classes: int | None = None
    ignore_label: int | None = 255
    raster: tuple[int, int] | None = None  # (H, W) for polygon rewards
    judge: Judge | None = None  # external LLM judge for open-ended answers


# ---------------------------------------------------------------------------
# task rewards
# ---------------------------------------------------------------------------


def grounding_reward(pred: BoundingBox, gt: BoundingBox, raw_iou: bool = False) -> float:
    iou = box_iou(pred, gt)
    if iou >= 0.5:
        return 1.0
    return iou if raw_iou else iou / 0.5


_COUNT_RE = re.compile(r"The answer is\s*(-?\d+)")


def parse_count(text: str) -> int:
    """Integer after the final "The answer is" of a detect-then-count answer."""
    found = _COUNT_RE.findall(text)
    if not found:
        raise ContractError("no 'The answer is N' suffix found")
    return int(found[-1])


def counting_reward(pred: int, gt: int, small: int = 10) -> float:
    if gt <= small:
        return 1.0 if pred == gt else 0.0
    return max(0.0, 1.0 - abs(pred - gt) / gt)


def detection_reward(pred: Sequence[Detection], gt: Sequence[Detection]) -> float:
    """COCO mAP@[.50:.95] for one image; text outputs carry no scores, so area is the score."""
    scored = [ScoredBox(d.category, b, float(b.area)) for d in pred for b in d.boxes]
    gts = [(d.category, b) for d in gt for b in d.boxes]
    return map_coco([scored], [gts])


def polygon_ap50(pred: Sequence, gt: Sequence, raster: tuple[int, int]) -> float:
    """AP at IoU 0.5 for instance polygons, area-ranked."""
    pred = sorted(pred, key=lambda p: -_poly_area(p))
    used = [False] * len(gt)
    tp = np.zeros(len(pred))
    for r, p in enumerate(pred):
        ious = [(-1.0 if used[j] else polygon_iou(p, g, raster)) for j, g in enumerate(gt)]
        if ious and max(ious) >= 0.5:
            j = int(np.argmax(ious))
            used[j] = True
            tp[r] = 1.0
    return _average_precision(tp, len(gt))


def _poly_area(p) -> float:
    pts = np.asarray(getattr(p, "points", p), dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_distance_reward(pred: str, gt: str) -> float:
    longest = max(len(pred), len(gt))
    return 1.0 if longest == 0 else 1.0 - levenshtein(pred, gt) / longest


def task_reward(task: str, pred, gt, cfg: RewardConfig | None = None) -> float:
    """Reward in [0, 1] for one prediction.

    Tasks: grounding, detection, counting, seg_semantic, seg_referring,
    seg_instance, spotting, parsing, vqa (needs ``cfg.judge``).
    """
    cfg = cfg or RewardConfig()
    try:
        if task == "grounding":
            _require(pred, gt, BoundingBox)
            return grounding_reward(pred, gt, cfg.grounding_raw_iou)
        if task == "detection":
            return detection_reward(_dets(pred), _dets(gt))
        if task == "counting":
            p = parse_count(pred) if isinstance(pred, str) else pred
            g = parse_count(gt) if isinstance(gt, str) else gt
            _require(p, g, (int, np.integer))
            return counting_reward(int(p), int(g), cfg.small_count)
        if task == "seg_semantic":
            p, g = np.asarray(pred), np.asarray(gt)
            n = cfg.num_classes or int(max(p.max(), g[g != cfg.ignore_label].max(initial=0))) + 1
            return miou(p, g, n, cfg.ignore_label)
        if task == "seg_referring":
            if isinstance(pred, (Polygon, InstanceOutline)):
                if cfg.raster is None:
                    raise ContractError("polygon rewards need cfg.raster")
                return polygon_iou(_poly(pred), _poly(gt), cfg.raster)
            return ciou([(pred, gt)])
        if task == "seg_instance":
            if cfg.raster is None:
                raise ContractError("polygon rewards need cfg.raster")
            return polygon_ap50([_poly(p) for p in pred], [_poly(g) for g in gt], cfg.raster)
        if task == "spotting":
            _require(pred, gt, str)
            return 1.0 if pred == gt else 0.0
        if task == "parsing":
            _require(pred, gt, str)
            return edit_distance_reward(pred, gt)
        if task == "vqa":
            if cfg.judge is None:
                raise ContractError("vqa rewards need an external judge (cfg.judge)")
            return float(cfg.judge(pred, gt))
    except (TypeError, AttributeError, ShapeError) as exc:
        raise ContractError(f"{task} payload mismatch: {exc}") from None
    raise ContractError(f"unknown task {task!r}")


def _require(pred, gt, types) -> None:
    if not isinstance(pred, types) or not isinstance(gt, types):
        raise ContractError(f"expected {types}, got {type(pred).__name__} / {type(gt).__name__}")


def _dets(value) -> list[Detection]:
    if isinstance(value, Detection):
        return [value]
    if not all(isinstance(d, Detection) for d in value):
        raise ContractError("detection payloads must be Detection lists")
    return list(value)


def _poly(value) -> Polygon:
    if isinstance(value, InstanceOutline):
        if len(value.parts) != 1:
            raise ContractError("multi-part outlines are scored per part; pass a Polygon")
        return value.parts[0]
    if isinstance(value, Polygon):
        return value
    raise ContractError(f"expected a polygon, got {type(value).__name__}")


# ---------------------------------------------------------------------------
# auxiliary rewards
# ---------------------------------------------------------------------------


def _units(text: str) -> list[str]:
    words = re.findall(r"\w+", text)
    return words if len(words) >= 5 else list(text)


def repetition_reward(text: str, orders: Sequence[int] = (2, 3, 4)) -> float:
    """1 minus the largest share of n-grams whose type occurs more than once.

    Words are the unit when the text has at least five of them, characters
    otherwise.
    """
    units = _units(text)
    worst = 0.0
    for n in orders:
        grams = [tuple(units[i:i + n]) for i in range(len(units) - n + 1)]
        if not grams:
            continue
        counts: dict = {}
        for g in grams:
            counts[g] = counts.get(g, 0) + 1
        repeated = sum(c for c in counts.values() if c > 1)
        worst = max(worst, repeated / len(grams))
    return 1.0 - worst


_SCRIPTS = ("LATIN", "CJK", "HIRAGANA", "KATAKANA", "HANGUL", "CYRILLIC", "ARABIC", "GREEK", "HEBREW",
            "DEVANAGARI", "THAI")


def script_of(ch: str) -> str:
    name = unicodedata.name(ch, "")
    for s in _SCRIPTS:
        if name.startswith(s):
            return s
    return "OTHER"


def language_consistency(text: str, target: str = "LATIN") -> float:
    """Share of letter characters written in the ``target`` script (1.0 if no letters)."""
    letters = [c for c in text if unicodedata.category(c).startswith("L")]
    if not letters:
        return 1.0
    target = target.upper()
    return sum(script_of(c) == target for c in letters) / len(letters)


def aux_rewards(text: str, target_script: str = "LATIN") -> dict[str, float]:
    return {
        "repetition_penalty": repetition_reward(text),
        "language_consistency": language_consistency(text, target_script),
    }


# ---------------------------------------------------------------------------
# rollout groups
# ---------------------------------------------------------------------------


@dataclass
class RolloutGroup:
    """G responses to one prompt; ``ratios[i]``/``advantages[i]`` are per token of response i."""

    rewards: np.ndarray
    ratios: list[np.ndarray] = field(default_factory=list)
    advantages: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.ratios = [np.asarray(r, dtype=np.float64) for r in self.ratios]
        self.advantages = [np.asarray(a, dtype=np.float64) for a in self.advantages]
        if self.rewards.size < 1:
            raise ShapeError("a rollout group needs at least one response")

    @property
    def lengths(self) -> list[int]:
        return [len(r) for r in self.ratios]


@dataclass(frozen=True)
class FilterConfig:
    tau_v: float = 0.0
    tau_k: float = float("inf")
    eps_low: float = 0.20
    eps_high: float = 0.24


def kl_metric(ratios) -> float:
    """Per-token mean of r - 1 - ln r (the k3 estimator); 0 for an empty set."""
    if isinstance(ratios, np.ndarray):
        r = ratios.astype(np.float64).ravel()
    else:
        parts = [np.asarray(x, dtype=np.float64).ravel() for x in ratios]
        r = np.concatenate(parts) if parts else np.empty(0)
    if r.size == 0:
        return 0.0
    if np.any(~(r > 0)):
        raise DomainError("probability ratios must be positive")
    return float(np.mean(r - 1.0 - np.log(r)))


def admit(group: RolloutGroup, cfg: FilterConfig) -> bool:
    return bool(
        group.rewards.max() > 0
        and kl_metric(group.ratios) <= cfg.tau_k
        and np.var(group.rewards) > cfg.tau_v
    )


def filter_rollout_groups(groups: Sequence[RolloutGroup], cfg: FilterConfig) -> list[RolloutGroup]:
    """Groups with a positive best reward, bounded drift and reward variance above tau_v."""
    return [g for g in groups if admit(g, cfg)]


def dapo_objective(group: RolloutGroup, cfg: FilterConfig | None = None) -> float:
    """Token-level clipped surrogate, normalized by the group's total token count."""
    cfg = cfg or FilterConfig()
    if len(group.ratios) != len(group.advantages):
        raise ShapeError("ratios and advantages must cover the same responses")
    total, tokens = 0.0, 0
    for r, a in zip(group.ratios, group.advantages):
        if r.shape != a.shape:
            raise ShapeError(f"ratio shape {r.shape} != advantage shape {a.shape}")
        clipped = np.clip(r, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high)
        total += float(np.minimum(r * a, clipped * a).sum())
        tokens += r.size
    return total / tokens if tokens else 0.0
