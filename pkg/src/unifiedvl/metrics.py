"""Evaluation metrics: box/mask/polygon IoU, NMS, COCO-style mAP, PCKh, delta1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import MatchError, ShapeError
from .grammar import BoundingBox, Detection, PoseInstance

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoredBox:
    category: str
    box: BoundingBox
    score: float


def nms_multiscale(detections_per_scale: Sequence[Sequence[Detection]], iou_thr: float = 0.7) -> list[Detection]:
    """Merge detections from several input scales with greedy per-category NMS.

    Boxes must already be in original-image coordinates. Confidence is the
    box area; equal areas keep their input order (scale order, then box
    order). A box is suppressed when its IoU with a kept box exceeds
    ``iou_thr``.
    """
    by_cat: dict[str, list[BoundingBox]] = {}
    for dets in detections_per_scale:
        for det in dets:
            by_cat.setdefault(det.category, []).extend(det.boxes)
    out = []
    for cat, boxes in by_cat.items():
        order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].area, i))
        kept: list[BoundingBox] = []
        for i in order:
            if all(box_iou(boxes[i], k) <= iou_thr for k in kept):
                kept.append(boxes[i])
        out.append(Detection(cat, tuple(kept)))
    return out


def _average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from a score-ordered TP indicator."""
    if n_gt == 0 or tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def map_coco(preds: Sequence[Sequence[ScoredBox]], gts: Sequence[Sequence[tuple[str, BoundingBox]]],
             thresholds: Iterable[float] = COCO_THRESHOLDS) -> float:
    """Mean over IoU thresholds of the mean per-class AP.

    ``preds[i]``/``gts[i]`` hold image ``i``. Classes are the union of GT and
    predicted categories, so a prediction of a class absent from the GT is a
    pure false positive (that class scores AP 0). Matching is greedy by
    descending score (stable), each prediction taking the unmatched GT with
    the highest IoU >= threshold.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} prediction images vs {len(gts)} GT images")
    thresholds = tuple(thresholds)
    classes = sorted({c for img in gts for c, _ in img} | {p.category for img in preds for p in img})
    if not classes:
        return 1.0
    per_thr = []
    for thr in thresholds:
        aps = []
        for cls in classes:
            n_gt = sum(1 for img in gts for c, _ in img if c == cls)
            scored = [(p.score, img_i, j, p.box) for img_i, img in enumerate(preds)
                      for j, p in enumerate(img) if p.category == cls]
            scored.sort(key=lambda t: (-t[0], t[1], t[2]))
            used = {i: [False] * len(gts[i]) for i in range(len(gts))}
            tp = np.zeros(len(scored))
            for r, (_, img_i, _, box) in enumerate(scored):
                best, best_j = -1.0, -1
                for j, (c, g) in enumerate(gts[img_i]):
                    if c != cls or used[img_i][j]:
                        continue
                    iou = box_iou(box, g)
                    if iou >= thr and iou > best:
                        best, best_j = iou, j
                if best_j >= 0:
                    used[img_i][best_j] = True
                    tp[r] = 1.0
            aps.append(_average_precision(tp, n_gt))
        per_thr.append(float(np.mean(aps)))
    return float(np.mean(per_thr))


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int | None = 255) -> np.ndarray:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    keep = (gt >= 0) & (gt < num_classes)
    if ignore is not None:
        keep &= gt != ignore
    p = np.clip(pred[keep], 0, num_classes)  # out-of-range predictions land in an overflow column
    return np.bincount(gt[keep] * (num_classes + 1) + p, minlength=num_classes * (num_classes + 1)).reshape(
        num_classes, num_classes + 1)


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int | None = 255) -> float:
    """Mean IoU over the classes present in ``gt`` (ignore pixels excluded)."""
    cm = confusion_matrix(pred, gt, num_classes, ignore)
    tp = np.diag(cm[:, :num_classes])
    gt_count = cm.sum(axis=1)
    pred_count = cm[:, :num_classes].sum(axis=0)
    present = gt_count > 0
    if not present.any():
        return 0.0
    iou = tp[present] / (gt_count[present] + pred_count[present] - tp[present])
    return float(iou.mean())


def ciou(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    """Cumulative IoU: total intersection over total union across the dataset."""
    inter = union = 0
    for pred, gt in pairs:
        pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
        inter += int(np.count_nonzero(pred & gt))
        union += int(np.count_nonzero(pred | gt))
    return inter / union if union else 1.0


def rasterize_polygon(points: Sequence[tuple[float, float]], size: tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centers; ``size`` is (H, W)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise ShapeError(f"polygon needs at least 3 points, got {len(pts)}")
    x, y = pts[:, 0], pts[:, 1]
    if abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) == 0:
        raise ShapeError("degenerate polygon (zero area)")
    H, W = size
    mask = np.zeros((H, W), dtype=bool)
    x0, y0, x1, y1 = x, y, np.roll(x, -1), np.roll(y, -1)
    cols = np.arange(W) + 0.5
    for r in range(H):
        yc = r + 0.5
        crosses = ((y0 <= yc) & (y1 > yc)) | ((y1 <= yc) & (y0 > yc))
        if not crosses.any():
            continue
        xs = x0[crosses] + (yc - y0[crosses]) * (x1[crosses] - x0[crosses]) / (y1[crosses] - y0[crosses])
        xs.sort()
        for a, b in zip(xs[0::2], xs[1::2]):
            mask[r] |= (cols > a) & (cols < b)
    return mask


def polygon_iou(a, b, raster: tuple[int, int]) -> float:
    """IoU of two polygons (point lists or Polygon) rasterized on ``raster`` (H, W)."""
    pa = getattr(a, "points", a)
    pb = getattr(b, "points", b)
    ma, mb = rasterize_polygon(pa, raster), rasterize_polygon(pb, raster)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


# ---------------------------------------------------------------------------
# pose
# ---------------------------------------------------------------------------


def _kp(p) -> np.ndarray:
    return p.keypoint_array() if isinstance(p, PoseInstance) else np.asarray(p, dtype=np.float64)


def pckh(pred, gt, head_len: float, t: float = 0.5) -> tuple[np.ndarray, float]:
    """Per-joint correctness (distance <= t * head_len) and mean over visible GT joints."""
    if head_len <= 0:
        raise ValueError("head_len must be positive")
    p, g = _kp(pred), _kp(gt)
    dist = np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1])
    correct = dist <= t * head_len
    visible = g[:, 2] > 0
    mean = float(correct[visible].mean()) if visible.any() else 0.0
    return correct, mean


def keypoint_center(p) -> np.ndarray:
    """Mean of visible keypoints (all keypoints when none is visible)."""
    k = _kp(p)
    vis = k[:, 2] > 0
    return k[vis, :2].mean(axis=0) if vis.any() else k[:, :2].mean(axis=0)


def match_pose_by_center(preds: Sequence, gt) -> PoseInstance:
    """The prediction whose keypoint center is closest to the GT's; first wins ties."""
    if len(preds) == 0:
        raise MatchError("no predicted poses to match")
    c = keypoint_center(gt)
    d = [float(np.hypot(*(keypoint_center(p) - c))) for p in preds]
    return preds[int(np.argmin(d))]


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------


def delta1(pred: np.ndarray, gt: np.ndarray, threshold: float = 1.25) -> float:
    """Fraction of valid GT pixels with max(pred/gt, gt/pred) < threshold.

    Invalid predictions (non-finite or <= 0) at valid GT pixels count as misses.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    valid = np.isfinite(gt) & (gt > 0)
    if not valid.any():
        raise ValueError("ground truth has no valid pixels")
    p, g = pred[valid], gt[valid]
    ok = np.isfinite(p) & (p > 0)
    ratio = np.full(p.shape, np.inf)
    ratio[ok] = np.maximum(p[ok] / g[ok], g[ok] / p[ok])
    return float(np.mean(ratio < threshold))
