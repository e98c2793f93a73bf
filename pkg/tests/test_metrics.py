import numpy as np
import pytest
from hypothesis import given, strategies as st

import checks
from oracles import iou_reference
from unifiedvl.errors import MatchError, ShapeError
from unifiedvl.grammar import BoundingBox, Detection, PoseInstance
from unifiedvl.metrics import (COCO_THRESHOLDS, ScoredBox, box_iou, ciou, delta1, map_coco, match_pose_by_center,
                               miou, nms_multiscale, pckh, polygon_iou, rasterize_polygon)

coords = st.integers(0, 12)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coords), draw(coords)))
    y1, y2 = sorted((draw(coords), draw(coords)))
    return BoundingBox(x1, y1, x2, y2)


@given(boxes(), boxes())
def test_box_iou_lattice_oracle(a, b):
    v = box_iou(a, b)
    assert v == pytest.approx(iou_reference(a.as_tuple(), b.as_tuple()), abs=1e-12)
    assert v == box_iou(b, a) and 0 <= v <= 1
    if a.area:
        assert box_iou(a, a) == 1.0


def test_thresholds():
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_hand_checked_map():
    gt = [[("cat", BoundingBox(0, 0, 10, 10))]]
    pred = [[ScoredBox("cat", BoundingBox(0, 0, 6, 10), 1.0)]]
    assert box_iou(gt[0][0][1], pred[0][0].box) == 0.6
    assert map_coco(pred, gt) == 0.3


def test_map_unseen_class_counts_as_zero():
    gt = [[("cat", BoundingBox(0, 0, 10, 10))]]
    pred = [[ScoredBox("cat", BoundingBox(0, 0, 10, 10), 1.0), ScoredBox("dog", BoundingBox(0, 0, 5, 5), 1.0)]]
    assert map_coco(pred, gt) == 0.5
    assert map_coco([[]], [[]]) == 1.0


@pytest.mark.parametrize("name", ["case_nms", "case_map", "case_pose_match", "case_miou", "case_ciou"])
def test_randomized_oracles(name):
    rng = np.random.default_rng(7)
    assert all(getattr(checks, name)(rng) for _ in range(40))


def test_nms_area_confidence():
    big = BoundingBox(0, 0, 10, 10)
    near = BoundingBox(0, 0, 10, 9)
    far = BoundingBox(20, 20, 25, 25)
    out = nms_multiscale([[Detection("a", (near, far))], [Detection("a", (big,))]], 0.7)
    assert out[0].boxes == (big, far)


def test_miou_confusion():
    gt = np.array([[0, 0, 1, 255]])
    pred = np.array([[0, 1, 1, 0]])
    # class 0: inter 1 / union 2; class 1: inter 1 / union 2
    assert miou(pred, gt, 2) == 0.5
    with pytest.raises(ShapeError):
        miou(pred, gt[:, :3], 2)


def test_ciou_accumulates():
    a = (np.array([[1, 1, 0]]), np.array([[1, 0, 0]]))
    b = (np.array([[0, 0]]), np.array([[1, 1]]))
    assert ciou([a, b]) == 1 / 4


def test_rasterize_square():
    m = rasterize_polygon([(1, 1), (4, 1), (4, 3), (1, 3)], (5, 6))
    assert m.sum() == 6 and m[1:3, 1:4].all()
    assert polygon_iou([(0, 0), (4, 0), (4, 4), (0, 4)], [(0, 0), (2, 0), (2, 4), (0, 4)], (5, 5)) == 0.5
    with pytest.raises(ShapeError):
        rasterize_polygon([(0, 0), (1, 1), (2, 2)], (3, 3))


def _pose(offset, vis=1.0):
    return PoseInstance(BoundingBox(0, 0, 100, 100), tuple((10 + offset, 10, vis) for _ in range(16)))


def test_pckh_boundary_inclusive():
    gt = np.zeros((16, 3))
    gt[:, 2] = 1
    pred = gt.copy()
    pred[:, 0] += 3
    pred[:, 1] += 4  # distance exactly 5 = 0.5 * 10
    correct, mean = pckh(pred, gt, head_len=10)
    assert correct.all() and mean == 1.0
    pred[0, 0] += 0.001
    assert pckh(pred, gt, head_len=10)[1] == 15 / 16


def test_pose_matching():
    preds = [_pose(30), _pose(1), _pose(1)]
    assert match_pose_by_center(preds, _pose(0)) is preds[1]
    with pytest.raises(MatchError):
        match_pose_by_center([], _pose(0))


def test_delta1():
    gt = np.array([1.0, 2.0, 4.0, 0.0])
    pred = np.array([1.2, 3.0, 4.0, 9.0])
    assert delta1(pred, gt) == 2 / 3
    assert delta1(np.array([np.nan, 1.0]), np.array([1.0, 1.0])) == 0.5
