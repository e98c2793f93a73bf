import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gen
from oracles import douglas_peucker
from unifiedvl import build_vocab
from unifiedvl.errors import ParseError, RangeError, ShapeError, VLError
from unifiedvl.grammar import (
    BoundingBox, Detection, InstanceOutline, Polygon, compress_polygon, crop_transform, dumps_lines,
    emit_structured, emit_text, expand_box, loads_lines, parse_structured, parse_text, ring_distance,
)

WORKED_BOX = "<box><x_155><y_154><x_221><y_206></box>"


def test_worked_grounding_example(vocab):
    assert parse_text(WORKED_BOX, "box", vocab) == BoundingBox(155, 154, 221, 206)
    assert emit_text(BoundingBox(155, 154, 221, 206), vocab) == WORKED_BOX


def test_escaped_markdown_form(vocab):
    assert parse_text(r"<box><x\_155><y\_154><x\_221><y\_206></box>", "box", vocab).as_tuple() == (155, 154, 221, 206)


def test_multiple_boxes_after_one_ref(vocab):
    text = "<ref>car</ref><box><x_1><y_2><x_3><y_4></box><box><x_5><y_6><x_7><y_8></box><ref>dog</ref>" \
           "<box><x_0><y_0><x_9><y_9></box>"
    dets = parse_text(text, "detections", vocab)
    assert [d.category for d in dets] == ["car", "dog"]
    assert [b.as_tuple() for b in dets[0].boxes] == [(1, 2, 3, 4), (5, 6, 7, 8)]


def test_whitespace_between_structures(vocab):
    text = "<ref>car</ref> <box><x_1><y_2><x_3><y_4></box>\n"
    assert parse_text(text, "detections", vocab)[0].boxes[0].as_tuple() == (1, 2, 3, 4)


@pytest.mark.parametrize("kind", ["box", "detections", "poly", "pose"])
def test_roundtrip_random(vocab, kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    for _ in range(50):
        value = gen.GENERATORS[kind](rng)
        assert parse_structured(emit_structured(value, vocab), kind, vocab) == value
        assert loads_lines(dumps_lines(value), kind) == value


@pytest.mark.parametrize("text,rule", [
    ("<box><x_1><y_2><x_3></box>", "axis order"),
    ("<box><x_1><y_2><x_3><y_4>", "unbalanced tags"),
    ("<box><y_1><x_2><x_3><y_4></box>", "axis order"),
    ("<box><x_5><y_2><x_3><y_4></box>", "box order"),
    ("<box><x_1><y_2><x_3><y_4></box>junk", "trailing tokens"),
])
def test_box_diagnostics(vocab, text, rule):
    with pytest.raises(ParseError) as exc:
        parse_text(text, "box", vocab)
    assert exc.value.rule == rule


def test_polygon_size_diagnostic(vocab):
    with pytest.raises(ParseError) as exc:
        parse_text("<ins><poly><x_1><y_1><x_2><y_2></poly></ins>", "poly", vocab)
    assert exc.value.rule == "polygon size"


def test_keypoint_count_diagnostic(vocab):
    kpt = "<kpt><x_1><y_1><v_1.0></kpt>"
    with pytest.raises(ParseError) as exc:
        parse_text("<person><box><x_0><y_0><x_9><y_9></box>" + kpt * 15 + "</person>", "pose", vocab)
    assert exc.value.rule == "keypoint count"


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 5883), max_size=30), st.sampled_from(["box", "detections", "poly", "pose"]))
def test_parser_never_panics(tokens, kind):
    v = build_vocab()
    try:
        parse_structured(tokens, kind, v)
    except ParseError:
        pass


def test_strict_and_lossy_emission(vocab):
    big = BoundingBox(10, 10, 3000, 20)
    with pytest.raises(RangeError):
        emit_structured(big, vocab)
    clamped = parse_structured(emit_structured(big, vocab, strict=False), "box", vocab)
    assert clamped.as_tuple() == (10, 10, 2047, 20)


def test_value_invariants():
    with pytest.raises(ShapeError):
        BoundingBox(5, 0, 4, 1)
    with pytest.raises(ShapeError):
        Detection("a", ())
    with pytest.raises(ShapeError):
        Polygon(((0, 0), (1, 1)))


def _ring(rng, n):
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(50, 100, n)
    return [(int(400 + r * np.cos(a)), int(400 + r * np.sin(a))) for a, r in zip(ang, rad)]


def _min_eps_dp(pts, budget):
    """Smallest tolerance (by bisection on the textbook algorithm) meeting the budget."""
    ring = pts + [pts[0]]
    lo, hi = 0.0, 2000.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if len(douglas_peucker(ring, mid)) - 1 <= budget:
            hi = mid
        else:
            lo = mid
    return douglas_peucker(ring, hi)[:-1], hi


def test_compress_polygon_matches_textbook_dp():
    rng = np.random.default_rng(3)
    for _ in range(40):
        pts = _ring(rng, int(rng.integers(21, 80)))
        poly = compress_polygon(pts)
        keep, eps = _min_eps_dp(pts, 20)
        if len(keep) < 3:
            continue
        assert [pts[i] for i in keep] == list(poly.points)
        # Hausdorff bound: every dropped vertex lies within eps of the kept ring
        d = ring_distance(np.asarray(pts, float), np.asarray(poly.points, float))
        assert d.max() <= eps + 1e-9


def test_compress_polygon_is_subsequence():
    rng = np.random.default_rng(4)
    for _ in range(30):
        pts = [tuple(p) for p in rng.integers(0, 500, size=(int(rng.integers(3, 60)), 2)).tolist()]
        out = list(compress_polygon(pts).points)
        assert 3 <= len(out) <= 20
        it = iter(pts)
        assert all(any(p == q for q in it) for p in out)


def test_compress_polygon_collinear_repair():
    pts = [(i, 0) for i in range(30)] + [(29, 1)]
    assert len(compress_polygon(pts).points) >= 3


def test_expand_box():
    b = BoundingBox(10, 10, 20, 30)
    assert expand_box(b, 1.0) == b
    e = expand_box(b, 1.2)
    assert e.as_tuple() == (9, 8, 21, 32)
    bigger = expand_box(b, 1.5)
    assert bigger.x1 <= e.x1 and bigger.y1 <= e.y1 and bigger.x2 >= e.x2 and bigger.y2 >= e.y2
    assert expand_box(BoundingBox(0, 0, 10, 10), 1.2, image_size=(10, 10)).as_tuple() == (0, 0, 10, 10)


def test_crop_transform_roundtrip():
    ct = crop_transform(BoundingBox(100, 50, 300, 150), 1280)
    assert ct.target_size == (2560, 1280)
    u, v = ct.forward(np.array([100, 250.5]), np.array([50, 149]))
    x, y = ct.inverse(u, v)
    np.testing.assert_allclose(x, [100, 250.5])
    np.testing.assert_allclose(y, [50, 149])


def test_paste_back_identity():
    ct = crop_transform(BoundingBox(2, 3, 6, 7), 4)
    mask = np.ones((4, 4), dtype=np.int64)
    out = ct.paste_back(mask, (10, 10))
    assert out.sum() == 16 and out[3:7, 2:6].all()


def test_records_group_only_adjacent():
    text = "\n".join(json.dumps(r) for r in [
        {"category": "a", "box": [0, 0, 1, 1]}, {"category": "b", "box": [0, 0, 2, 2]},
        {"category": "a", "box": [0, 0, 3, 3]}])
    assert [d.category for d in loads_lines(text, "detections")] == ["a", "b", "a"]
