import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from oracles import rle_reference
from unifiedvl.errors import CodecError
from unifiedvl.rle import format_label_map, parse_label_map, rle_decode, rle_encode, unwrap_mask, wrap_mask


@given(hnp.arrays(np.int64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12), elements=st.integers(0, 5)))
def test_roundtrip_matches_reference(labels):
    s = rle_encode(labels)
    assert s == rle_reference(labels)
    np.testing.assert_array_equal(rle_decode(s, *labels.shape), labels)
    assert len(s.split(",")) <= labels.size


def test_known_string():
    m = np.array([[0, 0, 1], [1, 1, 2]])
    assert rle_encode(m) == "0:2,1:3,2:1"


@pytest.mark.parametrize("s,pos", [
    ("0:2,x:3", 4),
    ("0:0,1:6", 2),
    ("0:2,0:4", 4),
    ("0:2,1:3", 7),
])
def test_decode_diagnostics(s, pos):
    with pytest.raises(CodecError) as exc:
        rle_decode(s, 2, 3)
    assert exc.value.position == pos


def test_mask_wrapping():
    assert unwrap_mask("answer " + wrap_mask("1:4")) == "1:4"
    with pytest.raises(CodecError):
        unwrap_mask("<mask>1:4")


def test_label_map_text_roundtrip():
    m = np.arange(12).reshape(3, 4) % 5
    np.testing.assert_array_equal(parse_label_map(format_label_map(m)), m)


def test_rejects_negative_and_fractional():
    with pytest.raises(Exception):
        rle_encode(np.array([[-1]]))
    with pytest.raises(Exception):
        rle_encode(np.array([[0.5]]))
