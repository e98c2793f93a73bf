import pytest
from hypothesis import given, strategies as st

from unifiedvl import build_vocab, VocabConfig
from unifiedvl.errors import ConfigError, RangeError, TokenClassError
from unifiedvl.vocab import TokenClass, UnifiedVocab


def test_default_layout_sizes(vocab):
    assert vocab.total_size == 256 + 512 + 2 * 2048 + 2 + 1000 + len(vocab.config.parsing_tokens)
    bases = [r.base for r in vocab.layout]
    assert bases == sorted(bases)
    for a, b in zip(vocab.layout, vocab.layout[1:]):
        assert a.stop == b.base


def test_partition_is_exhaustive_and_disjoint(small_vocab):
    v = small_vocab
    for tid in range(v.total_size):
        hits = [r.name for r in v.layout if tid in r]
        assert hits == [v.token_class(tid)]
    with pytest.raises(RangeError):
        v.token_class(v.total_size)
    with pytest.raises(RangeError):
        v.token_class(-1)


def test_coordinate_bijection(small_vocab):
    v = small_vocab
    seen = set()
    for axis in "xy":
        for c in range(v.config.coords_per_axis):
            tid = v.coord_token(axis, c)
            assert v.coord_value(tid) == (axis, c)
            seen.add(tid)
    assert len(seen) == 2 * v.config.coords_per_axis
    with pytest.raises(RangeError):
        v.coord_token("x", v.config.coords_per_axis)


def test_tags_are_atomic(vocab):
    for name in vocab.config.parsing_tokens:
        tid = vocab.tag(name)
        assert vocab.token_class(tid) is TokenClass.PARSING
        assert vocab.tag_name(tid) == name
        assert vocab.tokenize(f"<{name}>") == [tid]
    with pytest.raises(TokenClassError):
        vocab.tag("nonexistent")


def test_depth_and_visibility_tokens(vocab):
    assert vocab.token_str(vocab.depth_token(1)) == "<custom_1>"
    assert vocab.token_str(vocab.depth_token(1000)) == "<custom_1000>"
    assert vocab.depth_label(vocab.depth_token(37)) == 37
    assert vocab.token_str(vocab.visibility_token(1.0)) == "<v_1.0>"
    assert vocab.visibility_value(vocab.visibility_token(0.0)) == 0.0
    with pytest.raises(RangeError):
        vocab.depth_token(0)


def test_decode_text_rejects_non_text(vocab):
    with pytest.raises(TokenClassError):
        vocab.decode_text([vocab.coord_token("x", 3)])
    assert vocab.decode_text(vocab.encode_text("hi") + [vocab.tag("box")]) == "hi<box>"


@given(st.text(max_size=40))
def test_text_roundtrip(s):
    v = build_vocab()
    assert v.decode_text(v.encode_text(s)) == s


def test_render_tokenize_roundtrip(vocab):
    ids = vocab.encode_text("cat ") + [vocab.tag("box"), vocab.coord_token("x", 5), vocab.coord_token("y", 2047),
                                       vocab.image_token(3), vocab.depth_token(9), vocab.tag("/box")]
    assert vocab.tokenize(vocab.render(ids)) == ids


def test_escaped_underscores(vocab):
    assert vocab.tokenize(r"<x\_155>") == [vocab.coord_token("x", 155)]


def test_manifest_roundtrip_and_stability():
    cfg = VocabConfig(image_codebook_size=100, coords_per_axis=300, depth_bins=50)
    a, b = build_vocab(cfg), build_vocab(cfg)
    assert a.manifest() == b.manifest()
    again = UnifiedVocab.from_manifest(a.manifest())
    assert again.layout == a.layout
    assert a.manifest().splitlines()[0] == "unified-vocab v1"


def test_manifest_tamper_detected():
    text = build_vocab().manifest().replace("x_coords 768 2048", "x_coords 769 2048")
    with pytest.raises(ConfigError):
        UnifiedVocab.from_manifest(text)


@pytest.mark.parametrize("kw", [dict(text_vocab_size=100), dict(depth_bins=0), dict(coords_per_axis=-1),
                                dict(parsing_tokens=("box",))])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        build_vocab(VocabConfig(**kw))
