import numpy as np
import pytest

import checks
from oracles import attention_reference, nearest_index
from unifiedvl import build_vocab
from unifiedvl.errors import CodecError, ConfigError, ShapeError
from unifiedvl.tokenizer import (Codebook, FeatureGrid, FusionWeights, codebook_utilization, cross_attention_fuse,
                                 fit_codebook, quantize_ibq, tokenize_image, tokenizer_losses)


def test_cross_attention_matches_loop():
    rng = np.random.default_rng(0)
    geo = FeatureGrid(3, 2, rng.normal(size=(6, 5)))
    sem = FeatureGrid(3, 2, rng.normal(size=(6, 7)))
    w = FusionWeights.init(5, 7, d_k=4, hidden=8, code_dim=3, rng=rng)
    ref = attention_reference(geo.data, sem.data, w.w_q, w.w_k, w.w_v)
    np.testing.assert_allclose(cross_attention_fuse(geo, sem, w).data, ref, atol=1e-10, rtol=0)


def test_quantizer_matches_exhaustive_search():
    rng = np.random.default_rng(1)
    book = Codebook.random(64, 6, rng)
    z = FeatureGrid(500, 1, rng.normal(size=(500, 6)))
    res = quantize_ibq(z, book)
    np.testing.assert_array_equal(res.indices, nearest_index(z.data, book.prototypes))
    np.testing.assert_allclose(res.assignment_probs.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(np.argmax(res.assignment_probs, axis=1), res.indices)


def test_ties_go_to_lowest_index():
    book = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))
    res = quantize_ibq(FeatureGrid(1, 1, np.zeros((1, 2))), book)
    assert res.indices[0] == 0
    res = quantize_ibq(FeatureGrid(1, 1, np.array([[1.0, 0.0]])), book)
    assert res.indices[0] == 0


def test_vq_loss_zero_on_prototypes():
    book = Codebook(np.eye(3))
    z = FeatureGrid(3, 1, np.eye(3))
    out = tokenizer_losses(z, quantize_ibq(z, book), book)
    assert out.vq == 0.0
    z2 = FeatureGrid(3, 1, np.eye(3) + 0.1)
    assert tokenizer_losses(z2, quantize_ibq(z2, book), book).vq > 0


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients(seed):
    assert checks.case_tokenizer_grad(np.random.default_rng(seed)) <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_encoder_chain_gradients(seed):
    assert checks.case_encoder_chain_grad(np.random.default_rng(seed)) <= 1e-4


def test_utilization_counts():
    book = Codebook(np.zeros((8, 2)))
    book.record(np.array([0, 0, 3, 7]))
    assert codebook_utilization(book) == 3 / 8
    assert book.usage_counts.tolist() == [2, 0, 0, 1, 0, 0, 0, 1]
    book.reset_usage()
    assert codebook_utilization(book) == 0.0


def test_codebook_bytes_roundtrip():
    book = Codebook(np.arange(12, dtype=float).reshape(4, 3))
    np.testing.assert_array_equal(Codebook.from_bytes(book.to_bytes()).prototypes, book.prototypes)
    with pytest.raises(CodecError):
        Codebook.from_bytes(b"XXXX" + book.to_bytes()[4:])


def test_tokenize_image_offsets_into_vocab():
    rng = np.random.default_rng(2)
    v = build_vocab()
    geo = FeatureGrid(2, 2, rng.normal(size=(4, 3)))
    sem = FeatureGrid(2, 2, rng.normal(size=(4, 3)))
    w = FusionWeights.init(3, 3, 4, 8, 2, rng)
    book = Codebook.random(16, 2, rng)
    ids = tokenize_image(geo, sem, w, book, v)
    raw = tokenize_image(geo, sem, w, book)
    assert ids == [v.image_range.base + i for i in raw]
    with pytest.raises(ShapeError):
        tokenize_image(geo, FeatureGrid(1, 4, sem.data), w, book)


def test_fit_codebook_raises_utilization():
    rng = np.random.default_rng(3)
    centers = rng.normal(0, 5, size=(8, 2))
    data = centers[rng.integers(0, 8, 2000)] + rng.normal(0, 0.1, size=(2000, 2))
    book = Codebook.random(8, 2, rng)
    hist = fit_codebook(data, book, steps=150, lr=0.1)
    assert hist[-1] < hist[0]
    assert codebook_utilization(book) >= 0.5


def test_invalid_codebook():
    with pytest.raises(ConfigError):
        Codebook.random(0, 3, np.random.default_rng(0))
