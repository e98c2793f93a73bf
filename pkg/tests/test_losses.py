import numpy as np
import pytest

import checks
from oracles import ntp_m_reference, vluas_reference
from unifiedvl.errors import NumericError, RangeError
from unifiedvl.losses import ntp_m_loss, select_hard_negatives, vluas_loss


@pytest.mark.parametrize("seed", range(30))
def test_ntp_m_matches_reference(seed):
    assert checks.case_ntp_oracle(np.random.default_rng(seed)) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_ntp_m_gradient(seed):
    assert checks.case_ntp_grad(np.random.default_rng(seed)) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_vluas_gradient(seed):
    assert checks.case_vluas_grad(np.random.default_rng(seed)) <= 1e-4


def test_vluas_value_and_lambda_scaling():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 6))
    t = np.array([1, 2, -1, 5])
    img = np.array([False, True, False, True])
    a = vluas_loss(z, t, img, lam=0.5)
    b = vluas_loss(z, t, img, lam=1.0)
    assert a.total == pytest.approx(vluas_reference(z.tolist(), t.tolist(), img.tolist(), 0.5), abs=1e-12)
    np.testing.assert_allclose(b.grad[img], 2 * a.grad[img], rtol=0, atol=0)
    np.testing.assert_array_equal(a.grad[~img], b.grad[~img])
    assert not a.grad[2].any()
    with pytest.raises(RangeError):
        vluas_loss(z, np.array([0, 0, 0, 6]), img)


def test_hard_negatives_ties_and_size():
    s = np.array([1.0, 3.0, 3.0, 0.5, 3.0])
    assert select_hard_negatives(s, np.array([0, 2, 3, 4, 1]), 2).tolist() == [1, 2]
    assert select_hard_negatives(s, np.array([3]), 5).tolist() == [3]
    assert select_hard_negatives(s, np.array([], dtype=int), 3).size == 0


def test_ntp_m_sparsity_and_sign():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 10))
    y = np.zeros((3, 10), bool)
    y[0, [1, 4]] = True
    y[2, 7] = True
    m = np.ones((3, 10), bool)
    m[0, 9] = False
    out = ntp_m_loss(z, y, m, k=2)
    assert out.total >= 0
    assert not out.grad[0, 9]
    assert np.count_nonzero(out.grad[0]) == 4
    assert np.all(out.grad[y] < 0)
    # rows without positives still push their hard negatives down
    assert np.count_nonzero(out.grad[1]) == 2


def test_ntp_m_fewer_candidates_than_k():
    z = np.array([[2.0, -1.0, 0.5]])
    y = np.array([[True, False, True]])
    out = ntp_m_loss(z, y, None, k=5)
    assert out.total == pytest.approx(ntp_m_reference(z.tolist(), y.tolist(), [[True] * 3], 5), abs=1e-12)
    assert out.components["negative"] == pytest.approx(np.logaddexp(0, -1.0))


def test_ntp_m_saturated_is_near_zero():
    z = np.array([[40.0, -40.0, -40.0]])
    y = np.array([[True, False, False]])
    assert ntp_m_loss(z, y, None, 2).total < 1e-16


def test_nan_rejected():
    with pytest.raises(NumericError):
        ntp_m_loss(np.array([[np.nan]]), np.array([[True]]), None, 1)
