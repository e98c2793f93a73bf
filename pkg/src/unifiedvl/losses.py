"""Unified cross-entropy (VLUAS) and multi-label NTP-M losses.

Both return the loss value together with its exact gradient w.r.t. the
logits, so they can drive any autodiff framework via a vector-Jacobian
product (``logits.backward(grad)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, RangeError, ShapeError

IGNORE_INDEX = -1


@dataclass
class LossBreakdown:
    total: float
    components: dict[str, float]
    grad: np.ndarray = field(repr=False)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def vluas_loss(logits: np.ndarray, targets: np.ndarray, is_image: np.ndarray, lam: float = 0.5,
               normalize: bool = False) -> LossBreakdown:
    """L_text + lam * L_image over single-id targets.

    ``targets[i] == -1`` marks an unsupervised position; ``is_image[i]``
    routes a supervised position to the image term. With ``normalize`` each
    term is divided by its position count (sums otherwise).
    """
    z = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    is_image = np.asarray(is_image, dtype=bool)
    if z.ndim != 2 or targets.shape != (z.shape[0],) or is_image.shape != targets.shape:
        raise ShapeError(f"logits {z.shape}, targets {targets.shape}, is_image {is_image.shape} disagree")
    if np.isnan(z).any():
        raise NumericError("NaN in logits")
    sup = targets != IGNORE_INDEX
    if np.any(targets[sup] < 0) or np.any(targets[sup] >= z.shape[1]):
        raise RangeError(f"target id outside [0, {z.shape[1]})")

    rows = np.flatnonzero(sup)
    logp = _log_softmax(z[rows])
    nll = -logp[np.arange(len(rows)), targets[rows]]
    img = is_image[rows]
    n_text, n_img = int((~img).sum()), int(img.sum())
    w_text = 1.0 / n_text if normalize and n_text else 1.0
    w_img = 1.0 / n_img if normalize and n_img else 1.0
    l_text = float(nll[~img].sum()) * w_text
    l_image = float(nll[img].sum()) * w_img

    grad = np.zeros_like(z)
    g = np.exp(logp)
    g[np.arange(len(rows)), targets[rows]] -= 1.0
    scale = np.where(img, lam * w_img, w_text)
    grad[rows] = g * scale[:, None]
    return LossBreakdown(l_text + lam * l_image, {"text": l_text, "image": l_image}, grad)


def select_hard_negatives(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` candidates with the highest score; ties go to the lower id.

    ``scores`` may be probabilities or logits (any strictly monotone map of
    the probability ranks identically).
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if k < 1 or candidates.size == 0:
        return candidates[:0]
    s = np.asarray(scores, dtype=np.float64)[candidates]
    order = np.lexsort((candidates, -s))
    return candidates[order[:k]]


def ntp_m_loss(logits: np.ndarray, targets: np.ndarray, valid: np.ndarray | None, k: int) -> LossBreakdown:
    """Multi-label NTP loss with separate positive and hard-negative means.

    Per position: mean of -log sigmoid(z) over valid positives plus mean of
    -log(1 - sigmoid(z)) over the ``k`` highest-scoring valid negatives
    (fewer if fewer exist). Empty sets contribute nothing. Summed over
    positions.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets).astype(bool)
    if z.shape != y.shape or z.ndim != 2:
        raise ShapeError(f"logits {z.shape} and multi-hot targets {y.shape} must match (L, V)")
    m = np.ones_like(y) if valid is None else np.asarray(valid).astype(bool)
    if m.shape != z.shape:
        raise ShapeError(f"validity mask {m.shape} != logits {z.shape}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.isnan(z).any():
        raise NumericError("NaN in logits")

    grad = np.zeros_like(z)
    pos_total = neg_total = 0.0
    for i in range(z.shape[0]):
        pos = np.flatnonzero(y[i] & m[i])
        if pos.size:
            # -log sigmoid(z) = softplus(-z); d/dz = -sigmoid(-z)
            pos_total += softplus(-z[i, pos]).mean()
            grad[i, pos] = -sigmoid(-z[i, pos]) / pos.size
        cand = np.flatnonzero(~y[i] & m[i])
        hard = select_hard_negatives(z[i], cand, k)
        if hard.size:
            # -log(1 - sigmoid(z)) = softplus(z); d/dz = sigmoid(z)
            neg_total += softplus(z[i, hard]).mean()
            grad[i, hard] = sigmoid(z[i, hard]) / hard.size
    total = float(pos_total + neg_total)
    return LossBreakdown(total, {"positive": float(pos_total), "negative": float(neg_total)}, grad)
