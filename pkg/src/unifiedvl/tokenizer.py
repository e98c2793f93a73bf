"""Synergistic vision tokenizer: fuse, project, quantize.

Geometric features query semantic features through single-head
cross-attention; the fused grid is concatenated with the geometric features,
projected by a two-layer GELU MLP and snapped to the nearest codebook
prototype. Everything runs in float64 numpy with hand-written backward
passes so gradients can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, ConfigError, ShapeError
from .vocab import UnifiedVocab

CODEBOOK_MAGIC = b"YVCB"
COMMITMENT_BETA = 0.25


@dataclass
class FeatureGrid:
    h: int
    w: int
    data: np.ndarray  # (h*w, dim)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.h * self.w < 1 or self.data.shape[0] != self.h * self.w or self.data.ndim != 2:
            raise ShapeError(f"grid {self.h}x{self.w} does not match data shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("feature grid holds non-finite values")

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class FusionWeights:
    w_q: np.ndarray  # (geo_dim, d_k)
    w_k: np.ndarray  # (sem_dim, d_k)
    w_v: np.ndarray  # (sem_dim, d_k)
    w1: np.ndarray  # (d_k + geo_dim, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, code_dim)
    b2: np.ndarray
    # perceptual/adversarial weights are kept for config parity; never used
    lambda_p: float = 1.0
    lambda_g: float = 1.0

    PARAMS = ("w_q", "w_k", "w_v", "w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, geo_dim: int, sem_dim: int, d_k: int, hidden: int, code_dim: int,
             rng: np.random.Generator) -> "FusionWeights":
        def lin(fan_in, fan_out):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

        return cls(
            w_q=lin(geo_dim, d_k), w_k=lin(sem_dim, d_k), w_v=lin(sem_dim, d_k),
            w1=lin(d_k + geo_dim, hidden), b1=np.zeros(hidden),
            w2=lin(hidden, code_dim), b2=np.zeros(code_dim),
        )

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    def check_attention(self, geo: FeatureGrid, sem: FeatureGrid) -> None:
        if geo.dim != self.w_q.shape[0]:
            raise ShapeError(f"geo dim {geo.dim} != W_Q rows {self.w_q.shape[0]}")
        if sem.dim != self.w_k.shape[0] or sem.dim != self.w_v.shape[0]:
            raise ShapeError(f"sem dim {sem.dim} does not match W_K/W_V")
        if not (self.w_q.shape[1] == self.w_k.shape[1] == self.w_v.shape[1]):
            raise ShapeError("W_Q, W_K, W_V must share d_k")

    def check(self, geo: FeatureGrid, sem: FeatureGrid) -> None:
        self.check_attention(geo, sem)
        if self.w1.shape[0] != self.d_k + geo.dim:
            raise ShapeError(f"MLP input {self.w1.shape[0]} != d_k + geo dim {self.d_k + geo.dim}")


@dataclass
class Codebook:
    prototypes: np.ndarray  # (K, D)
    usage_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise ConfigError("codebook needs at least one prototype")
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.K, dtype=np.int64)

    @property
    def K(self) -> int:
        return self.prototypes.shape[0]

    @property
    def D(self) -> int:
        return self.prototypes.shape[1]

    @classmethod
    def random(cls, K: int, D: int, rng: np.random.Generator) -> "Codebook":
        if K < 1:
            raise ConfigError("codebook needs at least one prototype")
        return cls(rng.normal(size=(K, D)))

    def record(self, indices: np.ndarray) -> None:
        self.usage_counts += np.bincount(np.asarray(indices).ravel(), minlength=self.K)

    def reset_usage(self) -> None:
        self.usage_counts[:] = 0

    def to_bytes(self) -> bytes:
        head = CODEBOOK_MAGIC + struct.pack("<II", self.K, self.D)
        return head + self.prototypes.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Codebook":
        if data[:4] != CODEBOOK_MAGIC:
            raise CodecError("not a codebook file (bad magic)", 0)
        K, D = struct.unpack("<II", data[4:12])
        body = data[12:]
        if len(body) != 4 * K * D:
            raise CodecError(f"codebook body has {len(body)} bytes, expected {4 * K * D}", 12)
        return cls(np.frombuffer(body, dtype="<f4").reshape(K, D).astype(np.float64))


@dataclass
class QuantizeResult:
    indices: np.ndarray  # (n,)
    quantized: FeatureGrid
    assignment_probs: np.ndarray  # (n, K)
    distances: np.ndarray  # (n, K)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def _softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = a - a.max(axis=axis, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=axis, keepdims=True)


def _gelu(x):
    c = np.sqrt(2.0 / np.pi)
    t = np.tanh(c * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t)


def _gelu_grad(x):
    c = np.sqrt(2.0 / np.pi)
    u = c * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * c * (1.0 + 3 * 0.044715 * x**2)


def attention_weights(geo: FeatureGrid, sem: FeatureGrid, w: FusionWeights) -> np.ndarray:
    w.check_attention(geo, sem)
    q = geo.data @ w.w_q
    k = sem.data @ w.w_k
    return _softmax(q @ k.T / np.sqrt(w.d_k))


def cross_attention_fuse(geo: FeatureGrid, sem: FeatureGrid, w: FusionWeights) -> FeatureGrid:
    """Z_syn = softmax(Q K^T / sqrt(d_k)) V, with Q from geo and K, V from sem."""
    attn = attention_weights(geo, sem, w)
    return FeatureGrid(geo.h, geo.w, attn @ (sem.data @ w.w_v))


def project(z_syn: FeatureGrid, geo: FeatureGrid, w: FusionWeights) -> FeatureGrid:
    x = np.concatenate([z_syn.data, geo.data], axis=1)
    return FeatureGrid(geo.h, geo.w, _gelu(x @ w.w1 + w.b1) @ w.w2 + w.b2)


def squared_distances(z: np.ndarray, prototypes: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Exact ||z_i - c_k||^2 from explicit differences (no norm expansion)."""
    out = np.empty((z.shape[0], prototypes.shape[0]))
    for s in range(0, z.shape[0], chunk):
        diff = z[s:s + chunk, None, :] - prototypes[None, :, :]
        out[s:s + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def quantize_ibq(z: FeatureGrid, book: Codebook, temperature: float = 1.0) -> QuantizeResult:
    """Nearest-prototype quantization; ties go to the lowest index.

    ``assignment_probs`` is softmax(-distance / temperature), the soft path
    that carries gradient to every prototype.
    """
    if book.K < 1:
        raise ConfigError("empty codebook")
    if z.dim != book.D:
        raise ShapeError(f"feature dim {z.dim} != codebook dim {book.D}")
    dist = squared_distances(z.data, book.prototypes)
    idx = np.argmin(dist, axis=1)
    probs = _softmax(-dist / temperature)
    return QuantizeResult(idx, FeatureGrid(z.h, z.w, book.prototypes[idx]), probs, dist)


def codebook_utilization(book: Codebook, counts: np.ndarray | None = None) -> float:
    counts = book.usage_counts if counts is None else np.asarray(counts)
    return float(np.count_nonzero(counts > 0)) / book.K


# ---------------------------------------------------------------------------
# codebook losses
# ---------------------------------------------------------------------------


@dataclass
class TokenizerLoss:
    vq: float
    ent: float
    total: float
    grad_z: np.ndarray
    grad_codebook: np.ndarray


def _entropy(p: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return -(p * logp).sum(axis=-1)


def tokenizer_losses(z: FeatureGrid, result: QuantizeResult, book: Codebook, lambda_e: float = 0.1,
                     beta: float = COMMITMENT_BETA, temperature: float = 1.0) -> TokenizerLoss:
    """Codebook terms of the tokenizer objective with gradients.

    vq  = mean_i ||sg(c_i) - z_i||^2 + beta * mean_i ||c_i - sg(z_i)||^2
    ent = mean_i H(p_i) - H(mean_i p_i)

    Gradients honour the stop-gradients: the first vq term feeds ``z`` only,
    the second feeds the codebook only; the entropy term feeds both.
    """
    x, C = z.data, book.prototypes
    n = x.shape[0]
    idx = result.indices
    diff = x - C[idx]  # z - c
    sq = (diff**2).sum(axis=1).mean()
    vq = (1.0 + beta) * sq

    a = -result.distances / temperature
    logp = a - a.max(axis=1, keepdims=True)
    logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    pbar = p.mean(axis=0)
    log_pbar = np.log(np.maximum(pbar, np.finfo(float).tiny))
    ent = _entropy(p, logp).mean() - _entropy(pbar, log_pbar)

    # d ent / d p_ik = (log pbar_k - log p_ik) / n, then through the softmax
    g = (log_pbar[None, :] - logp) / n
    ga = p * (g - (p * g).sum(axis=1, keepdims=True))
    # a_ik = -||z_i - c_k||^2 / T
    s = ga.sum(axis=1, keepdims=True)
    grad_z_ent = (-2.0 / temperature) * (s * x - ga @ C)
    grad_c_ent = (2.0 / temperature) * (ga.T @ x - ga.sum(axis=0)[:, None] * C)

    grad_z = 2.0 * diff / n + lambda_e * grad_z_ent
    grad_c = lambda_e * grad_c_ent
    np.add.at(grad_c, idx, -2.0 * beta * diff / n)
    return TokenizerLoss(float(vq), float(ent), float(vq + lambda_e * ent), grad_z, grad_c)


# ---------------------------------------------------------------------------
# end-to-end encoder with backward pass
# ---------------------------------------------------------------------------


@dataclass
class EncodeCache:
    geo: FeatureGrid
    sem: FeatureGrid
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    x: np.ndarray
    pre: np.ndarray
    hid: np.ndarray


def encode_features(geo: FeatureGrid, sem: FeatureGrid, w: FusionWeights) -> tuple[FeatureGrid, EncodeCache]:
    """fuse -> concat(Z_syn, H_geo) -> MLP; returns pre-quantization features."""
    w.check(geo, sem)
    q, k, v = geo.data @ w.w_q, sem.data @ w.w_k, sem.data @ w.w_v
    attn = _softmax(q @ k.T / np.sqrt(w.d_k))
    x = np.concatenate([attn @ v, geo.data], axis=1)
    pre = x @ w.w1 + w.b1
    hid = _gelu(pre)
    z = hid @ w.w2 + w.b2
    return FeatureGrid(geo.h, geo.w, z), EncodeCache(geo, sem, q, k, v, attn, x, pre, hid)


def encode_backward(cache: EncodeCache, grad_z: np.ndarray, w: FusionWeights) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the weights and both input grids."""
    g = {}
    g["w2"] = cache.hid.T @ grad_z
    g["b2"] = grad_z.sum(axis=0)
    d_hid = grad_z @ w.w2.T
    d_pre = d_hid * _gelu_grad(cache.pre)
    g["w1"] = cache.x.T @ d_pre
    g["b1"] = d_pre.sum(axis=0)
    d_x = d_pre @ w.w1.T
    dk = w.d_k
    d_syn, d_geo = d_x[:, :dk], d_x[:, dk:].copy()
    d_attn = d_syn @ cache.v.T
    d_v = cache.attn.T @ d_syn
    d_scores = cache.attn * (d_attn - (cache.attn * d_attn).sum(axis=1, keepdims=True)) / np.sqrt(dk)
    d_q = d_scores @ cache.k
    d_k = d_scores.T @ cache.q
    g["w_q"] = cache.geo.data.T @ d_q
    g["w_k"] = cache.sem.data.T @ d_k
    g["w_v"] = cache.sem.data.T @ d_v
    d_geo += d_q @ w.w_q.T
    g["geo"] = d_geo
    g["sem"] = d_k @ w.w_k.T + d_v @ w.w_v.T
    return g


def tokenize_image(geo: FeatureGrid, sem: FeatureGrid, w: FusionWeights, book: Codebook,
                   vocab: UnifiedVocab | None = None) -> list[int]:
    """Row-major image-token ids (offset into the vocab's image range if given)."""
    if (geo.h, geo.w) != (sem.h, sem.w):
        raise ShapeError(f"geo grid {geo.h}x{geo.w} != sem grid {sem.h}x{sem.w}")
    z, _ = encode_features(geo, sem, w)
    idx = quantize_ibq(z, book).indices
    if vocab is None:
        return [int(i) for i in idx]
    if book.K > vocab.config.image_codebook_size:
        raise ConfigError(f"codebook K={book.K} exceeds vocab image range {vocab.config.image_codebook_size}")
    return [vocab.image_token(int(i)) for i in idx]


def fit_codebook(data: np.ndarray, book: Codebook, steps: int = 200, lr: float = 0.05,
                 lambda_e: float = 0.1, batch: int = 256, seed: int = 0) -> list[float]:
    """Desk-scale Adam on the prototypes alone, using the codebook losses.

    Usage tallies are reset and refilled by one final full pass over ``data``.
    """
    rng = np.random.default_rng(seed)
    m = np.zeros_like(book.prototypes)
    v = np.zeros_like(book.prototypes)
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for t in range(1, steps + 1):
        sel = rng.choice(len(data), size=min(batch, len(data)), replace=False)
        z = FeatureGrid(len(sel), 1, data[sel])
        res = quantize_ibq(z, book)
        loss = tokenizer_losses(z, res, book, lambda_e=lambda_e)
        g = loss.grad_codebook
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        book.prototypes -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        history.append(loss.total)
    book.reset_usage()
    book.record(quantize_ibq(FeatureGrid(len(data), 1, data), book).indices)
    return history
