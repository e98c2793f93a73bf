"""Desk-scale decoder-only model over the unified vocabulary.

Inputs mix text token ids with continuous vision embeddings (already
projected to ``d_model``); targets are always discrete ids, so text and
visual positions share one next-token prediction head.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CapacityError, CodecError, ShapeError, TrainingError
from .losses import IGNORE_INDEX, LossBreakdown, ntp_m_loss, vluas_loss

CHECKPOINT_MAGIC = b"YVTM"
CHECKPOINT_VERSION = 1
DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_seq: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


# ---------------------------------------------------------------------------
# 2x2 spatial merge projector
# ---------------------------------------------------------------------------


def merge_2x2(grid: np.ndarray | torch.Tensor, h: int, w: int):
    """Concatenate each 2x2 patch block: (h*w, c) -> (h/2 * w/2, 4c).

    Block order within a merged token is (r, c), (r, c+1), (r+1, c), (r+1, c+1).
    """
    if h % 2 or w % 2:
        raise ShapeError(f"spatial merge needs even grid dims, got {h}x{w}")
    c = grid.shape[-1]
    x = grid.reshape(h // 2, 2, w // 2, 2, c)
    if isinstance(x, torch.Tensor):
        x = x.permute(0, 2, 1, 3, 4)
    else:
        x = x.transpose(0, 2, 1, 3, 4)
    return x.reshape((h // 2) * (w // 2), 4 * c)


class SpatialMergeProjector(nn.Module):
    def __init__(self, in_dim: int, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(4 * in_dim, d_model, dtype=DTYPE)
        self.fc2 = nn.Linear(d_model, d_model, dtype=DTYPE)

    def forward(self, features: torch.Tensor, h: int, w: int) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(merge_2x2(features, h, w))))


# ---------------------------------------------------------------------------
# transformer
# ---------------------------------------------------------------------------


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, dtype=DTYPE)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, D = x.shape
        hd = D // self.n_heads
        q, k, v = self.qkv(x).split(D, dim=-1)
        q, k, v = (t.view(B, L, self.n_heads, hd).transpose(1, 2) for t in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        future = torch.ones(L, L, dtype=torch.bool).triu(1)
        att = att.masked_fill(future, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, D)
        return self.proj(y)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.fc1 = nn.Linear(cfg.d_model, cfg.d_ff, dtype=DTYPE)
        self.fc2 = nn.Linear(cfg.d_ff, cfg.d_model, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


class ToyVLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model, dtype=DTYPE)
        self.pos_emb = nn.Embedding(cfg.max_seq, cfg.d_model, dtype=DTYPE)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, dtype=DTYPE)

    def forward(self, tokens: torch.Tensor, vision: torch.Tensor | None = None,
                vision_mask: torch.Tensor | None = None) -> torch.Tensor:
        B, L = tokens.shape
        if L > self.cfg.max_seq:
            raise CapacityError(f"sequence length {L} exceeds max_seq {self.cfg.max_seq}")
        x = self.tok_emb(tokens)
        if vision is not None and vision_mask is not None:
            x = torch.where(vision_mask[..., None], vision.to(DTYPE), x)
        x = x + self.pos_emb(torch.arange(L))
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.ln_f(x))


def build_model(cfg: ModelConfig) -> ToyVLM:
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        return ToyVLM(cfg)


# ---------------------------------------------------------------------------
# sequences and batches
# ---------------------------------------------------------------------------


@dataclass
class MixedSequence:
    """Items are token ids or continuous ``d_model`` vectors (vision slots).

    ``targets[i]`` is the id expected after item ``i`` (-1: unsupervised) and
    ``target_is_image[i]`` flags visual-code targets. ``multi_hot``/``valid``
    optionally carry (L, V) multi-label targets for NTP-M.
    """

    items: list
    targets: list[int] = field(default_factory=list)
    target_is_image: list[bool] = field(default_factory=list)
    multi_hot: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.items)

    def tensors(self, d_model: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        L = len(self.items)
        tokens = torch.zeros(1, L, dtype=torch.long)
        vision = torch.zeros(1, L, d_model, dtype=DTYPE)
        mask = torch.zeros(1, L, dtype=torch.bool)
        for i, it in enumerate(self.items):
            if isinstance(it, (int, np.integer)):
                tokens[0, i] = int(it)
            else:
                vec = torch.as_tensor(np.asarray(it, dtype=np.float64))
                if vec.shape != (d_model,):
                    raise ShapeError(f"vision slot {i} has shape {tuple(vec.shape)}, expected ({d_model},)")
                vision[0, i] = vec
                mask[0, i] = True
        return tokens, vision, mask


def forward(model: ToyVLM, seq: MixedSequence) -> np.ndarray:
    """(L, V) logits for one sequence."""
    with torch.no_grad():
        return model(*seq.tensors(model.cfg.d_model))[0].numpy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    model: ToyVLM
    optimizer: torch.optim.Optimizer
    step: int = 0

    @classmethod
    def create(cls, cfg: ModelConfig, lr: float = 1e-3, betas=(0.9, 0.999)) -> "TrainState":
        model = build_model(cfg)
        return cls(model, torch.optim.Adam(model.parameters(), lr=lr, betas=betas))


def sequence_loss(logits: np.ndarray, seq: MixedSequence, mode: str, lam: float = 0.5, k: int = 4,
                  ntp_weight: float = 1.0) -> LossBreakdown:
    """Loss and logit gradient for one sequence under ``mode``.

    ``vluas``: unified cross-entropy on single-id targets. ``ntp_m``:
    multi-label loss on rows of ``multi_hot`` that carry any positive.
    ``combined``: their sum (NTP-M scaled by ``ntp_weight``).
    """
    if mode not in ("vluas", "ntp_m", "combined"):
        raise ValueError(f"unknown loss mode {mode!r}")
    L = logits.shape[0]
    total, comps = 0.0, {}
    grad = np.zeros_like(logits)
    if mode in ("vluas", "combined"):
        targets = np.asarray(seq.targets if seq.targets else [IGNORE_INDEX] * L)
        is_img = np.asarray(seq.target_is_image if seq.target_is_image else [False] * L)
        lv = vluas_loss(logits, targets, is_img, lam=lam)
        total += lv.total
        grad += lv.grad
        comps.update({"text": lv.components["text"], "image": lv.components["image"]})
    if mode in ("ntp_m", "combined"):
        if seq.multi_hot is None:
            raise ShapeError("NTP-M supervision needs multi_hot targets")
        rows = np.flatnonzero(np.asarray(seq.multi_hot).any(axis=1))
        valid = None if seq.valid is None else np.asarray(seq.valid)[rows]
        ln = ntp_m_loss(logits[rows], np.asarray(seq.multi_hot)[rows], valid, k)
        total += ntp_weight * ln.total
        grad[rows] += ntp_weight * ln.grad
        comps["ntp_m"] = ln.total
    return LossBreakdown(float(total), comps, grad)


def train_step(state: TrainState, batch: Sequence[MixedSequence], mode: str = "combined", lam: float = 0.5,
               k: int = 4, ntp_weight: float = 1.0) -> tuple[TrainState, LossBreakdown]:
    """One Adam step on the summed per-sequence losses (averaged over the batch)."""
    model, opt = state.model, state.optimizer
    opt.zero_grad(set_to_none=True)
    total, comps = 0.0, {}
    for seq in batch:
        logits = model(*seq.tensors(model.cfg.d_model))[0]
        lb = sequence_loss(logits.detach().numpy(), seq, mode, lam, k, ntp_weight)
        if not math.isfinite(lb.total) or not np.all(np.isfinite(lb.grad)):
            raise TrainingError(f"non-finite loss at step {state.step}: {lb.total} ({lb.components})")
        logits.backward(torch.from_numpy(lb.grad / len(batch)))
        total += lb.total / len(batch)
        for key, val in lb.components.items():
            comps[key] = comps.get(key, 0.0) + val / len(batch)
    opt.step()
    state.step += 1
    return state, LossBreakdown(total, comps, np.empty(0))


def generate(model: ToyVLM, prefix: MixedSequence, n: int) -> list[int]:
    """Greedy continuation of ``prefix`` by ``n`` token ids."""
    if len(prefix) + n > model.cfg.max_seq:
        raise CapacityError(f"prefix {len(prefix)} + {n} new tokens exceeds max_seq {model.cfg.max_seq}")
    items = list(prefix.items)
    out: list[int] = []
    for _ in range(n):
        logits = forward(model, MixedSequence(items))
        nxt = int(np.argmax(logits[-1]))
        out.append(nxt)
        items.append(nxt)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ToyVLM) -> bytes:
    state = model.state_dict()
    meta = {
        "config": asdict(model.cfg),
        "manifest": [[name, list(t.shape)] for name, t in state.items()],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    flat = np.concatenate([t.detach().numpy().ravel() for t in state.values()]).astype("<f4")
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(blob)) + blob + flat.tobytes()


def load_checkpoint(data: bytes) -> ToyVLM:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CodecError("not a model checkpoint (bad magic)", 0)
    version, n = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CodecError(f"unsupported checkpoint version {version}", 4)
    meta = json.loads(data[12:12 + n])
    flat = np.frombuffer(data[12 + n:], dtype="<f4").astype(np.float64)
    model = build_model(ModelConfig(**meta["config"]))
    state, off = {}, 0
    for name, shape in meta["manifest"]:
        size = int(np.prod(shape))
        if off + size > flat.size:
            raise CodecError("checkpoint truncated", 12 + n + 4 * off)
        state[name] = torch.from_numpy(flat[off:off + size].reshape(shape).copy())
        off += size
    if off != flat.size:
        raise CodecError("checkpoint has trailing parameters", 12 + n + 4 * off)
    model.load_state_dict(state)
    return model
