"""Synthetic end-to-end training demo.

Builds one mixed sequence: a text prompt, a 2x2 grid of continuous vision
slots (2x2-merged from a 4x4 feature grid) and a text answer. Vision
positions carry two kinds of supervision: the next visual code from the
tokenizer of the same image (VLUAS) and a multi-hot target over the
category tokens, a depth bin and FG/BG (NTP-M).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .losses import IGNORE_INDEX
from .model import DTYPE, MixedSequence, ModelConfig, SpatialMergeProjector, TrainState, merge_2x2, train_step
from .tokenizer import Codebook, FeatureGrid, FusionWeights, tokenize_image
from .vocab import UnifiedVocab, VocabConfig, build_vocab

DEMO_VOCAB = VocabConfig(text_vocab_size=256, image_codebook_size=64, coords_per_axis=64, depth_bins=16)


@dataclass
class DemoResult:
    losses: list[float]
    smoothed: list[float]
    state: TrainState

    @property
    def reduction(self) -> float:
        return 1.0 - self.smoothed[-1] / self.smoothed[0]


def build_demo_sequence(vocab: UnifiedVocab, d_model: int, seed: int = 0) -> MixedSequence:
    rng = np.random.default_rng(seed)
    feat_dim = 8
    geo4 = rng.normal(size=(16, feat_dim))
    sem4 = rng.normal(size=(16, feat_dim))
    geo = FeatureGrid(2, 2, merge_2x2(geo4, 4, 4))
    sem = FeatureGrid(2, 2, merge_2x2(sem4, 4, 4))
    weights = FusionWeights.init(4 * feat_dim, 4 * feat_dim, d_k=16, hidden=32, code_dim=8, rng=rng)
    book = Codebook.random(vocab.config.image_codebook_size, 8, rng)
    codes = tokenize_image(geo, sem, weights, book, vocab)

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        projector = SpatialMergeProjector(feat_dim, d_model)
    with torch.no_grad():
        slots = projector(torch.as_tensor(geo4, dtype=DTYPE), 4, 4).numpy()

    prompt = vocab.encode_text("seg: sky,road ")
    answer = [vocab.tag("ref")] + vocab.encode_text("sky") + [vocab.tag("/ref")]
    items: list = list(prompt) + [slots[j] for j in range(4)] + answer
    ids_next: list[int] = list(prompt) + codes + answer  # id each item stands for as a target
    L = len(items)
    targets = ids_next[1:] + [IGNORE_INDEX]
    is_image = [vocab.token_class(t).value == "image_codes" if t >= 0 else False for t in targets]

    V = vocab.total_size
    multi_hot = np.zeros((L, V), dtype=bool)
    valid = np.ones((L, V), dtype=bool)
    cats = [vocab.category_token_ids("sky"), vocab.category_token_ids("road")]
    labels = rng.integers(0, 2, size=4)
    depth = rng.integers(1, vocab.config.depth_bins + 1, size=4)
    for j in range(4):
        row = len(prompt) + j
        multi_hot[row, cats[labels[j]]] = True
        multi_hot[row, vocab.tag("FG") if labels[j] == 0 else vocab.tag("BG")] = True
        if j == 3:
            # a patch with a semantic label but no depth annotation
            valid[row, vocab.depth_range.base:vocab.depth_range.stop] = False
        else:
            multi_hot[row, vocab.depth_token(int(depth[j]))] = True
    return MixedSequence(items, targets, is_image, multi_hot, valid)


def run_demo(steps: int = 200, seed: int = 0, lr: float = 1e-3, mode: str = "combined", lam: float = 0.5,
             k: int = 4, ema: float = 0.9) -> DemoResult:
    vocab = build_vocab(DEMO_VOCAB)
    cfg = ModelConfig(vocab_size=vocab.total_size, d_model=32, n_layers=2, n_heads=4, d_ff=64, max_seq=32,
                      seed=seed)
    seq = build_demo_sequence(vocab, cfg.d_model, seed)
    state = TrainState.create(cfg, lr=lr)
    losses, smoothed = [], []
    for _ in range(steps):
        state, lb = train_step(state, [seq], mode=mode, lam=lam, k=k)
        losses.append(lb.total)
        smoothed.append(lb.total if not smoothed else ema * smoothed[-1] + (1 - ema) * lb.total)
    return DemoResult(losses, smoothed, state)
