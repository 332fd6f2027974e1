"""Finite-difference checks of the full sequence loss on synthetic instances."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .features import N_LABEL_SLOTS, N_POS_SLOTS, N_SLOTS, N_WORD_SLOTS
from .models import EmbeddingTables, FeedforwardParams, LSTMParams, ParserModel, sample_masks, \
    sequence_gradients, sequence_loss
from .nn import GradcheckReport, finite_difference_gradcheck
from .treebank import Vocabulary

# "output-layer" names the softmax weight matrix
BLOCK_ALIASES = {"output-layer": "W_hy", "output-bias": "b_y"}


def random_instance(arch: str, embed_dim: int = 6, hidden: int = 5, n_actions: int = 4,
                    length: int = 8, seed: int = 0, p_drop: float = 0.3,
                    vocab_sizes: tuple[int, int, int] = (9, 7, 5), scale: float = 0.5,
                    peephole: str = "diagonal"):
    """A model with Glorot weights, uniform(-scale, scale) embeddings and biases,
    random slot indices and random gold actions.

    Dropout masks are sampled once and returned, so the loss is deterministic.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocabulary([f"w{i}" for i in range(vocab_sizes[0] - 3)],
                       [f"p{i}" for i in range(vocab_sizes[1] - 3)],
                       [f"l{i}" for i in range(vocab_sizes[2] - 1)])
    emb = EmbeddingTables(*(rng.uniform(-scale, scale, (n, embed_dim)) for n in vocab_sizes))
    input_dim = N_SLOTS * embed_dim
    if arch == "lstm":
        params = LSTMParams.initialize(input_dim, hidden, n_actions, rng, peephole)
    else:
        params = FeedforwardParams.initialize(input_dim, hidden, n_actions, rng, arch.split("-")[1])
    for name, block in params.blocks().items():
        if name.startswith("b_"):
            block[...] = rng.uniform(-scale, scale, block.shape)
    model = ParserModel(arch, vocab, emb, params, p_drop, p_drop)
    features = np.concatenate([
        rng.integers(0, vocab_sizes[0], (length, N_WORD_SLOTS)),
        rng.integers(0, vocab_sizes[1], (length, N_POS_SLOTS)),
        rng.integers(0, vocab_sizes[2], (length, N_LABEL_SLOTS)),
    ], axis=1)
    actions = rng.integers(0, n_actions, length)
    masks = sample_masks(model, length, rng)
    return model, features, actions, masks


def check_model(model: ParserModel, features, actions, masks, l2: float = 1e-3,
                step: float = 3e-5, tolerance: float = 1e-4, corrupt: Optional[str] = None,
                max_coords: Optional[int] = None, seed: int = 0) -> GradcheckReport:
    _, cache = sequence_loss(model, features, actions, masks, l2)
    grads = sequence_gradients(model, cache, l2)
    if corrupt is not None:
        name = BLOCK_ALIASES.get(corrupt, corrupt)
        if name not in grads:
            raise KeyError(f"unknown parameter block {corrupt!r}")
        grads[name] = grads[name] * 2.0

    def loss():
        return sequence_loss(model, features, actions, masks, l2)[0]

    return finite_difference_gradcheck(loss, model.blocks(), grads, step=step, tolerance=tolerance,
                                       max_coords=max_coords, rng=np.random.default_rng(seed))
