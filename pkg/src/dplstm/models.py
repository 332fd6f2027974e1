"""Feedforward and peephole-LSTM transition classifiers.

Both consume the embedding concatenation of the 48 feature slots and emit a
softmax over parser actions. Forward functions accept either one feature
vector or a ``(T, 48d)`` matrix of them; the LSTM runs its steps in order.

Training maximises the log-likelihood of the oracle actions of a sentence
(teacher forcing) minus an L2 penalty on every parameter, embeddings and
biases included. Gradients are exact; for the LSTM they flow back through
the whole transition sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional, Union

import numpy as np

from .features import N_LABEL_SLOTS, N_POS_SLOTS, N_SLOTS, N_WORD_SLOTS, FeatureVector
from .nn import (ShapeError, activation, activation_grad, affine, glorot_init, sample_dropout_mask,
                 sigmoid, softmax)
from .treebank import Vocabulary

ARCHITECTURES = ("ff-tanh", "ff-cubic", "lstm")
EMBED_INIT_RANGE = 0.01


# --------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTables:
    word: np.ndarray
    pos: np.ndarray
    label: np.ndarray

    @property
    def dim(self) -> int:
        return self.word.shape[1]

    @classmethod
    def initialize(cls, sizes: tuple[int, int, int], dim: int,
                   rng: np.random.Generator) -> "EmbeddingTables":
        r = EMBED_INIT_RANGE
        return cls(*(rng.uniform(-r, r, size=(n, dim)) for n in sizes))

    def blocks(self) -> dict[str, np.ndarray]:
        return {"E_word": self.word, "E_pos": self.pos, "E_label": self.label}


def _split_slots(features: np.ndarray):
    w = N_WORD_SLOTS
    p = w + N_POS_SLOTS
    return features[..., :w], features[..., w:p], features[..., p:]


def embed(fv: Union[FeatureVector, np.ndarray], tables: EmbeddingTables) -> np.ndarray:
    """Concatenate the 48 slot embeddings: words, then POS tags, then labels."""
    feats = fv.as_array() if isinstance(fv, FeatureVector) else np.asarray(fv)
    if feats.shape[-1] != N_SLOTS:
        raise ShapeError(f"expected {N_SLOTS} feature slots, got {feats.shape[-1]}")
    w, p, l = _split_slots(feats)
    lead = feats.shape[:-1]
    parts = [tables.word[w], tables.pos[p], tables.label[l]]
    return np.concatenate([part.reshape(lead + (-1,)) for part in parts], axis=-1)


def embedding_gradients(features: np.ndarray, dx: np.ndarray,
                        tables: EmbeddingTables) -> dict[str, np.ndarray]:
    """Scatter the gradient w.r.t. ``x`` back onto the embedding rows used."""
    d = tables.dim
    feats = features.reshape(-1, N_SLOTS)
    dx = dx.reshape(len(feats), N_SLOTS, d)
    w, p, l = _split_slots(feats)
    grads = {}
    for name, table, idx, lo in (("E_word", tables.word, w, 0),
                                 ("E_pos", tables.pos, p, N_WORD_SLOTS),
                                 ("E_label", tables.label, l, N_WORD_SLOTS + N_POS_SLOTS)):
        g = np.zeros_like(table)
        np.add.at(g, idx.ravel(), dx[:, lo:lo + idx.shape[1]].reshape(-1, d))
        grads[name] = g
    return grads


def load_pretrained_words(tables: EmbeddingTables, vocab: Vocabulary, path) -> int:
    """Overwrite word rows from a whitespace-separated ``word v1 .. vd`` text file.

    Returns the number of vocabulary entries that were replaced.
    """
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != tables.dim + 1:
                continue
            idx = vocab.word_index.get(parts[0])
            if idx is None:
                continue
            tables.word[idx] = np.array(parts[1:], dtype=float)
            hits += 1
    return hits


# --------------------------------------------------------------------------
# feedforward


@dataclass
class FeedforwardParams:
    W_xh: np.ndarray
    b_h: np.ndarray
    W_hy: np.ndarray
    b_y: np.ndarray
    activation: str = "tanh"

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, n_actions: int, rng: np.random.Generator,
                   activation: str = "tanh") -> "FeedforwardParams":
        return cls(glorot_init(hidden, input_dim, rng), np.zeros(hidden),
                   glorot_init(n_actions, hidden, rng), np.zeros(n_actions), activation)

    def blocks(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "activation"}

    @property
    def hidden(self) -> int:
        return self.W_xh.shape[0]


class FFCache(NamedTuple):
    x: np.ndarray
    xd: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    hd: np.ndarray
    y: np.ndarray
    mask_x: Optional[np.ndarray]
    mask_h: Optional[np.ndarray]


def ff_forward(x, params: FeedforwardParams, mask_x=None, mask_h=None):
    """Return the action distribution(s) and a cache for :func:`ff_backward`."""
    xd = x if mask_x is None else x * mask_x
    pre = affine(params.W_xh, xd, params.b_h)
    h = activation(params.activation, pre)
    hd = h if mask_h is None else h * mask_h
    y = softmax(affine(params.W_hy, hd, params.b_y))
    return y, FFCache(x, xd, pre, h, hd, y, mask_x, mask_h)


def _output_delta(y: np.ndarray, gold) -> np.ndarray:
    dz = y.copy()
    if dz.ndim == 1:
        dz[gold] -= 1.0
    else:
        dz[np.arange(len(dz)), gold] -= 1.0
    return dz


def ff_backward(cache: FFCache, gold, params: FeedforwardParams):
    """Gradients of ``-log y(gold)`` (summed over rows for batched caches).

    Returns ``(grads, dx)`` where ``grads`` is keyed like ``params.blocks()``.
    """
    dz = np.atleast_2d(_output_delta(cache.y, gold))
    hd = np.atleast_2d(cache.hd)
    dh = dz @ params.W_hy
    if cache.mask_h is not None:
        dh = dh * np.atleast_2d(cache.mask_h)
    da = dh * activation_grad(params.activation, np.atleast_2d(cache.pre))
    dxd = da @ params.W_xh
    if cache.mask_x is not None:
        dxd = dxd * np.atleast_2d(cache.mask_x)
    grads = {
        "W_xh": da.T @ np.atleast_2d(cache.xd),
        "b_h": da.sum(axis=0),
        "W_hy": dz.T @ hd,
        "b_y": dz.sum(axis=0),
    }
    return grads, dxd.reshape(np.shape(cache.x))


# --------------------------------------------------------------------------
# LSTM


GATE_INPUTS = ("W_xi", "W_xf", "W_xc", "W_xo")
GATE_RECURRENT = ("W_hi", "W_hf", "W_hc", "W_ho")
PEEPHOLES = ("W_ci", "W_cf", "W_co")
GATE_BIASES = ("b_i", "b_f", "b_c", "b_o")


@dataclass
class LSTMParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    # peepholes are length-H vectors (elementwise) or H x H matrices
    W_ci: np.ndarray
    W_cf: np.ndarray
    W_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_hy: np.ndarray
    b_y: np.ndarray

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, n_actions: int, rng: np.random.Generator,
                   peephole: str = "diagonal") -> "LSTMParams":
        if peephole not in ("diagonal", "full"):
            raise ValueError(f"peephole must be 'diagonal' or 'full', got {peephole!r}")
        H = hidden
        kw = {name: glorot_init(H, input_dim, rng) for name in GATE_INPUTS}
        kw.update({name: glorot_init(H, H, rng) for name in GATE_RECURRENT})
        for name in PEEPHOLES:
            kw[name] = glorot_init(1, H, rng)[0] if peephole == "diagonal" else glorot_init(H, H, rng)
        kw.update({name: np.zeros(H) for name in GATE_BIASES})
        kw["W_hy"] = glorot_init(n_actions, H, rng)
        kw["b_y"] = np.zeros(n_actions)
        return cls(**kw)

    def blocks(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def hidden(self) -> int:
        return self.W_hi.shape[0]

    @property
    def peephole(self) -> str:
        return "diagonal" if self.W_ci.ndim == 1 else "full"


class LSTMState(NamedTuple):
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LSTMState":
        return cls(np.zeros(hidden), np.zeros(hidden))


def _peep(W, c):
    return W * c if W.ndim == 1 else c @ W.T


def _cell(zi, zf, zc, zo, c_prev, h_prev, p: LSTMParams):
    """Gate algebra for one step given the (dropped-out) input contributions."""
    i = sigmoid(zi + _peep(p.W_ci, c_prev) + p.W_hi @ h_prev + p.b_i)
    f = sigmoid(zf + _peep(p.W_cf, c_prev) + p.W_hf @ h_prev + p.b_f)
    g = np.tanh(zc + p.W_hc @ h_prev + p.b_c)
    c = f * c_prev + i * g
    o = sigmoid(zo + _peep(p.W_co, c) + p.W_ho @ h_prev + p.b_o)
    tc = np.tanh(c)
    return i, f, g, c, o, tc, o * tc


class LSTMCache(NamedTuple):
    """Per-step intermediates of a sequence; ``c``/``h`` rows 0 hold the initial state."""

    x: np.ndarray
    xd: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tc: np.ndarray
    c: np.ndarray
    h: np.ndarray
    hd: np.ndarray
    y: np.ndarray
    mask_x: Optional[np.ndarray]
    mask_h: Optional[np.ndarray]


def lstm_step(x, prev: LSTMState, params: LSTMParams, mask_x=None, mask_h=None):
    """Advance one transition. Returns ``(y, new_state, cache)``."""
    H = params.hidden
    if prev.c.shape != (H,) or prev.h.shape != (H,):
        raise ShapeError(f"state of size {prev.c.shape}/{prev.h.shape}, expected ({H},)")
    y, cache = lstm_forward(np.asarray(x)[None, :], params,
                            None if mask_x is None else np.asarray(mask_x)[None, :],
                            None if mask_h is None else np.asarray(mask_h)[None, :],
                            initial=prev)
    return y[0], LSTMState(cache.c[1], cache.h[1]), cache


def lstm_forward(X: np.ndarray, params: LSTMParams, mask_x=None, mask_h=None,
                 initial: Optional[LSTMState] = None):
    """Run the LSTM over a ``(T, 48d)`` input sequence from ``initial`` (zeros by default)."""
    p = params
    T, H = len(X), p.hidden
    if X.ndim != 2 or X.shape[1] != p.W_xi.shape[1]:
        raise ShapeError(f"input sequence of shape {X.shape}, expected (T, {p.W_xi.shape[1]})")
    XD = X if mask_x is None else X * mask_x
    # input contributions for all steps at once
    ZI, ZF, ZC, ZO = (XD @ getattr(p, name).T for name in GATE_INPUTS)
    I, F, G, O, TC = (np.empty((T, H)) for _ in range(5))
    C, Hs = np.empty((T + 1, H)), np.empty((T + 1, H))
    state = initial or LSTMState.zeros(H)
    C[0], Hs[0] = state.c, state.h
    for t in range(T):
        I[t], F[t], G[t], C[t + 1], O[t], TC[t], Hs[t + 1] = _cell(
            ZI[t], ZF[t], ZC[t], ZO[t], C[t], Hs[t], p)
    HD = Hs[1:] if mask_h is None else Hs[1:] * mask_h
    Y = softmax(affine(p.W_hy, HD, p.b_y))
    return Y, LSTMCache(X, XD, I, F, G, O, TC, C, Hs, HD, Y, mask_x, mask_h)


def lstm_bptt(cache: LSTMCache, gold, params: LSTMParams):
    """Full backpropagation through time of ``-sum_t log y_t(gold_t)``.

    Returns ``(grads, dX)``; ``grads`` is keyed like ``params.blocks()``.
    """
    p = params
    gold = np.atleast_1d(gold)
    T, H = len(cache.y), p.hidden
    diag = p.W_ci.ndim == 1
    DZ = _output_delta(cache.y, gold)
    DH_out = DZ @ p.W_hy
    if cache.mask_h is not None:
        DH_out = DH_out * cache.mask_h
    DAi, DAf, DAg, DAo = (np.empty((T, H)) for _ in range(4))
    dh_next, dc_next = np.zeros(H), np.zeros(H)
    C = cache.c
    for t in range(T - 1, -1, -1):
        i, f, g, o, tc = cache.i[t], cache.f[t], cache.g[t], cache.o[t], cache.tc[t]
        dh = DH_out[t] + dh_next
        dao = dh * tc * o * (1.0 - o)
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dc = dc + (p.W_co * dao if diag else dao @ p.W_co)
        dai = dc * g * i * (1.0 - i)
        daf = dc * C[t] * f * (1.0 - f)
        dag = dc * i * (1.0 - g * g)
        dc_next = dc * f
        if diag:
            dc_next = dc_next + p.W_ci * dai + p.W_cf * daf
        else:
            dc_next = dc_next + dai @ p.W_ci + daf @ p.W_cf
        dh_next = dai @ p.W_hi + daf @ p.W_hf + dag @ p.W_hc + dao @ p.W_ho
        DAi[t], DAf[t], DAg[t], DAo[t] = dai, daf, dag, dao

    Hprev, Cprev, Ccur = cache.h[:-1], C[:-1], C[1:]
    grads = {}
    for name, DA in zip(GATE_INPUTS, (DAi, DAf, DAg, DAo)):
        grads[name] = DA.T @ cache.xd
    for name, DA in zip(GATE_RECURRENT, (DAi, DAf, DAg, DAo)):
        grads[name] = DA.T @ Hprev
    for name, DA, Cs in (("W_ci", DAi, Cprev), ("W_cf", DAf, Cprev), ("W_co", DAo, Ccur)):
        grads[name] = (DA * Cs).sum(axis=0) if diag else DA.T @ Cs
    for name, DA in zip(GATE_BIASES, (DAi, DAf, DAg, DAo)):
        grads[name] = DA.sum(axis=0)
    grads["W_hy"] = DZ.T @ cache.hd
    grads["b_y"] = DZ.sum(axis=0)
    dXD = DAi @ p.W_xi + DAf @ p.W_xf + DAg @ p.W_xc + DAo @ p.W_xo
    if cache.mask_x is not None:
        dXD = dXD * cache.mask_x
    return {name: grads[name] for name in p.blocks()}, dXD


# --------------------------------------------------------------------------
# whole parser model


Params = Union[FeedforwardParams, LSTMParams]


@dataclass
class ParserModel:
    arch: str
    vocab: Vocabulary
    embeddings: EmbeddingTables
    params: Params
    dropout_eh: float = 0.0
    dropout_ho: float = 0.0

    @classmethod
    def initialize(cls, arch: str, vocab: Vocabulary, embed_dim: int, hidden: int,
                   rng: np.random.Generator, dropout_eh: float = 0.0, dropout_ho: float = 0.0,
                   peephole: str = "diagonal") -> "ParserModel":
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        for p in (dropout_eh, dropout_ho):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        emb = EmbeddingTables.initialize(vocab.sizes(), embed_dim, rng)
        input_dim = N_SLOTS * embed_dim
        if arch == "lstm":
            params: Params = LSTMParams.initialize(input_dim, hidden, vocab.n_actions, rng, peephole)
        else:
            params = FeedforwardParams.initialize(input_dim, hidden, vocab.n_actions, rng,
                                                  arch.split("-")[1])
        return cls(arch, vocab, emb, params, dropout_eh, dropout_ho)

    @property
    def is_recurrent(self) -> bool:
        return self.arch == "lstm"

    @property
    def hidden(self) -> int:
        return self.params.hidden

    @property
    def embed_dim(self) -> int:
        return self.embeddings.dim

    @property
    def n_actions(self) -> int:
        return self.params.W_hy.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        """Every trainable array, embeddings first, in serialization order."""
        return {**self.embeddings.blocks(), **self.params.blocks()}

    def copy(self) -> "ParserModel":
        emb = EmbeddingTables(*(b.copy() for b in self.embeddings.blocks().values()))
        params = type(self.params)(**{
            f.name: (v.copy() if isinstance(v := getattr(self.params, f.name), np.ndarray) else v)
            for f in fields(self.params)})
        return ParserModel(self.arch, self.vocab, emb, params, self.dropout_eh, self.dropout_ho)


def sample_masks(model: ParserModel, steps: int, rng: np.random.Generator):
    """Fresh E-H and H-O masks for a ``steps``-long sequence (``None`` when disabled)."""
    mx = mh = None
    if model.dropout_eh > 0:
        mx = sample_dropout_mask((steps, N_SLOTS * model.embed_dim), model.dropout_eh, rng)
    if model.dropout_ho > 0:
        mh = sample_dropout_mask((steps, model.hidden), model.dropout_ho, rng)
    return mx, mh


class SequenceCache(NamedTuple):
    features: np.ndarray
    actions: np.ndarray
    inner: Union[FFCache, LSTMCache]


def l2_penalty(model: ParserModel) -> float:
    return 0.5 * sum(float(np.vdot(b, b)) for b in model.blocks().values())


def sequence_loss(model: ParserModel, features: np.ndarray, actions: np.ndarray,
                  masks=(None, None), l2: float = 0.0):
    """Negative log-likelihood of a gold action sequence plus ``l2/2 * ||theta||^2``.

    ``features`` is the ``(T, 48)`` slot matrix of the gold configurations.
    """
    features = np.asarray(features)
    actions = np.asarray(actions)
    if len(actions) == 0:
        raise ValueError("empty transition sequence")
    X = embed(features, model.embeddings)
    mx, mh = masks
    if model.is_recurrent:
        Y, inner = lstm_forward(X, model.params, mx, mh)
    else:
        Y, inner = ff_forward(X, model.params, mx, mh)
    nll = -float(np.log(Y[np.arange(len(actions)), actions]).sum())
    penalty = l2 * l2_penalty(model) if l2 else 0.0
    return nll + penalty, SequenceCache(features, actions, inner)


def sequence_gradients(model: ParserModel, cache: SequenceCache, l2: float = 0.0) -> dict[str, np.ndarray]:
    """Gradients of :func:`sequence_loss`, keyed like ``model.blocks()``."""
    if model.is_recurrent:
        grads, dX = lstm_bptt(cache.inner, cache.actions, model.params)
    else:
        grads, dX = ff_backward(cache.inner, cache.actions, model.params)
    grads = {**embedding_gradients(cache.features, dX, model.embeddings), **grads}
    if l2:
        for name, block in model.blocks().items():
            grads[name] += l2 * block
    return grads


def count_parameters(params: Params, embeddings: Optional[EmbeddingTables] = None,
                     include_embeddings: bool = False) -> int:
    total = sum(b.size for b in params.blocks().values())
    if include_embeddings:
        if embeddings is None:
            raise ValueError("embedding tables are required when include_embeddings is set")
        total += sum(b.size for b in embeddings.blocks().values())
    return total
