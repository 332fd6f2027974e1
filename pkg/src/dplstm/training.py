"""Training with dev-set early stopping, and greedy decoding."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .features import extract_features, feature_matrix
from .metrics import attachment_scores
from .models import ARCHITECTURES, LSTMState, ParserModel, embed, ff_forward, \
    load_pretrained_words, lstm_step, sample_masks, sequence_gradients, sequence_loss
from .nn import AdadeltaState, adadelta_step
from .transitions import (Transition, apply_transition, derive_oracle_sequence,
                          initial_configuration, is_projective, is_terminal, legal_transitions)
from .treebank import EncodedSentence, Sentence, Vocabulary, build_vocabulary, encode_sentence

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    arch: str = "lstm"
    hidden: int = 200
    embed_dim: int = 50
    max_epochs: int = 400
    patience: int = 30
    l2: float = 0.0
    dropout_eh: float = 0.0
    dropout_ho: float = 0.0
    seed: int = 0
    min_word_freq: int = 1
    # "sentence": one update per training sentence; "step": one per transition (feedforward only)
    update_unit: str = "sentence"
    peephole: str = "diagonal"
    rho: float = 0.95
    eps: float = 1e-6
    # optional "word v1 .. vd" text file copied into matching word rows
    pretrained: str = ""

    def validate(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.hidden < 1 or self.embed_dim < 1:
            raise ValueError("hidden and embed_dim must be >= 1")
        for name in ("dropout_eh", "dropout_ho"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.update_unit not in ("sentence", "step"):
            raise ValueError("update_unit must be 'sentence' or 'step'")
        if self.update_unit == "step" and self.arch == "lstm":
            raise ValueError("per-step updates are only defined for feedforward models")
        if self.peephole not in ("diagonal", "full"):
            raise ValueError("peephole must be 'diagonal' or 'full'")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainingConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in types:
                continue
            kind = {"int": int, "float": float, "str": str}[types[k]]
            kwargs[k] = kind(v)
        return cls(**kwargs)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_uas: float
    dev_las: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss!r}\t{self.dev_uas!r}\t{self.dev_las!r}"


@dataclass
class TrainResult:
    model: ParserModel
    history: list[EpochRecord]
    best_epoch: int
    best_dev_uas: float
    skipped_nonprojective: int
    vocab: Vocabulary = field(repr=False, default=None)

    def history_tsv(self) -> str:
        return "".join(r.tsv() + "\n" for r in self.history)


class EarlyStopping:
    """Track the best score; ``update`` returns True once ``patience`` epochs pass without gain."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0

    def update(self, epoch: int, score: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if score > self.best_score:
            self.best_score, self.best_epoch = score, epoch
            return True, False
        return False, epoch - self.best_epoch >= self.patience


@dataclass
class OracleExample:
    features: np.ndarray
    actions: np.ndarray


def oracle_example(encoded: EncodedSentence, vocab: Vocabulary) -> OracleExample:
    """Teacher-forcing data: features of each gold configuration and the oracle action."""
    steps = derive_oracle_sequence(encoded)
    feats = feature_matrix([c for c, _ in steps], encoded)
    actions = np.array([t.action_id(vocab.n_labels) for _, t in steps], dtype=np.int64)
    return OracleExample(feats, actions)


def split_projective(sentences: Sequence[Sentence]) -> tuple[list[Sentence], int]:
    kept = [s for s in sentences if is_projective(s)]
    return kept, len(sentences) - len(kept)


def greedy_parse(sentence: EncodedSentence, model: ParserModel) -> frozenset:
    """Pick the most probable legal transition until terminal (ties: lowest action id)."""
    A = model.n_actions
    n_labels = (A - 1) // 2
    config = initial_configuration(sentence)
    state = LSTMState.zeros(model.hidden) if model.is_recurrent else None
    while not is_terminal(config):
        x = embed(extract_features(config, sentence), model.embeddings)
        if model.is_recurrent:
            y, state, _ = lstm_step(x, state, model.params)
        else:
            y, _ = ff_forward(x, model.params)
        scores = np.where(legal_transitions(config, A), y, -np.inf)
        action = int(np.argmax(scores))
        config = apply_transition(config, Transition.from_action(action, n_labels))
    return config.arcs


def parse_sentences(model: ParserModel, sentences: Sequence[Sentence]) -> list[Sentence]:
    """Return copies of ``sentences`` with predicted heads and labels."""
    out = []
    for sent in sentences:
        enc = encode_sentence(sent, model.vocab, training=False)
        heads, labels = [0] * len(sent), [""] * len(sent)
        for h, d, l in greedy_parse(enc, model):
            heads[d - 1], labels[d - 1] = h, model.vocab.labels[l]
        out.append(sent.with_parse(heads, labels))
    return out


def evaluate_model(model: ParserModel, sentences: Sequence[Sentence]) -> tuple[float, float]:
    return attachment_scores(parse_sentences(model, sentences), sentences)


def train(train_sentences: Sequence[Sentence], dev_sentences: Sequence[Sentence],
          config: TrainingConfig,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train a parser and return the parameters with the best dev UAS.

    Non-projective training sentences are skipped (and counted). The
    vocabulary comes from the retained training sentences only.
    """
    config.validate()
    if not train_sentences:
        raise ValueError("empty training set")
    if not dev_sentences:
        raise ValueError("empty development set")
    kept, skipped = split_projective(train_sentences)
    if not kept:
        raise ValueError("no projective sentences in the training set")
    if skipped:
        logger.info("skipped %d non-projective training sentences", skipped)

    rng = np.random.default_rng(config.seed)
    vocab = build_vocabulary(kept, config.min_word_freq)
    examples = [oracle_example(encode_sentence(s, vocab), vocab) for s in kept]
    model = ParserModel.initialize(config.arch, vocab, config.embed_dim, config.hidden, rng,
                                   config.dropout_eh, config.dropout_ho, config.peephole)
    if config.pretrained:
        hits = load_pretrained_words(model.embeddings, vocab, config.pretrained)
        logger.info("loaded %d pre-trained word vectors", hits)
    blocks = model.blocks()
    states = {name: AdadeltaState.like(b, config.rho, config.eps) for name, b in blocks.items()}

    stopper = EarlyStopping(config.patience)
    best = model.copy()
    history: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for k in rng.permutation(len(examples)):
            ex = examples[k]
            if config.update_unit == "step":
                units = [(ex.features[t:t + 1], ex.actions[t:t + 1]) for t in range(len(ex.actions))]
            else:
                units = [(ex.features, ex.actions)]
            for feats, acts in units:
                masks = sample_masks(model, len(acts), rng)
                loss, cache = sequence_loss(model, feats, acts, masks, config.l2)
                grads = sequence_gradients(model, cache, config.l2)
                for name, block in blocks.items():
                    adadelta_step(block, grads[name], states[name])
                total += loss
        uas, las = evaluate_model(model, dev_sentences)
        record = EpochRecord(epoch, total, uas, las)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        improved, stop = stopper.update(epoch, uas)
        if improved:
            best = model.copy()
        if stop:
            break
    return TrainResult(best, history, stopper.best_epoch, float(stopper.best_score), skipped, vocab)
