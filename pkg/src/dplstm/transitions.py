"""Arc-standard transition system and its static oracle.

Action ids: SHIFT is 0, LEFT_ARC with label-map index ``k`` (1..|L|) is ``k``,
RIGHT_ARC with label index ``k`` is ``|L| + k``; ``2|L| + 1`` actions in total.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .treebank import EncodedSentence, Sentence

ROOT_ID = 0


class IllegalTransitionError(ValueError):
    pass


class NonProjectiveError(ValueError):
    pass


class Kind(enum.IntEnum):
    SHIFT = 0
    LEFT_ARC = 1
    RIGHT_ARC = 2


class Transition(NamedTuple):
    kind: Kind
    label: Optional[int] = None

    def action_id(self, n_labels: int) -> int:
        if self.kind == Kind.SHIFT:
            return 0
        if self.label is None or not 1 <= self.label <= n_labels:
            raise ValueError(f"label index {self.label} outside 1..{n_labels}")
        return self.label if self.kind == Kind.LEFT_ARC else n_labels + self.label

    @classmethod
    def from_action(cls, action: int, n_labels: int) -> "Transition":
        if action == 0:
            return cls(Kind.SHIFT)
        if 1 <= action <= n_labels:
            return cls(Kind.LEFT_ARC, action)
        if n_labels < action <= 2 * n_labels:
            return cls(Kind.RIGHT_ARC, action - n_labels)
        raise ValueError(f"action id {action} outside 0..{2 * n_labels}")

    def __repr__(self) -> str:
        return "SHIFT" if self.kind == Kind.SHIFT else f"{self.kind.name}({self.label})"


SHIFT = Transition(Kind.SHIFT)


@dataclass(frozen=True)
class Configuration:
    stack: tuple[int, ...]
    buffer: tuple[int, ...]
    arcs: frozenset  # of (head, dependent, label)

    def __repr__(self) -> str:
        arcs = sorted(self.arcs, key=lambda a: (a[1], a[0]))
        return f"Configuration({list(self.stack)}, {list(self.buffer)}, {arcs})"


def initial_configuration(sentence) -> Configuration:
    n = len(sentence)
    if n < 1:
        raise ValueError("cannot parse an empty sentence")
    return Configuration((ROOT_ID,), tuple(range(1, n + 1)), frozenset())


def is_terminal(config: Configuration) -> bool:
    return not config.buffer and config.stack == (ROOT_ID,)


def legal_transitions(config: Configuration, n_actions: int) -> np.ndarray:
    n_labels = (n_actions - 1) // 2
    mask = np.zeros(n_actions, dtype=bool)
    if config.buffer:
        mask[0] = True
    if len(config.stack) >= 2:
        if config.stack[-2] != ROOT_ID:
            mask[1:n_labels + 1] = True
        mask[n_labels + 1:] = True
    return mask


def is_legal(config: Configuration, t: Transition) -> bool:
    if t.kind == Kind.SHIFT:
        return bool(config.buffer)
    if len(config.stack) < 2:
        return False
    return t.kind == Kind.RIGHT_ARC or config.stack[-2] != ROOT_ID


def apply_transition(config: Configuration, t: Transition) -> Configuration:
    if not is_legal(config, t):
        raise IllegalTransitionError(f"{t!r} is not legal in {config!r}")
    stack, buffer = config.stack, config.buffer
    if t.kind == Kind.SHIFT:
        return Configuration(stack + (buffer[0],), buffer[1:], config.arcs)
    s1, s2 = stack[-1], stack[-2]
    if t.kind == Kind.LEFT_ARC:
        return Configuration(stack[:-2] + (s1,), buffer, config.arcs | {(s1, s2, t.label)})
    return Configuration(stack[:-1], buffer, config.arcs | {(s2, s1, t.label)})


def oracle_transition(config: Configuration, gold: EncodedSentence) -> Transition:
    """Static arc-standard oracle: LEFT_ARC, then RIGHT_ARC, then SHIFT."""
    stack = config.stack
    if len(stack) >= 2:
        s1, s2 = stack[-1], stack[-2]
        if s2 != ROOT_ID and gold.heads[s2] == s1:
            return Transition(Kind.LEFT_ARC, int(gold.labels[s2]))
        if gold.heads[s1] == s2:
            pending = int(np.count_nonzero(gold.heads == s1))
            attached = sum(1 for h, _, _ in config.arcs if h == s1)
            if attached == pending:
                return Transition(Kind.RIGHT_ARC, int(gold.labels[s1]))
    if config.buffer:
        return SHIFT
    raise NonProjectiveError(f"oracle is stuck in {config!r}; the gold tree is not projective")


def derive_oracle_sequence(sentence: EncodedSentence) -> list[tuple[Configuration, Transition]]:
    config = initial_configuration(sentence)
    steps = []
    while not is_terminal(config):
        t = oracle_transition(config, sentence)
        steps.append((config, t))
        config = apply_transition(config, t)
    return steps


def is_projective(sentence) -> bool:
    """True iff no two arcs cross, the root arc counted with head position 0."""
    if isinstance(sentence, Sentence):
        heads: Sequence[int] = sentence.heads
    else:
        heads = list(sentence.heads[1:])
    spans = [(min(h, d), max(h, d)) for d, h in enumerate(heads, 1)]
    for i, (a, b) in enumerate(spans):
        for c, d in spans[i + 1:]:
            if a < c < b < d or c < a < d < b:
                return False
    return True


def arcs_to_heads(arcs, n: int) -> tuple[list[int], list[int]]:
    """Convert an arc set to per-token head and label-index lists."""
    heads, labels = [-1] * n, [0] * n
    for h, d, l in arcs:
        heads[d - 1], labels[d - 1] = h, l
    return heads, labels
