"""The 48-slot configuration feature template.

Word and POS slots (18 each), in order::

    s1 s2 s3 b1 b2 b3
    lc1(s1) rc1(s1) lc2(s1) rc2(s1) lc1(s2) rc1(s2) lc2(s2) rc2(s2)
    lc1(lc1(s1)) rc1(rc1(s1)) lc1(lc1(s2)) rc1(rc1(s2))

Label slots (12) are the arc labels of the twelve child positions, same order.
``lc`` children lie left of their head, ``rc`` children right of it; ``lc1`` is
the leftmost, ``rc1`` the rightmost. Missing positions are NIL.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .transitions import Configuration
from .treebank import LABEL_NIL, NIL, EncodedSentence

SLOT_ORDER_VERSION = 1
N_WORD_SLOTS = 18
N_POS_SLOTS = 18
N_LABEL_SLOTS = 12
N_SLOTS = N_WORD_SLOTS + N_POS_SLOTS + N_LABEL_SLOTS


class FeatureVector(NamedTuple):
    words: tuple[int, ...]
    pos: tuple[int, ...]
    labels: tuple[int, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.words + self.pos + self.labels, dtype=np.int64)


def _positions(config: Configuration) -> tuple[list[Optional[int]], list[Optional[int]], dict]:
    left: dict[int, list[int]] = {}
    right: dict[int, list[int]] = {}
    arc_label: dict[int, int] = {}
    for h, d, l in config.arcs:
        arc_label[d] = l
        (left if d < h else right).setdefault(h, []).append(d)
    for kids in left.values():
        kids.sort()
    for kids in right.values():
        kids.sort(reverse=True)

    def lc(i, k=1):
        if i is None:
            return None
        kids = left.get(i, ())
        return kids[k - 1] if len(kids) >= k else None

    def rc(i, k=1):
        if i is None:
            return None
        kids = right.get(i, ())
        return kids[k - 1] if len(kids) >= k else None

    stack, buffer = config.stack, config.buffer
    s = [stack[-k] if len(stack) >= k else None for k in (1, 2, 3)]
    b = [buffer[k] if len(buffer) > k else None for k in (0, 1, 2)]
    children: list[Optional[int]] = []
    for i in s[:2]:
        children += [lc(i, 1), rc(i, 1), lc(i, 2), rc(i, 2)]
    for i in s[:2]:
        children += [lc(lc(i)), rc(rc(i))]
    return s + b, children, arc_label


def extract_features(config: Configuration, sentence: EncodedSentence) -> FeatureVector:
    """Features read only the configuration and the arcs it has built."""
    top, children, arc_label = _positions(config)
    nodes = top + children
    words = tuple(NIL if p is None else int(sentence.words[p]) for p in nodes)
    pos = tuple(NIL if p is None else int(sentence.pos[p]) for p in nodes)
    labels = tuple(LABEL_NIL if p is None else arc_label[p] for p in children)
    return FeatureVector(words, pos, labels)


def feature_matrix(configs, sentence: EncodedSentence) -> np.ndarray:
    """Stack feature vectors of several configurations into a ``(T, 48)`` array."""
    return np.array([extract_features(c, sentence).as_array() for c in configs],
                    dtype=np.int64).reshape(-1, N_SLOTS)
