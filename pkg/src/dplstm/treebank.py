"""CoNLL treebank reading/writing, vocabularies and index encoding."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np

UNK, ROOT, NIL = 0, 1, 2
LABEL_NIL = 0
UNK_STR, ROOT_STR, NIL_STR = "<UNK>", "<ROOT>", "<NIL>"

DEFAULT_POS_COLUMN = 5


class ConllFormatError(ValueError):
    """A line of the input does not follow the 10-column layout."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TreeStructureError(ValueError):
    """A sentence's head column does not describe a single-rooted tree."""


class VocabularyError(KeyError):
    pass


@dataclass(frozen=True)
class Token:
    id: int
    form: str
    pos: str
    head: Optional[int]
    label: Optional[str]
    # Original 10 columns, kept so that writers can pass them through untouched.
    columns: Optional[tuple[str, ...]] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    comments: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def heads(self) -> list[Optional[int]]:
        return [t.head for t in self.tokens]

    @property
    def labels(self) -> list[Optional[str]]:
        return [t.label for t in self.tokens]

    @property
    def has_heads(self) -> bool:
        return all(t.head is not None for t in self.tokens)

    def with_parse(self, heads: Sequence[int], labels: Sequence[str]) -> "Sentence":
        """Return a copy whose HEAD/DEPREL are replaced."""
        tokens = []
        for tok, h, l in zip(self.tokens, heads, labels, strict=True):
            cols = tok.columns
            if cols is not None:
                cols = cols[:6] + (str(h), l) + cols[8:]
            tokens.append(Token(tok.id, tok.form, tok.pos, h, l, cols))
        return Sentence(tuple(tokens), self.comments)


def check_tree(heads: Sequence[int]) -> Optional[str]:
    """Return a description of the first tree violation, or None for a valid tree.

    ``heads[i]`` is the head of token ``i + 1``; 0 is the artificial root.
    """
    n = len(heads)
    roots = [i + 1 for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        return f"expected exactly one root token, found {len(roots)}"
    for i, h in enumerate(heads, 1):
        if h == i:
            return f"token {i} is its own head"
        if not 0 <= h <= n:
            return f"token {i} has out-of-range head {h}"
    # every token must reach 0 without revisiting a node
    state = [0] * (n + 1)  # 0 unseen, 1 on current path, 2 known to reach root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            return f"head cycle through token {node}"
        for p in path:
            state[p] = 2
    return None


def _read_text(source: Union[str, TextIO]) -> str:
    return source if isinstance(source, str) else source.read()


def parse_conll(
    source: Union[str, TextIO],
    pos_column: int = DEFAULT_POS_COLUMN,
    require_heads: bool = True,
) -> list[Sentence]:
    """Parse a CoNLL(-U/-X) treebank.

    Comment lines, multiword ranges (``3-4``) and empty nodes (``5.1``) are
    skipped. ``pos_column`` is 1-based (4 = coarse, 5 = fine-grained tags).
    With ``require_heads=False`` an underscore head column is accepted and
    stored as ``None``; tree checks then apply only to fully headed sentences.
    """
    if pos_column not in (4, 5):
        raise ValueError(f"pos_column must be 4 or 5, got {pos_column}")
    text = _read_text(source)
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    comments: list[str] = []
    first_line = 0

    def flush():
        nonlocal tokens, comments
        if tokens:
            sent = Sentence(tuple(tokens), tuple(comments))
            if sent.has_heads:
                problem = check_tree(sent.heads)
                if problem is not None:
                    raise TreeStructureError(
                        f"sentence {len(sentences) + 1} (starting at line {first_line}): {problem}"
                    )
            sentences.append(sent)
        tokens, comments = [], []

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            if not tokens:
                comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConllFormatError(lineno, f"expected 10 tab-separated columns, found {len(cols)}")
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            ident = int(tid)
        except ValueError:
            raise ConllFormatError(lineno, f"non-integer token id {tid!r}") from None
        if ident != len(tokens) + 1:
            raise ConllFormatError(lineno, f"token id {ident} out of sequence")
        if cols[6] == "_" and not require_heads:
            head, label = None, (None if cols[7] == "_" else cols[7])
        else:
            try:
                head = int(cols[6])
            except ValueError:
                raise ConllFormatError(lineno, f"non-integer head {cols[6]!r}") from None
            if head < 0:
                raise ConllFormatError(lineno, f"negative head {head}")
            label = cols[7]
        if not tokens:
            first_line = lineno
        tokens.append(Token(ident, cols[1], cols[pos_column - 1], head, label, tuple(cols)))
    flush()
    return sentences


def read_conll(path, pos_column: int = DEFAULT_POS_COLUMN, require_heads: bool = True) -> list[Sentence]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_conll(fh, pos_column=pos_column, require_heads=require_heads)


def format_conll(sentences: Iterable[Sentence], pos_column: int = DEFAULT_POS_COLUMN,
                 keep_columns: bool = True) -> str:
    """Serialize sentences; columns not carried by :class:`Token` are written as ``_``."""
    out: list[str] = []
    for sent in sentences:
        out.extend(sent.comments)
        for tok in sent.tokens:
            head = "_" if tok.head is None else str(tok.head)
            label = "_" if tok.label is None else tok.label
            if keep_columns and tok.columns is not None:
                cols = list(tok.columns)
            else:
                cols = ["_"] * 10
                cols[0], cols[1] = str(tok.id), tok.form
                cols[pos_column - 1] = tok.pos
            cols[6], cols[7] = head, label
            out.append("\t".join(cols))
        out.append("")
    return "".join(line + "\n" for line in out)


def write_conll(path, sentences: Iterable[Sentence], **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_conll(sentences, **kwargs))


class Vocabulary:
    """String/index maps for words, POS tags and dependency labels.

    Word and POS maps reserve UNK=0, ROOT=1, NIL=2; the label map reserves NIL=0.
    """

    def __init__(self, words: Sequence[str], pos: Sequence[str], labels: Sequence[str]):
        self.words = [UNK_STR, ROOT_STR, NIL_STR] + list(words)
        self.pos = [UNK_STR, ROOT_STR, NIL_STR] + list(pos)
        self.labels = [NIL_STR] + list(labels)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.pos_index = {p: i for i, p in enumerate(self.pos)}
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        if not (len(self.word_index) == len(self.words) and len(self.pos_index) == len(self.pos)
                and len(self.label_index) == len(self.labels)):
            raise ValueError("duplicate or reserved entries in vocabulary")

    def word_id(self, word: str) -> int:
        return self.word_index.get(word, UNK)

    def pos_id(self, tag: str) -> int:
        return self.pos_index.get(tag, UNK)

    def label_id(self, label: str) -> int:
        try:
            idx = self.label_index[label]
        except KeyError:
            raise VocabularyError(f"unknown dependency label {label!r}") from None
        if idx == LABEL_NIL:
            raise VocabularyError("the NIL label cannot be used as a dependency label")
        return idx

    @property
    def n_labels(self) -> int:
        """Number of real (non-NIL) dependency labels."""
        return len(self.labels) - 1

    @property
    def n_actions(self) -> int:
        return 2 * self.n_labels + 1

    def sizes(self) -> tuple[int, int, int]:
        return len(self.words), len(self.pos), len(self.labels)

    def digest(self) -> str:
        h = hashlib.sha256()
        for table in (self.words, self.pos, self.labels):
            h.update("\n".join(table).encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        return (isinstance(other, Vocabulary) and self.words == other.words
                and self.pos == other.pos and self.labels == other.labels)

    def __repr__(self) -> str:
        w, p, l = self.sizes()
        return f"Vocabulary(words={w}, pos={p}, labels={l})"


def build_vocabulary(sentences: Sequence[Sentence], min_word_freq: int = 1) -> Vocabulary:
    if min_word_freq < 1:
        raise ValueError("min_word_freq must be >= 1")
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty treebank")
    words: Counter = Counter()
    tags, labels = set(), set()
    for sent in sentences:
        for tok in sent.tokens:
            words[tok.form] += 1
            tags.add(tok.pos)
            if tok.label is not None:
                labels.add(tok.label)
    reserved = {UNK_STR, ROOT_STR, NIL_STR}
    kept = sorted((w for w, c in words.items() if c >= min_word_freq and w not in reserved),
                  key=lambda w: (-words[w], w))
    return Vocabulary(kept, sorted(tags - reserved), sorted(labels - {NIL_STR}))


@dataclass(frozen=True)
class EncodedSentence:
    """Index arrays of length n+1; position 0 is the artificial root.

    ``heads[0]`` is -1 and ``labels[0]`` is NIL. Unknown heads are -1.
    """

    words: np.ndarray
    pos: np.ndarray
    heads: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.words) - 1


def encode_sentence(sentence: Sentence, vocab: Vocabulary, training: bool = True) -> EncodedSentence:
    """Map strings to indices.

    Unseen words and tags become UNK. At training time an unseen label is an
    error; otherwise it is encoded as NIL.
    """
    n = len(sentence)
    words = np.empty(n + 1, dtype=np.int64)
    pos = np.empty(n + 1, dtype=np.int64)
    heads = np.full(n + 1, -1, dtype=np.int64)
    labels = np.zeros(n + 1, dtype=np.int64)
    words[0], pos[0] = ROOT, ROOT
    for i, tok in enumerate(sentence.tokens, 1):
        words[i] = vocab.word_id(tok.form)
        pos[i] = vocab.pos_id(tok.pos)
        if tok.head is not None:
            heads[i] = tok.head
        elif training:
            raise ValueError(f"token {i} has no gold head")
        if tok.label is None:
            if training:
                raise ValueError(f"token {i} has no gold label")
        elif training:
            labels[i] = vocab.label_id(tok.label)
        else:
            labels[i] = vocab.label_index.get(tok.label, LABEL_NIL)
    return EncodedSentence(words, pos, heads, labels)


def truncate_tokens(sentences: Sequence[Sentence], max_tokens: int) -> list[Sentence]:
    """Leading sentences whose running token total stays within ``max_tokens``."""
    out, total = [], 0
    for sent in sentences:
        if total + len(sent) > max_tokens:
            break
        out.append(sent)
        total += len(sent)
    return out
