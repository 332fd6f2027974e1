"""Attachment scores and labelled precision/recall by dependency length."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .treebank import Sentence

DEFAULT_BUCKETS: tuple[tuple[int, int], ...] = ((1, 1), (2, 2), (3, 6), (7, 49))


class AlignmentError(ValueError):
    pass


def parse_buckets(text: str) -> tuple[tuple[int, int], ...]:
    """``"1,2,3-6,7-49"`` -> ``((1, 1), (2, 2), (3, 6), (7, 49))``."""
    buckets = []
    for part in text.split(","):
        part = part.strip()
        lo, _, hi = part.partition("-")
        try:
            b = (int(lo), int(hi or lo))
        except ValueError:
            raise ValueError(f"bad bucket {part!r}") from None
        if b[0] < 1 or b[1] < b[0]:
            raise ValueError(f"bad bucket {part!r}")
        buckets.append(b)
    if not buckets:
        raise ValueError("no buckets given")
    for (_, hi), (lo, _) in zip(buckets, buckets[1:]):
        if lo <= hi:
            raise ValueError("buckets must be increasing and disjoint")
    return tuple(buckets)


def bucket_name(bucket: tuple[int, int]) -> str:
    lo, hi = bucket
    return str(lo) if lo == hi else f"{lo}-{hi}"


def _as_parse(pred, n: int) -> tuple[list[int], list[str]]:
    """Normalise a prediction (a Sentence or an iterable of (head, dep, label)) to lists."""
    if isinstance(pred, Sentence):
        return list(pred.heads), list(pred.labels)
    heads: list = [None] * n
    labels: list = [None] * n
    for h, d, l in pred:
        if not 1 <= d <= n:
            raise AlignmentError(f"arc to token {d} in a sentence of {n} tokens")
        heads[d - 1], labels[d - 1] = h, l
    return heads, labels


def _pairs(predicted: Sequence, gold: Sequence[Sentence]):
    if len(predicted) != len(gold):
        raise AlignmentError(f"{len(predicted)} predicted vs {len(gold)} gold sentences")
    for k, (pred, g) in enumerate(zip(predicted, gold), 1):
        n = len(g)
        if isinstance(pred, Sentence) and len(pred) != n:
            raise AlignmentError(f"sentence {k}: {len(pred)} predicted vs {n} gold tokens")
        heads, labels = _as_parse(pred, n)
        if any(h is None for h in heads):
            raise AlignmentError(f"sentence {k}: not every token has a predicted head")
        yield k, g, heads, labels


def attachment_scores(predicted: Sequence, gold: Sequence[Sentence],
                      exclude_pos: Optional[Iterable[str]] = None) -> tuple[float, float]:
    """Micro-averaged (UAS, LAS) over all scored tokens."""
    skip = set(exclude_pos or ())
    total = uas = las = 0
    for _, g, heads, labels in _pairs(predicted, gold):
        for tok, h, l in zip(g.tokens, heads, labels):
            if tok.pos in skip:
                continue
            total += 1
            if h == tok.head:
                uas += 1
                las += l == tok.label
    if total == 0:
        return float("nan"), float("nan")
    return uas / total, las / total


@dataclass
class BucketScore:
    bucket: tuple[int, int]
    predicted: int = 0
    predicted_correct: int = 0
    gold: int = 0
    gold_correct: int = 0

    @property
    def precision(self) -> Optional[float]:
        return self.predicted_correct / self.predicted if self.predicted else None

    @property
    def recall(self) -> Optional[float]:
        return self.gold_correct / self.gold if self.gold else None

    @property
    def name(self) -> str:
        return bucket_name(self.bucket)


def length_bucket_report(predicted: Sequence, gold: Sequence[Sentence],
                         buckets: Sequence[tuple[int, int]] = DEFAULT_BUCKETS,
                         exclude_pos: Optional[Iterable[str]] = None) -> list[BucketScore]:
    """Labelled precision (by predicted length) and recall (by gold length) per bucket.

    Arc length is ``|head - dependent|``; a root arc of token j has length j.
    A bucket with an empty denominator reports ``None`` for that score.
    """
    skip = set(exclude_pos or ())
    scores = [BucketScore(tuple(b)) for b in buckets]

    def find(length):
        for s in scores:
            if s.bucket[0] <= length <= s.bucket[1]:
                return s
        return None

    for _, g, heads, labels in _pairs(predicted, gold):
        for tok, h, l in zip(g.tokens, heads, labels):
            if tok.pos in skip:
                continue
            correct = h == tok.head and l == tok.label
            if (s := find(abs(h - tok.id))) is not None:
                s.predicted += 1
                s.predicted_correct += correct
            if (s := find(abs(tok.head - tok.id))) is not None:
                s.gold += 1
                s.gold_correct += correct
    return scores


@dataclass
class EvalReport:
    uas: float
    las: float
    buckets: list[BucketScore]
    n_tokens: int
    n_sentences: int
    # scored arcs whose gold length falls outside every bucket
    unbucketed_gold: int = 0
    unbucketed_predicted: int = 0
    notes: list[str] = field(default_factory=list)

    def table(self) -> str:
        """Aligned text rendering, percentages to one decimal."""
        def pct(v):
            return "   n/a" if v is None else f"{100 * v:6.1f}"

        rows = [f"UAS  {pct(self.uas)}", f"LAS  {pct(self.las)}",
                f"tokens {self.n_tokens}  sentences {self.n_sentences}", "",
                f"{'Dep. length':<12}{'Precision':>10}{'Recall':>10}{'#pred':>8}{'#gold':>8}"]
        for b in self.buckets:
            rows.append(f"{b.name:<12}{pct(b.precision):>10}{pct(b.recall):>10}"
                        f"{b.predicted:>8}{b.gold:>8}")
        rows.extend(f"note: {n}" for n in self.notes)
        return "\n".join(rows) + "\n"

    def key_values(self) -> str:
        """Machine-readable ``key<TAB>value`` lines at full precision."""
        def val(v):
            return "undefined" if v is None else repr(v)

        lines = [("uas", val(self.uas)), ("las", val(self.las)),
                 ("tokens", str(self.n_tokens)), ("sentences", str(self.n_sentences))]
        for b in self.buckets:
            lines += [(f"precision.{b.name}", val(b.precision)), (f"recall.{b.name}", val(b.recall)),
                      (f"predicted.{b.name}", str(b.predicted)),
                      (f"predicted_correct.{b.name}", str(b.predicted_correct)),
                      (f"gold.{b.name}", str(b.gold)),
                      (f"gold_correct.{b.name}", str(b.gold_correct))]
        lines += [("unbucketed_gold", str(self.unbucketed_gold)),
                  ("unbucketed_predicted", str(self.unbucketed_predicted))]
        return "".join(f"{k}\t{v}\n" for k, v in lines)


def evaluate(predicted: Sequence, gold: Sequence[Sentence],
             buckets: Sequence[tuple[int, int]] = DEFAULT_BUCKETS,
             exclude_pos: Optional[Iterable[str]] = None) -> EvalReport:
    skip = set(exclude_pos or ())
    uas, las = attachment_scores(predicted, gold, skip)
    scores = length_bucket_report(predicted, gold, buckets, skip)
    n_tokens = sum(1 for g in gold for t in g.tokens if t.pos not in skip)
    report = EvalReport(uas, las, scores, n_tokens, len(gold))
    report.unbucketed_gold = n_tokens - sum(b.gold for b in scores)
    report.unbucketed_predicted = n_tokens - sum(b.predicted for b in scores)
    report.notes.append("root arcs are measured from position 0 (root arc of token j has length j)")
    if skip:
        report.notes.append("excluded POS: " + ",".join(sorted(skip)))
    return report
