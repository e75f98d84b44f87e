"""Interpolated Kneser-Ney bigram language model.

    P(w | v) = max(c(v, w) - d, 0) / c(v) + lambda(v) * P_cont(w)
    lambda(v) = d * N1+(v .) / c(v)
    P_cont(w) = N1+(. w) / N1+(. .)

``c(v)`` is the number of bigram tokens with context ``v``. Contexts never seen fall
back to ``P_cont`` alone. Words that never continue a bigram get a 1e-10/K floor in
``P_cont`` (then renormalised) so fused decoding never sees an exact zero.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

FLOOR = 1e-10


@dataclass
class BigramStats:
    unigrams: Counter
    bigrams: Counter
    discount: float = 0.75
    successors: dict = field(default_factory=dict)     # v -> N1+(v .)
    predecessors: dict = field(default_factory=dict)   # w -> N1+(. w)
    context_totals: dict = field(default_factory=dict)  # v -> c(v)

    @property
    def bigram_types(self) -> int:
        return len(self.bigrams)


def with_markers(sentence: Sequence[Hashable], start: Hashable, end: Hashable) -> list:
    return [start, *sentence, end]


def count_bigrams(corpus: Iterable[Sequence[Hashable]], d: float = 0.75) -> BigramStats:
    """Exact adjacent-pair counts. Sentences should already carry START/END markers."""
    uni: Counter = Counter()
    bi: Counter = Counter()
    for sent in corpus:
        uni.update(sent)
        bi.update(zip(sent[:-1], sent[1:]))
    return stats_from_counts(bi, d, uni)


def stats_from_counts(bigrams: Counter, d: float = 0.75, unigrams: Counter | None = None) -> BigramStats:
    """Derive continuation and context statistics from raw bigram counts."""
    if not 0.0 < d < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {d}")
    bi = Counter(bigrams)
    uni = Counter(unigrams) if unigrams is not None else Counter()
    succ: Counter = Counter()
    pred: Counter = Counter()
    ctx: Counter = Counter()
    for (v, w), c in bi.items():
        succ[v] += 1
        pred[w] += 1
        ctx[v] += c
    return BigramStats(uni, bi, d, dict(succ), dict(pred), dict(ctx))


class KneserNeyModel:
    """Smoothed bigram probabilities over a fixed word list (default: every word seen)."""

    def __init__(self, stats: BigramStats, vocabulary: Sequence[Hashable] | None = None):
        self.stats = stats
        if vocabulary is None:
            vocabulary = sorted(set(stats.unigrams), key=repr)
        self.vocabulary = list(vocabulary)
        self.index = {w: i for i, w in enumerate(self.vocabulary)}
        K = len(self.vocabulary)
        n_types = stats.bigram_types
        cont = np.zeros(K)
        if n_types:
            for w, n in stats.predecessors.items():
                if w in self.index:
                    cont[self.index[w]] = n / n_types
        self.continuation = (cont + FLOOR / K) / (cont.sum() + FLOOR) if K else cont
        self._following: dict = defaultdict(list)
        for (v, w), c in stats.bigrams.items():
            if w in self.index:
                self._following[v].append((self.index[w], c))
        self._rows: dict = {}

    @classmethod
    def fit(cls, sentences: Iterable[Sequence[Hashable]], d: float = 0.75,
            vocabulary: Sequence[Hashable] | None = None) -> "KneserNeyModel":
        return cls(count_bigrams(sentences, d), vocabulary)

    def p_continuation(self, w) -> float:
        i = self.index.get(w)
        return 0.0 if i is None else float(self.continuation[i])

    def lam(self, v) -> float:
        total = self.stats.context_totals.get(v, 0)
        if total == 0:
            return 1.0
        return self.stats.discount * self.stats.successors[v] / total

    def distribution(self, v) -> np.ndarray:
        """P(. | v) over ``self.vocabulary``."""
        row = self._rows.get(v)
        if row is None:
            total = self.stats.context_totals.get(v, 0)
            row = self.lam(v) * self.continuation
            if total:
                row = row.copy()
                d = self.stats.discount
                for i, c in self._following.get(v, ()):
                    row[i] += max(c - d, 0.0) / total
            self._rows[v] = row
        return row

    def prob(self, v, w) -> float:
        i = self.index.get(w)
        return 0.0 if i is None else float(self.distribution(v)[i])

    def sequence_log_prob(self, sentence: Sequence[Hashable]) -> float:
        if not sentence:
            raise ValueError("empty sentence")
        logp = _safe_log(self.p_continuation(sentence[0]))
        for v, w in zip(sentence[:-1], sentence[1:]):
            logp += _safe_log(self.prob(v, w))
        return logp

    def dump_counts(self) -> str:
        """Plain-text bigram counts, one ``w_prev w count`` line each."""
        lines = [f"{v} {w} {c}" for (v, w), c in sorted(self.stats.bigrams.items(), key=lambda kv: (repr(kv[0][0]), repr(kv[0][1])))]
        return "\n".join(lines) + ("\n" if lines else "")


def kn_prob(model: KneserNeyModel, w_prev, w) -> float:
    return model.prob(w_prev, w)


def sequence_log_prob(model: KneserNeyModel, sentence: Sequence[Hashable]) -> float:
    return model.sequence_log_prob(sentence)


def _safe_log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf
