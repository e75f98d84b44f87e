"""Sentence-level BLEU-1..4, ROUGE-L, METEOR-lite, and the precision/coverage protocols.

All metric functions take token lists. The protocols take, per image, the list of
generated questions and the list of reference questions.
"""

from __future__ import annotations

import functools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import EmbeddingMatrix, QuestionType, extract_question_type

Sentence = Sequence[str]
Metric = Callable[[Sentence, Sentence], float]

ROUGE_BETA = 1.2
METEOR_ALPHA_WEIGHT = 9.0
METEOR_GAMMA = 0.5
METEOR_EXPONENT = 3.0
EMBED_MATCH_THRESHOLD = 0.8


def ngrams(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate: Sentence, references: Sequence[Sentence], n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram count) for one order."""
    cand = ngrams(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            max_ref[g] = max(max_ref[g], c)
    matched = sum(min(c, max_ref[g]) for g, c in cand.items())
    return matched, sum(cand.values())


def brevity_penalty(c: int, references: Sequence[Sentence]) -> float:
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    if c >= r:
        return 1.0
    return math.exp(1.0 - r / c)


def bleu_n(candidate: Sentence, references: Sequence[Sentence], n: int) -> float:
    """Geometric mean of modified precisions of orders 1..n times the brevity penalty.

    A zero precision is replaced by 1 / (2c). Orders longer than the candidate have no
    n-grams at all and are left out of the mean.
    """
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    if isinstance(references[0], str):
        references = [references]
    c = len(candidate)
    if c == 0:
        return 0.0
    logs = []
    for k in range(1, min(n, c) + 1):
        matched, total = modified_precision(candidate, references, k)
        p = matched / total if matched else 1.0 / (2 * c)
        logs.append(math.log(p))
    return brevity_penalty(c, references) * math.exp(sum(logs) / len(logs))


def lcs_length(a: Sentence, b: Sentence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sentence, reference: Sentence, beta: float = ROUGE_BETA) -> float:
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def _lookup(embeddings, word: str) -> np.ndarray | None:
    if embeddings is None:
        return None
    if isinstance(embeddings, EmbeddingMatrix):
        return embeddings.vector(word)
    return embeddings.get(word)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def meteor_alignment(candidate: Sentence, reference: Sentence, embeddings=None,
                     threshold: float = EMBED_MATCH_THRESHOLD) -> list[tuple[int, int]]:
    """Greedy one-to-one unigram alignment: exact matches first, then embedding matches.

    Within a stage each candidate word, left to right, prefers the reference position that
    extends the previous match into the same chunk, then the best/earliest free position.
    Returns (candidate index, reference index) pairs sorted by candidate index.
    """
    pairs: dict[int, int] = {}
    used: set[int] = set()

    def run(score: Callable[[int, int], float | None]):
        for i in range(len(candidate)):
            if i in pairs:
                continue
            options = []
            for j in range(len(reference)):
                if j in used:
                    continue
                s = score(i, j)
                if s is not None:
                    adjacent = pairs.get(i - 1) == j - 1
                    options.append((not adjacent, -s, j))
            if options:
                _, _, j = min(options)
                pairs[i] = j
                used.add(j)

    run(lambda i, j: 1.0 if candidate[i] == reference[j] else None)
    if embeddings is not None:
        def embed_score(i, j):
            a, b = _lookup(embeddings, candidate[i]), _lookup(embeddings, reference[j])
            if a is None or b is None:
                return None
            s = _cosine(a, b)
            return s if s >= threshold else None
        run(embed_score)
    return sorted(pairs.items())


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate: Sentence, reference: Sentence, embeddings=None,
                threshold: float = EMBED_MATCH_THRESHOLD) -> float:
    """F_mean * (1 - 0.5 * (chunks / matches) ** 3) with F_mean = 10PR / (R + 9P)."""
    alignment = meteor_alignment(candidate, reference, embeddings, threshold)
    m = len(alignment)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = (1 + METEOR_ALPHA_WEIGHT) * p * r / (r + METEOR_ALPHA_WEIGHT * p)
    penalty = METEOR_GAMMA * (count_chunks(alignment) / m) ** METEOR_EXPONENT
    return f_mean * (1.0 - penalty)


def _bleu_pair(candidate: Sentence, reference: Sentence, n: int) -> float:
    return bleu_n(candidate, [reference], n)


def metric_suite(embeddings=None) -> dict[str, Metric]:
    """The six pairwise metrics reported per orientation (picklable, for worker pools)."""
    return {
        "bleu1": functools.partial(_bleu_pair, n=1),
        "bleu2": functools.partial(_bleu_pair, n=2),
        "bleu3": functools.partial(_bleu_pair, n=3),
        "bleu4": functools.partial(_bleu_pair, n=4),
        "rouge_l": rouge_l,
        "meteor": functools.partial(meteor_lite, embeddings=embeddings),
    }


METRIC_NAMES = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor")


@dataclass
class ProtocolResult:
    per_image: list[float]
    corpus: float


def _best(candidate: Sentence, pool: Sequence[Sentence], metric: Metric) -> float:
    return max(metric(candidate, p) for p in pool)


def precision_image(generated: Sequence[Sentence], references: Sequence[Sentence], metric: Metric) -> float:
    """Mean over generated questions of the best score against any reference."""
    if not generated:
        return 0.0
    return float(np.mean([_best(g, references, metric) for g in generated]))


def coverage_image(generated: Sequence[Sentence], references: Sequence[Sentence], metric: Metric) -> float:
    """Mean over references of the best score any generated question reaches."""
    if not generated:
        return 0.0
    return float(np.mean([max(metric(g, r) for g in generated) for r in references]))


def _protocol(per_image_fn, generated, references, metric) -> ProtocolResult:
    if len(generated) != len(references):
        raise ValueError("generated and reference lists must cover the same images")
    values = [per_image_fn(g, r, metric) for g, r in zip(generated, references) if r]
    if not values:
        raise ValueError("no image has reference questions")
    return ProtocolResult(values, float(np.mean(values)))


def precision_report(generated: Sequence[Sequence[Sentence]], references: Sequence[Sequence[Sentence]],
                     metric: Metric) -> ProtocolResult:
    return _protocol(precision_image, generated, references, metric)


def coverage_report(generated: Sequence[Sequence[Sentence]], references: Sequence[Sequence[Sentence]],
                    metric: Metric) -> ProtocolResult:
    return _protocol(coverage_image, generated, references, metric)


@dataclass(frozen=True)
class TableRow:
    metric: str
    orientation: str  # "precision" or "coverage"
    n: int
    value: float


def pr_table(generated: Sequence[Sequence[Sentence]], references: Sequence[Sequence[Sentence]],
             metrics: Mapping[str, Metric], max_n: int) -> list[TableRow]:
    """Precision and coverage of the top-n generated questions per image, for n = 1..max_n.

    ``generated[i]`` must be ranked best first; images with fewer than n questions use
    all they have.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    rows = []
    for n in range(1, max_n + 1):
        top = [list(g[:n]) for g in generated]
        for name, metric in metrics.items():
            rows.append(TableRow(name, "precision", n, precision_report(top, references, metric).corpus))
            rows.append(TableRow(name, "coverage", n, coverage_report(top, references, metric).corpus))
    return rows


def type_distribution(questions: Sequence[Sentence | str]) -> dict[QuestionType, float]:
    """Normalised histogram over the six types plus OTHER; empty input gives an empty dict."""
    if not questions:
        return {}
    counts = Counter(extract_question_type(q) for q in questions)
    n = len(questions)
    return {t: counts.get(t, 0) / n for t in QuestionType}


def length_distribution(questions: Sequence[Sentence]) -> dict[int, float]:
    if not questions:
        return {}
    counts = Counter(len(q) for q in questions)
    n = len(questions)
    return {k: counts[k] / n for k in sorted(counts)}


def entropy(hist: Mapping | Sequence[float]) -> float:
    """Shannon entropy in nats."""
    values = hist.values() if isinstance(hist, Mapping) else hist
    return float(-sum(p * math.log(p) for p in values if p > 0))
