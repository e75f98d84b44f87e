"""Question/caption similarity and the kernel-density caption posterior used as instance weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EmbeddingMatrix, IdfTable, detokenize


@dataclass
class SimilarityConfig:
    """Interpolation weight plus the lexical resources the embedding measure reads."""

    alpha: float = 0.75
    idf: IdfTable | None = None
    embeddings: EmbeddingMatrix | None = None

    def __post_init__(self):
        # the endpoints are allowed as reductions to a single measure
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def char_trigrams(s: str) -> set[str]:
    if len(s) < 3:
        return {s}
    return {s[i:i + 3] for i in range(len(s) - 2)}


def sim_string(q: str, c: str) -> float:
    """Jaccard index of character trigram sets."""
    tq, tc = char_trigrams(q), char_trigrams(c)
    union = tq | tc
    if not union:
        return 1.0
    return len(tq & tc) / len(union)


def weighted_average(words: Sequence[str], idf: IdfTable, emb: EmbeddingMatrix) -> np.ndarray | None:
    vecs, weights = [], []
    for w in words:
        v = emb.vector(w)
        if v is None:
            continue
        vecs.append(v)
        weights.append(idf[w])
    if not vecs:
        return None
    weights = np.asarray(weights) / np.sum(weights)
    return np.asarray(vecs).T @ weights


def sim_embedding(q: Sequence[str], c: Sequence[str], idf: IdfTable, emb: EmbeddingMatrix) -> float:
    """Cosine of IDF-weighted embedding averages; 0 when either average vanishes."""
    a = weighted_average(q, idf, emb)
    b = weighted_average(c, idf, emb)
    if a is None or b is None:
        return 0.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def interpolate(s_string: float, s_embed: float, alpha: float) -> float:
    """alpha * string + (1 - alpha) * embedding, clamped below at zero."""
    return max(0.0, alpha * s_string + (1.0 - alpha) * s_embed)


def similarity(q: Sequence[str], c: Sequence[str], config: SimilarityConfig) -> float:
    s = sim_string(detokenize(q), detokenize(c))
    if config.alpha == 1.0 or config.embeddings is None or config.idf is None:
        e = 0.0
    else:
        e = sim_embedding(q, c, config.idf, config.embeddings)
    return interpolate(s, e, config.alpha)


def normalize_similarities(sims: Sequence[float]) -> np.ndarray:
    s = np.asarray(sims, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty caption set")
    total = s.sum()
    if total <= 0.0:
        return np.full(s.size, 1.0 / s.size)
    return s / total


def caption_posterior(q: Sequence[str], captions: Sequence[Sequence[str]], config: SimilarityConfig) -> np.ndarray:
    """P(c_k | q) = s(q, c_k) / sum_j s(q, c_j); uniform when every similarity is zero."""
    return normalize_similarities([similarity(q, c, config) for c in captions])
