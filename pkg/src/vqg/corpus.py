"""Tokenization, vocabulary, embeddings, IDF statistics and dataset records."""

from __future__ import annotations

import enum
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURE_DIM = 300
EMBED_DIM = 300

START, END, UNK = 0, 1, 2
RESERVED = ("<s>", "</s>", "<unk>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|'[a-z]+|[^\sa-z0-9]")


class DatasetError(ValueError):
    """Schema or format violation in an input file."""


class QuestionType(enum.Enum):
    WHAT = "what"
    WHEN = "when"
    WHERE = "where"
    WHO = "who"
    WHY = "why"
    HOW = "how"
    OTHER = "other"

    @property
    def keyword(self) -> str:
        if self is QuestionType.OTHER:
            raise ValueError("OTHER has no keyword")
        return self.value

    @property
    def index(self) -> int:
        return SAMPLEABLE_TYPES.index(self)


SAMPLEABLE_TYPES = tuple(t for t in QuestionType if t is not QuestionType.OTHER)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, split punctuation off, keep clitics like ``'s`` whole."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(words: Sequence[str]) -> str:
    return " ".join(words)


def extract_question_type(question: Sequence[str] | str) -> QuestionType:
    words = tokenize(question) if isinstance(question, str) else question
    if not words:
        return QuestionType.OTHER
    try:
        t = QuestionType(words[0])
    except ValueError:
        return QuestionType.OTHER
    return t


class Vocabulary:
    """Word <-> id map with START=0, END=1, UNK=2 reserved."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(RESERVED)}
        for w in words:
            if w not in self.stoi:
                self.stoi[w] = len(self.itos)
                self.itos.append(w)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word: str):
        return word in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK)

    def word(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def words(self) -> list[str]:
        """Non-reserved words in id order."""
        return self.itos[len(RESERVED):]


def build_vocab(corpus: Iterable[str | Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Words with frequency >= min_count, by descending frequency then lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for sent in corpus:
        counts.update(tokenize(sent) if isinstance(sent, str) else sent)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


@dataclass
class EmbeddingMatrix:
    """Word vectors as columns of a (300, K) matrix."""

    vectors: np.ndarray
    pretrained: np.ndarray
    vocab: Vocabulary

    @property
    def matched(self) -> int:
        return int(self.pretrained.sum())

    def vector(self, word: str) -> np.ndarray | None:
        i = self.vocab.stoi.get(word)
        return None if i is None else self.vectors[:, i]


def random_embeddings(vocab: Vocabulary, rng: np.random.Generator, scale: float = 0.08) -> EmbeddingMatrix:
    vectors = rng.uniform(-scale, scale, size=(EMBED_DIM, len(vocab)))
    return EmbeddingMatrix(vectors, np.zeros(len(vocab), dtype=bool), vocab)


def load_embeddings(path: str | Path | None, vocab: Vocabulary, rng: np.random.Generator) -> EmbeddingMatrix:
    """GloVe-style text vectors for in-vocabulary words; everything else random uniform(-0.08, 0.08).

    The random columns are drawn first, for the whole matrix, so the result does not
    depend on which words the file happens to cover.
    """
    emb = random_embeddings(vocab, rng)
    if path is None:
        return emb
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split(" ")
            if len(fields) != EMBED_DIM + 1:
                raise DatasetError(f"{path}:{lineno}: expected a word and {EMBED_DIM} values, got {len(fields) - 1} values")
            word = fields[0]
            try:
                values = np.array([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            idx = vocab.stoi.get(word)
            if idx is not None and idx >= len(RESERVED):
                emb.vectors[:, idx] = values
                emb.pretrained[idx] = True
    return emb


class IdfTable:
    """IDF(x) = |D| / df(x) as a raw ratio; unknown words get the largest tabled value."""

    def __init__(self, weights: dict[str, float], n_documents: int):
        self.weights = weights
        self.n_documents = n_documents
        self.fallback = max(weights.values()) if weights else 1.0

    def __getitem__(self, word: str) -> float:
        return self.weights.get(word, self.fallback)

    def __contains__(self, word: str):
        return word in self.weights

    def __len__(self):
        return len(self.weights)


def compute_idf(documents: Sequence[Sequence[str]]) -> IdfTable:
    if not documents:
        raise ValueError("compute_idf needs at least one document")
    df: Counter[str] = Counter()
    for doc in documents:
        df.update(set(doc))
    n = len(documents)
    return IdfTable({w: n / c for w, c in df.items()}, n)


@dataclass
class Caption:
    words: list[str]
    confidence: float

    @property
    def text(self) -> str:
        return detokenize(self.words)


@dataclass
class Question:
    words: list[str]
    qtype: QuestionType

    @property
    def text(self) -> str:
        return detokenize(self.words)


@dataclass
class ImageRecord:
    image_id: str
    feature: np.ndarray
    captions: list[Caption]
    questions: list[Question] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "feature": [float(v) for v in self.feature],
            "captions": [{"text": c.text, "confidence": float(c.confidence)} for c in self.captions],
            "questions": [{"text": q.text} for q in self.questions],
        }


def make_question(text: str) -> Question:
    words = tokenize(text)
    return Question(words, extract_question_type(words))


def _require(cond: bool, lineno: int, fieldname: str, msg: str):
    if not cond:
        raise DatasetError(f"line {lineno}: field {fieldname!r}: {msg}")


def parse_record(obj, lineno: int = 0) -> ImageRecord:
    _require(isinstance(obj, dict), lineno, "<record>", "expected an object")
    _require(isinstance(obj.get("image_id"), str), lineno, "image_id", "missing or not a string")
    feat = obj.get("feature")
    _require(isinstance(feat, list), lineno, "feature", "missing or not an array")
    _require(len(feat) == FEATURE_DIM, lineno, "feature", f"expected {FEATURE_DIM} numbers, got {len(feat)}")
    _require(all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in feat), lineno,
             "feature", "non-numeric entry")
    feature = np.array(feat, dtype=np.float64)
    _require(bool(np.all(np.isfinite(feature))), lineno, "feature", "non-finite entry")

    caps = obj.get("captions", [])
    _require(isinstance(caps, list), lineno, "captions", "not an array")
    captions = []
    for c in caps:
        _require(isinstance(c, dict) and isinstance(c.get("text"), str), lineno, "captions", "entry needs a text string")
        conf = c.get("confidence")
        _require(isinstance(conf, (int, float)) and not isinstance(conf, bool) and math.isfinite(conf),
                 lineno, "captions", "confidence must be a finite number")
        words = tokenize(c["text"])
        _require(bool(words), lineno, "captions", "empty caption text")
        captions.append(Caption(words, float(conf)))

    qs = obj.get("questions", [])
    _require(isinstance(qs, list), lineno, "questions", "not an array")
    questions = []
    for q in qs:
        _require(isinstance(q, dict) and isinstance(q.get("text"), str), lineno, "questions",
                 "entry needs a text string")
        question = make_question(q["text"])
        _require(bool(question.words), lineno, "questions", "empty question text")
        questions.append(question)
    return ImageRecord(obj["image_id"], feature, captions, questions)


def load_dataset(path: str | Path) -> list[ImageRecord]:
    """Read JSONL image records; a ``{"meta": ...}`` provenance line is skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if isinstance(obj, dict) and set(obj) == {"meta"}:
                continue
            records.append(parse_record(obj, lineno))
    return records


def write_dataset(records: Sequence[ImageRecord], path: str | Path, meta: dict | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def idf_documents(records: Sequence[ImageRecord]) -> list[list[str]]:
    """One document per question and per caption."""
    docs = []
    for r in records:
        docs.extend(q.words for q in r.questions)
        docs.extend(c.words for c in r.captions)
    return docs
