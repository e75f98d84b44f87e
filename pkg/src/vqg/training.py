"""Weighted maximum-likelihood training with caption-alignment instance weights.

Each (image, question) pair is paired with one caption drawn at random per epoch and
weighted by that caption's kernel-density posterior given the question. The weighted
negative log-likelihood of question and type is minimised with Adam.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alignment import SimilarityConfig, caption_posterior
from .corpus import (ImageRecord, QuestionType, Vocabulary, build_vocab, compute_idf,
                     idf_documents, load_embeddings)
from .metrics import coverage_report, precision_report, rouge_l
from .model import (DecodeConfig, VQGModel, caption_prior, fit_question_lm, generate,
                    init_params, joint_features, record_ids, teacher_forced_nll, type_logits)
from .numerics import AdamState, NumericError, Tensor, add, adam_step, cross_entropy
from .streams import substream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 64
    lr: float = 1e-3
    seed: int = 0
    alpha: float = 0.75
    hidden_size: int = 300
    discount: float = 0.75
    k_fixed: int = 1
    min_count: int = 1
    val_fraction: float = 0.1
    caption_draw: str = "uniform"  # or "prior"
    beta_sweep: tuple[float, ...] = ()
    embeddings_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.caption_draw not in ("uniform", "prior"):
            raise ValueError(f"caption_draw must be 'uniform' or 'prior', got {self.caption_draw!r}")


@dataclass
class TrainInstance:
    record_index: int
    question_index: int
    feature: np.ndarray
    caption: list[int]
    question: list[int]
    qtype: QuestionType
    caption_index: int
    weight: float


def split_validation(records: Sequence[ImageRecord], fraction: float):
    """Deterministic split by a hash of the image id."""
    if fraction <= 0:
        return list(records), []
    train, val = [], []
    for r in records:
        h = int.from_bytes(hashlib.sha1(r.image_id.encode("utf-8")).digest()[:4], "big")
        (val if h % 10000 < fraction * 10000 else train).append(r)
    return train, val


def compute_posteriors(records: Sequence[ImageRecord], config: SimilarityConfig) -> dict[tuple[int, int], np.ndarray]:
    """Caption posterior for every typed question of every captioned record."""
    post = {}
    for ri, r in enumerate(records):
        if not r.captions:
            continue
        caps = [c.words for c in r.captions]
        for qi, q in enumerate(r.questions):
            if q.qtype is not QuestionType.OTHER:
                post[(ri, qi)] = caption_posterior(q.words, caps, config)
    return post


def make_instances(records: Sequence[ImageRecord], vocab: Vocabulary, config: SimilarityConfig,
                   rng: np.random.Generator, posteriors: dict | None = None,
                   caption_draw: str = "uniform") -> list[TrainInstance]:
    """One instance per typed question, with a freshly drawn caption and its posterior weight."""
    if posteriors is None:
        posteriors = compute_posteriors(records, config)
    out = []
    for ri, r in enumerate(records):
        if not r.captions:
            continue
        caps = None
        for qi, q in enumerate(r.questions):
            if q.qtype is QuestionType.OTHER:
                continue
            n = len(r.captions)
            if caption_draw == "prior":
                cdf = np.cumsum(caption_prior([c.confidence for c in r.captions]))
                ci = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), n - 1)
            else:
                ci = int(rng.integers(n))
            if caps is None:
                caps = [vocab.encode(c.words) for c in r.captions]
            out.append(TrainInstance(ri, qi, r.feature, caps[ci], vocab.encode(q.words), q.qtype,
                                     ci, float(posteriors[(ri, qi)][ci])))
    return out


def loss(gen, sel, batch: Sequence[TrainInstance], k_fixed: int = 1) -> Tensor:
    """Mean over the batch of -weight * [log P(q | c, x, t) + log P(t | c)]. Weights are constants."""
    if not batch:
        raise ValueError("empty batch")
    coeffs = np.array([inst.weight for inst in batch]) / len(batch)
    feats = np.stack([inst.feature for inst in batch])
    caps = [inst.caption for inst in batch]
    joint = joint_features(gen, feats, caps)
    q_term = teacher_forced_nll(gen, joint, [inst.question for inst in batch], coeffs, k_fixed)
    t_term = cross_entropy(type_logits(sel, caps), [inst.qtype.index for inst in batch], coeffs)
    out = add(q_term, t_term)
    if not np.isfinite(out.item()):
        raise NumericError("loss is not finite")
    return out


def train_step(model: VQGModel, batch: Sequence[TrainInstance], adam: AdamState, lr: float,
               k_fixed: int = 1) -> tuple[float, AdamState]:
    params = model.parameters()
    for p in params.values():
        p.grad = None
    value = loss(model.gen, model.sel, batch, k_fixed)
    value.backward()
    grads = {n: p.grad for n, p in params.items() if p.grad is not None}
    new, adam = adam_step({n: p.data for n, p in params.items()}, grads, adam, lr=lr)
    for n, p in params.items():
        p.data = new[n]
        p.grad = None
    return value.item(), adam


@dataclass
class TrainResult:
    model: VQGModel
    adam: AdamState
    epoch: int
    history: list[dict] = field(default_factory=list)
    beta: float | None = None
    validation: list[ImageRecord] = field(default_factory=list)


@dataclass
class Corpus:
    """Everything derived from the training split before any parameter is touched."""

    train: list[ImageRecord]
    validation: list[ImageRecord]
    vocab: Vocabulary
    similarity: SimilarityConfig
    posteriors: dict
    initial_embedding: np.ndarray


def prepare(records: Sequence[ImageRecord], config: TrainConfig) -> Corpus:
    train, val = split_validation(records, config.val_fraction)
    if not any(r.questions and r.captions for r in train):
        raise ValueError("training split has no captioned records with questions")
    sentences = [q.words for r in train for q in r.questions] + [c.words for r in train for c in r.captions]
    vocab = build_vocab(sentences, config.min_count)
    emb = load_embeddings(config.embeddings_path, vocab, substream(config.seed, "init", "embedding"))
    idf = compute_idf(idf_documents(train))
    sim = SimilarityConfig(config.alpha, idf, emb)
    return Corpus(train, val, vocab, sim, compute_posteriors(train, sim), emb.vectors.copy())


def train(records: Sequence[ImageRecord], config: TrainConfig, log_path: str | None = None,
          resume: TrainResult | None = None) -> TrainResult:
    """Build vocabulary, embeddings, IDF and the bigram model from the training split, then
    run ``config.epochs`` epochs of Adam. With ``resume``, continue from its parameters,
    optimizer state and epoch counter."""
    corpus = prepare(records, config)
    vocab = corpus.vocab
    if resume is None:
        gen, sel = init_params(len(vocab), config.hidden_size, substream(config.seed, "init", "params"),
                               corpus.initial_embedding)
        lm = fit_question_lm([vocab.encode(q.words) for r in corpus.train for q in r.questions],
                             len(vocab), config.discount)
        model = VQGModel(vocab, gen, sel, lm)
        adam, start, history = AdamState(), 0, []
    else:
        if resume.model.vocab.itos != vocab.itos:
            raise ValueError("checkpoint vocabulary does not match the training data")
        model, adam, start, history = resume.model, resume.adam, resume.epoch, list(resume.history)

    sink = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start, config.epochs):
            t0 = time.perf_counter()
            rng = substream(config.seed, "data", epoch)
            instances = make_instances(corpus.train, vocab, corpus.similarity, rng,
                                       corpus.posteriors, config.caption_draw)
            order = rng.permutation(len(instances))
            losses, sizes = [], []
            for s in range(0, len(order), config.batch_size):
                batch = [instances[i] for i in order[s:s + config.batch_size]]
                value, adam = train_step(model, batch, adam, config.lr, config.k_fixed)
                losses.append(value)
                sizes.append(len(batch))
            mean = float(np.average(losses, weights=sizes))
            entry = {"epoch": epoch + 1, "mean_loss": mean, "wall_time": time.perf_counter() - t0}
            history.append(entry)
            log.info("epoch %d mean loss %.6f", epoch + 1, mean)
            if sink:
                sink.write(json.dumps(entry) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()

    result = TrainResult(model, adam, config.epochs, history, validation=corpus.validation)
    if config.beta_sweep and corpus.validation:
        result.beta = select_beta(model, corpus.validation, config.beta_sweep, config.k_fixed, config.seed)
    return result


def select_beta(model: VQGModel, validation: Sequence[ImageRecord], betas: Sequence[float],
                k_fixed: int = 1, seed: int = 0, n_questions: int = 3) -> float:
    """Fusion weight with the best mean of precision- and coverage-oriented ROUGE-L on validation."""
    best, best_score = None, -1.0
    for beta in betas:
        generated, references = [], []
        for r in validation:
            if not r.captions or not r.questions:
                continue
            caps, confs, _ = record_ids(model.vocab, r)
            cfg = DecodeConfig(beta=beta, k_fixed=k_fixed, seed=seed)
            qs = generate(model, r.feature, caps, confs, n_questions, cfg, substream(seed, "sampling", r.image_id))
            generated.append([model.vocab.decode(g.tokens) for g in qs])
            references.append([q.words for q in r.questions])
        if not generated:
            return betas[0]
        score = 0.5 * (precision_report(generated, references, rouge_l).corpus
                       + coverage_report(generated, references, rouge_l).corpus)
        log.info("beta %.3f validation ROUGE-L %.4f", beta, score)
        if score > best_score:
            best, best_score = beta, score
    return best
