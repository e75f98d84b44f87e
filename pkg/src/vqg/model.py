"""Caption prior, question-type selector, image-first caption encoder, correlation layer,
LSTM decoder with Kneser-Ney fusion, and type-constrained beam search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import (EMBED_DIM, END, FEATURE_DIM, SAMPLEABLE_TYPES, START, ImageRecord,
                     QuestionType, Vocabulary)
from .ngram import KneserNeyModel
from .numerics import (LstmParams, LstmState, ShapeError, Tensor, add, add_bias, concat,
                       cross_entropy, embedding_lookup, log_softmax, lstm_step, matmul,
                       no_grad, prelu, reshape, softmax, transpose, where_rows)

N_TYPES = len(SAMPLEABLE_TYPES)
INIT_SCALE = 0.08
FORGET_BIAS = 0.0


@dataclass
class GeneratorParams:
    embedding: Tensor          # (300, K), shared with the selector
    encoder: LstmParams        # input 300
    corr_weight: Tensor        # (300, H + 300)
    corr_bias: Tensor          # (300,)
    corr_slope: Tensor         # (1,)
    decoder: LstmParams        # input 300
    out_weight: Tensor         # (H, K)
    out_bias: Tensor           # (K,)

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[1]


@dataclass
class SelectorParams:
    embedding: Tensor
    lstm: LstmParams
    out_weight: Tensor         # (H, 6)
    out_bias: Tensor           # (6,)


def _uniform(rng, shape, name):
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), True, name)


def init_params(vocab_size: int, hidden_size: int, rng: np.random.Generator,
                embedding: np.ndarray | None = None) -> tuple[GeneratorParams, SelectorParams]:
    """Uniform(-0.08, 0.08) initialisation; PReLU slope starts at 0.25."""
    H, K = hidden_size, vocab_size
    if embedding is None:
        embedding = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(EMBED_DIM, K))
    if embedding.shape != (EMBED_DIM, K):
        raise ShapeError(f"embedding must be ({EMBED_DIM}, {K}), got {embedding.shape}")
    E = Tensor(embedding.copy(), True, "embedding")
    gen = GeneratorParams(
        embedding=E,
        encoder=LstmParams.init(EMBED_DIM, H, rng, "encoder", forget_bias=FORGET_BIAS),
        corr_weight=_uniform(rng, (FEATURE_DIM, H + FEATURE_DIM), "corr.weight"),
        corr_bias=_uniform(rng, (FEATURE_DIM,), "corr.bias"),
        corr_slope=Tensor(np.array([0.25]), True, "corr.slope"),
        decoder=LstmParams.init(FEATURE_DIM, H, rng, "decoder", forget_bias=FORGET_BIAS),
        out_weight=_uniform(rng, (H, K), "out.weight"),
        out_bias=_uniform(rng, (K,), "out.bias"),
    )
    sel = SelectorParams(
        embedding=E,
        lstm=LstmParams.init(EMBED_DIM, H, rng, "selector", forget_bias=FORGET_BIAS),
        out_weight=_uniform(rng, (H, N_TYPES), "selector.out.weight"),
        out_bias=_uniform(rng, (N_TYPES,), "selector.out.bias"),
    )
    return gen, sel


def named_parameters(gen: GeneratorParams, sel: SelectorParams) -> dict[str, Tensor]:
    tensors = [gen.embedding, gen.encoder.weight, gen.encoder.bias, gen.corr_weight,
               gen.corr_bias, gen.corr_slope, gen.decoder.weight, gen.decoder.bias,
               gen.out_weight, gen.out_bias, sel.lstm.weight, sel.lstm.bias,
               sel.out_weight, sel.out_bias]
    return {t.name: t for t in tensors}


@dataclass
class VQGModel:
    vocab: Vocabulary
    gen: GeneratorParams
    sel: SelectorParams
    lm: KneserNeyModel

    def parameters(self) -> dict[str, Tensor]:
        return named_parameters(self.gen, self.sel)


def fit_question_lm(questions: Sequence[Sequence[int]], vocab_size: int, d: float = 0.75) -> KneserNeyModel:
    """Bigram model over token ids, estimated from questions wrapped in START/END."""
    return KneserNeyModel.fit([[START, *q, END] for q in questions], d, vocabulary=list(range(vocab_size)))


# -- caption prior and type selector ----------------------------------------


def caption_prior(confidences: Sequence[float]) -> np.ndarray:
    """Softmax over region confidences."""
    o = np.asarray(confidences, dtype=np.float64)
    if o.size == 0:
        raise ValueError("empty caption set")
    e = np.exp(o - o.max())
    return e / e.sum()


def _masked_lstm(params: LstmParams, embedding: Tensor, seqs: Sequence[Sequence[int]],
                 state: LstmState) -> LstmState:
    """Run over right-padded id sequences; each row keeps the state after its own last token."""
    lengths = np.array([len(s) for s in seqs])
    for j in range(int(lengths.max(initial=0))):
        ids = [s[j] if j < len(s) else END for s in seqs]
        new = lstm_step(params, embedding_lookup(embedding, ids), state)
        active = lengths > j
        if active.all():
            state = new
        else:
            state = LstmState(where_rows(active, new.hidden, state.hidden),
                              where_rows(active, new.memory, state.memory))
    return state


def type_logits(sel: SelectorParams, captions: Sequence[Sequence[int]]) -> Tensor:
    """(B, 6) logits from the selector's final hidden state over each caption."""
    if any(len(c) == 0 for c in captions):
        raise ValueError("type selector needs non-empty captions")
    state = LstmState.zeros(sel.lstm.hidden_size, len(captions))
    state = _masked_lstm(sel.lstm, sel.embedding, captions, state)
    return add_bias(matmul(state.hidden, sel.out_weight), sel.out_bias)


def type_probabilities(sel: SelectorParams, caption: Sequence[int]) -> np.ndarray:
    with no_grad():
        return softmax(type_logits(sel, [caption])).data[0]


def _inverse_cdf(dist: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(dist)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(dist) - 1)


def sample_type(dist: np.ndarray, rng: np.random.Generator) -> QuestionType:
    return SAMPLEABLE_TYPES[_inverse_cdf(dist, rng)]


def sample_caption(prior: np.ndarray, rng: np.random.Generator) -> int:
    """Index of a caption drawn from the prior."""
    return _inverse_cdf(prior, rng)


def top_k(dist: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest entries, lower index first on ties."""
    return list(np.argsort(-np.asarray(dist), kind="stable")[:k])


# -- encoder, correlation, decoder -------------------------------------------


def _as_batch(features) -> Tensor:
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.shape[-1] != FEATURE_DIM:
        raise ShapeError(f"image feature must have {FEATURE_DIM} entries, got {f.shape[-1]}")
    return features if isinstance(features, Tensor) and features.data.ndim == 2 else Tensor(f)


def encode_batch(gen: GeneratorParams, features, captions: Sequence[Sequence[int]]) -> Tensor:
    """Image feature at step 0, START at step 1, then the caption; returns final memory (B, H)."""
    feats = _as_batch(features)
    B = len(captions)
    state = LstmState.zeros(gen.hidden_size, B)
    state = lstm_step(gen.encoder, feats, state)
    state = lstm_step(gen.encoder, embedding_lookup(gen.embedding, [START] * B), state)
    state = _masked_lstm(gen.encoder, gen.embedding, captions, state)
    return state.memory


def correlate(gen: GeneratorParams, caption_embedding: Tensor, features) -> Tensor:
    """PReLU(W [caption_embedding; image] + b)."""
    vector = caption_embedding.data.ndim == 1
    emb = reshape(caption_embedding, (1, -1)) if vector else caption_embedding
    z = add_bias(matmul(concat([emb, _as_batch(features)]), transpose(gen.corr_weight)), gen.corr_bias)
    out = prelu(z, gen.corr_slope)
    return reshape(out, (FEATURE_DIM,)) if vector else out


def encode(gen: GeneratorParams, image_feature, caption: Sequence[int]) -> Tensor:
    return reshape(encode_batch(gen, image_feature, [caption]), (gen.hidden_size,))


def output_logits(gen: GeneratorParams, hidden: Tensor) -> Tensor:
    return add_bias(matmul(hidden, gen.out_weight), gen.out_bias)


@dataclass
class DecoderState:
    """LSTM state of the question decoder; ``lstm`` is None until the joint feature map is read."""

    lstm: LstmState | None = None


def decoder_step(gen: GeneratorParams, state: DecoderState, inp) -> tuple[DecoderState, np.ndarray]:
    """Feed the joint feature map (first call) or a token id; return the next-word distribution."""
    if isinstance(inp, (int, np.integer)):
        if state.lstm is None:
            raise ValueError("decoder must read the joint feature map before any token")
        x = embedding_lookup(gen.embedding, [int(inp)])
        prev = state.lstm
    else:
        if state.lstm is not None:
            raise ValueError("the joint feature map is only read at step 0")
        x = _as_batch(inp)
        prev = LstmState.zeros(gen.hidden_size, 1)
    with no_grad():
        new = lstm_step(gen.decoder, x, prev)
        dist = softmax(output_logits(gen, new.hidden)).data[0]
    return DecoderState(new), dist


def teacher_forced_nll(gen: GeneratorParams, joint: Tensor, questions: Sequence[Sequence[int]],
                       coeffs: Sequence[float], k_fixed: int = 1) -> Tensor:
    """Sum over rows of ``coeff * -log P(q[k_fixed:] + END | q[:k_fixed], joint)``.

    The decoder reads the joint map, then START, then the gold tokens; the first
    ``k_fixed`` tokens are fed but not scored.
    """
    B = len(questions)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    targets = [list(q) + [END] for q in questions]
    lengths = np.array([len(t) for t in targets])
    state = lstm_step(gen.decoder, joint, LstmState.zeros(gen.hidden_size, B))
    state = lstm_step(gen.decoder, embedding_lookup(gen.embedding, [START] * B), state)
    terms = []
    for p in range(int(lengths.max())):
        if p > 0:
            ids = [t[p - 1] if p - 1 < len(t) else END for t in targets]
            state = lstm_step(gen.decoder, embedding_lookup(gen.embedding, ids), state)
        if p < k_fixed:
            continue
        active = lengths > p
        tgt = [t[p] if a else END for t, a in zip(targets, active)]
        terms.append(cross_entropy(output_logits(gen, state.hidden), tgt, coeffs * active))
    if not terms:
        return Tensor(np.array(0.0))
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def joint_features(gen: GeneratorParams, features, captions: Sequence[Sequence[int]]) -> Tensor:
    return correlate(gen, encode_batch(gen, features, captions), features)


# -- fusion and decoding -----------------------------------------------------


def fuse(lstm_dist: np.ndarray, bigram_dist: np.ndarray, beta: float) -> np.ndarray:
    """(1 - beta) * lstm + beta * bigram."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if beta == 0.0:
        return np.asarray(lstm_dist, dtype=np.float64)
    if beta == 1.0:
        return np.asarray(bigram_dist, dtype=np.float64)
    return (1.0 - beta) * np.asarray(lstm_dist) + beta * np.asarray(bigram_dist)


@dataclass
class DecodeConfig:
    qtype: QuestionType = QuestionType.WHAT
    beta: float = 0.25
    k_fixed: int = 1
    beam_width: int = 3
    max_len: int = 12
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.k_fixed < 1:
            raise ValueError("k_fixed must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < self.k_fixed:
            raise ValueError("max_len must be >= k_fixed")


def forced_prefix(vocab: Vocabulary, qtype: QuestionType, k_fixed: int) -> list[int]:
    """Token ids fixed at the start of a question of this type."""
    words = [qtype.keyword]
    if k_fixed > len(words):
        raise ValueError(f"type {qtype.name} fixes only {len(words)} leading word(s), k_fixed={k_fixed}")
    return vocab.encode(words[:k_fixed])


def start_decoder(gen: GeneratorParams, image_feature, caption: Sequence[int]) -> tuple[DecoderState, np.ndarray]:
    """Read the joint feature map and START; returns the state and the first-word distribution."""
    with no_grad():
        joint = correlate(gen, encode(gen, image_feature, caption), image_feature)
    state, _ = decoder_step(gen, DecoderState(), joint.data)
    return decoder_step(gen, state, START)


def _next_dist(model: VQGModel, dist: np.ndarray, tokens: list[int], beta: float) -> np.ndarray:
    # fusion starts at the second question word
    if len(tokens) >= 1 and beta > 0.0:
        return fuse(dist, model.lm.distribution(tokens[-1]), beta)
    return dist


@dataclass
class Hypothesis:
    tokens: list[int]
    state: DecoderState
    dist: np.ndarray
    logp: float = 0.0
    n_scored: int = 0
    finished: bool = False

    @property
    def score(self) -> float:
        return self.logp / self.n_scored if self.n_scored else 0.0


def _forced_start(model: VQGModel, image_feature, caption, config: DecodeConfig) -> Hypothesis:
    state, dist = start_decoder(model.gen, image_feature, caption)
    hyp = Hypothesis([], state, dist)
    for tok in forced_prefix(model.vocab, config.qtype, config.k_fixed):
        hyp.tokens.append(tok)
        hyp.state, hyp.dist = decoder_step(model.gen, hyp.state, tok)
    if len(hyp.tokens) >= config.max_len:
        hyp.finished = True
    return hyp


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def greedy_decode(model: VQGModel, image_feature, caption: Sequence[int],
                  config: DecodeConfig) -> tuple[list[int], float]:
    hyp = _forced_start(model, image_feature, caption, config)
    while not hyp.finished:
        dist = _next_dist(model, hyp.dist, hyp.tokens, config.beta)
        tok = int(np.argmax(dist))
        hyp.logp += _log(dist[tok])
        hyp.n_scored += 1
        if tok == END:
            break
        hyp.tokens.append(tok)
        if len(hyp.tokens) >= config.max_len:
            break
        hyp.state, hyp.dist = decoder_step(model.gen, hyp.state, tok)
    return hyp.tokens, hyp.score


def beam_decode(model: VQGModel, image_feature, caption: Sequence[int],
                config: DecodeConfig) -> tuple[list[int], float]:
    """Beam search over fused distributions; pruning by summed log-prob, final pick by
    length-normalised log-prob."""
    width = config.beam_width
    first = _forced_start(model, image_feature, caption, config)
    if first.finished:
        return first.tokens, 0.0
    live, done = [first], []
    while live and len(done) < width:
        expansions = []
        for h_i, hyp in enumerate(live):
            dist = _next_dist(model, hyp.dist, hyp.tokens, config.beta)
            for tok in np.argsort(-dist, kind="stable")[:width]:
                expansions.append((hyp.logp + _log(dist[tok]), h_i, int(tok)))
        expansions.sort(key=lambda e: -e[0])
        new_live = []
        for logp, h_i, tok in expansions[:width]:
            parent = live[h_i]
            hyp = Hypothesis(list(parent.tokens), parent.state, parent.dist, logp, parent.n_scored + 1)
            if tok == END:
                hyp.finished = True
                done.append(hyp)
                continue
            hyp.tokens.append(tok)
            if len(hyp.tokens) >= config.max_len:
                hyp.finished = True
                done.append(hyp)
                continue
            hyp.state, hyp.dist = decoder_step(model.gen, parent.state, tok)
            new_live.append(hyp)
        live = new_live
    best = max(done, key=lambda h: h.score) if done else max(live, key=lambda h: h.score)
    return best.tokens, best.score


def decode(model: VQGModel, image_feature, caption: Sequence[int], config: DecodeConfig):
    if config.beam_width == 1:
        return greedy_decode(model, image_feature, caption, config)
    return beam_decode(model, image_feature, caption, config)


# -- generation ------------------------------------------------------------


@dataclass
class GeneratedQuestion:
    tokens: list[int]
    qtype: QuestionType
    caption_index: int
    score: float


MAX_ATTEMPTS = 5


def generate(model: VQGModel, image_feature, captions: Sequence[Sequence[int]],
             confidences: Sequence[float], n_questions: int, config: DecodeConfig,
             rng: np.random.Generator | None = None, type_mode: str = "sample") -> list[GeneratedQuestion]:
    """Draw caption, pick a type, decode under the type prefix; repeat for n distinct questions.

    ``type_mode`` is ``"sample"`` (draw from the selector) or ``"top"`` (the most probable
    type not yet used for this image). Duplicates are re-drawn up to five times.
    """
    if not captions:
        raise ValueError("empty caption set")
    if n_questions < 1:
        raise ValueError("n_questions must be >= 1")
    if type_mode not in ("sample", "top"):
        raise ValueError(f"unknown type_mode {type_mode!r}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    prior = caption_prior(confidences)
    type_cache: dict[int, np.ndarray] = {}
    decode_cache: dict[tuple[int, QuestionType], tuple[list[int], float]] = {}
    out: list[GeneratedQuestion] = []
    seen: set[tuple[int, ...]] = set()
    used: set[QuestionType] = set()
    for _ in range(n_questions):
        for _attempt in range(MAX_ATTEMPTS):
            ci = sample_caption(prior, rng)
            if ci not in type_cache:
                type_cache[ci] = type_probabilities(model.sel, captions[ci])
            probs = type_cache[ci]
            if type_mode == "sample":
                qtype = sample_type(probs, rng)
            else:
                free = [SAMPLEABLE_TYPES[i] for i in top_k(probs, N_TYPES) if SAMPLEABLE_TYPES[i] not in used]
                if not free:
                    break
                qtype = free[0]
            key = (ci, qtype)
            if key not in decode_cache:
                cfg = DecodeConfig(qtype, config.beta, config.k_fixed, config.beam_width, config.max_len, config.seed)
                decode_cache[key] = decode(model, image_feature, captions[ci], cfg)
            tokens, score = decode_cache[key]
            if tuple(tokens) in seen:
                continue
            seen.add(tuple(tokens))
            used.add(qtype)
            out.append(GeneratedQuestion(tokens, qtype, ci, score))
            break
    out.sort(key=lambda g: -g.score)
    return out


# -- likelihoods ------------------------------------------------------------


def question_log_likelihood(gen: GeneratorParams, image_feature, caption: Sequence[int],
                            question: Sequence[int], k_fixed: int = 1) -> Tensor:
    joint = joint_features(gen, image_feature, [caption])
    return teacher_forced_nll(gen, joint, [question], [-1.0], k_fixed)


def joint_log_prob(model: VQGModel, image_feature, captions: Sequence[Sequence[int]],
                   confidences: Sequence[float], caption_index: int, qtype: QuestionType,
                   question: Sequence[int], k_fixed: int = 1) -> Tensor:
    """log P(q | c, x, t) + log P(t | c) + log P(c | C) as a differentiable scalar."""
    caption = captions[caption_index]
    log_prior = math.log(caption_prior(confidences)[caption_index])
    q_term = question_log_likelihood(model.gen, image_feature, caption, question, k_fixed)
    t_term = cross_entropy(type_logits(model.sel, [caption]), [qtype.index], [-1.0])
    return add(add(q_term, t_term), Tensor(np.array(log_prior)))


def record_ids(vocab: Vocabulary, record: ImageRecord):
    """(caption id lists, confidences, question id lists) for a record."""
    caps = [vocab.encode(c.words) for c in record.captions]
    confs = [c.confidence for c in record.captions]
    qs = [vocab.encode(q.words) for q in record.questions]
    return caps, confs, qs
