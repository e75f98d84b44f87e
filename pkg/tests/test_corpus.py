import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vqg.corpus import (EMBED_DIM, END, FEATURE_DIM, RESERVED, START, UNK, DatasetError, QuestionType, build_vocab,
                        compute_idf, extract_question_type, idf_documents, load_dataset, load_embeddings,
                        tokenize, write_dataset)
from vqg.synth import generate_synthetic_dataset

words = st.text(alphabet="abcdefgh", min_size=1, max_size=6)


# -- tokenizer ---------------------------------------------------------------


def test_tokenize_examples():
    assert tokenize("What color is the floor?") == ["what", "color", "is", "the", "floor", "?"]
    assert tokenize("") == []
    assert tokenize("a man's hat") == ["a", "man", "'s", "hat"]


def test_tokenize_never_emits_reserved_tokens():
    assert not set(tokenize("<s> </s> <unk>")) & set(RESERVED)


@given(st.text(max_size=40))
def test_tokenize_is_deterministic_and_lowercase(text):
    out = tokenize(text)
    assert out == tokenize(text)
    assert all(t == t.lower() for t in out)
    assert all(not t.isspace() and t for t in out)


# -- vocabulary --------------------------------------------------------------


def test_vocab_reserved_ids():
    v = build_vocab(["a b a"])
    assert (v.id("<s>"), v.id("</s>"), v.id("<unk>")) == (START, END, UNK)
    assert len(v) == 5
    assert v.words() == ["a", "b"]


def test_vocab_min_count_maps_rare_words_to_unk():
    v = build_vocab(["a b a"], min_count=2)
    assert "b" not in v
    assert v.encode(["b"]) == [UNK]


def test_vocab_tie_break_is_lexicographic():
    v = build_vocab(["y x"])
    assert v.id("x") < v.id("y")


def test_vocab_empty_corpus_has_only_reserved():
    assert len(build_vocab([])) == len(RESERVED)


def test_vocab_rejects_bad_min_count():
    with pytest.raises(ValueError):
        build_vocab(["a"], min_count=0)


@given(st.lists(st.lists(words, min_size=1, max_size=6), min_size=1, max_size=6))
def test_vocab_round_trip_and_determinism(corpus):
    v = build_vocab(corpus)
    for sent in corpus:
        assert v.decode(v.encode(sent)) == sent
    shuffled = list(reversed(corpus))
    assert build_vocab(shuffled).itos == v.itos


# -- embeddings --------------------------------------------------------------


def _vector_line(word, values):
    return word + " " + " ".join(repr(float(x)) for x in values)


def test_load_embeddings_copies_file_vectors(tmp_path):
    v = build_vocab(["cat dog"])
    vec = np.linspace(-1, 1, EMBED_DIM)
    path = tmp_path / "glove.txt"
    path.write_text(_vector_line("cat", vec) + "\n" + _vector_line("zebra", vec) + "\n")
    emb = load_embeddings(path, v, np.random.default_rng(0))
    assert emb.vectors.shape == (EMBED_DIM, len(v))
    np.testing.assert_array_equal(emb.vector("cat"), vec)
    assert emb.matched == 1
    assert np.all(np.abs(emb.vector("dog")) <= 0.08)


def test_load_embeddings_empty_file(tmp_path):
    v = build_vocab(["cat dog"])
    path = tmp_path / "empty.txt"
    path.write_text("")
    emb = load_embeddings(path, v, np.random.default_rng(0))
    assert emb.matched == 0
    np.testing.assert_array_equal(emb.vectors, load_embeddings(None, v, np.random.default_rng(0)).vectors)


def test_load_embeddings_random_columns_do_not_depend_on_file(tmp_path):
    v = build_vocab(["cat dog"])
    path = tmp_path / "g.txt"
    path.write_text(_vector_line("cat", np.ones(EMBED_DIM)) + "\n")
    with_file = load_embeddings(path, v, np.random.default_rng(3))
    without = load_embeddings(None, v, np.random.default_rng(3))
    np.testing.assert_array_equal(with_file.vector("dog"), without.vector("dog"))


def test_load_embeddings_short_line_names_the_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text(_vector_line("cat", np.ones(EMBED_DIM)) + "\n" + _vector_line("dog", np.ones(EMBED_DIM - 1)) + "\n")
    with pytest.raises(DatasetError, match=r"bad.txt:2"):
        load_embeddings(path, build_vocab(["cat dog"]), np.random.default_rng(0))


def test_load_embeddings_unparsable_float(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("cat " + " ".join(["x"] * EMBED_DIM) + "\n")
    with pytest.raises(DatasetError, match=":1"):
        load_embeddings(path, build_vocab(["cat"]), np.random.default_rng(0))


# -- IDF ---------------------------------------------------------------------


def test_idf_ratios():
    docs = [["a", "b"], ["a"], ["a", "c"], ["a"]]
    idf = compute_idf(docs)
    assert idf["a"] == 1.0
    assert idf["b"] == 4.0
    assert idf["zzz"] == 4.0  # unseen word: largest tabled value


@given(st.lists(st.lists(words, min_size=1, max_size=5), min_size=1, max_size=8))
def test_idf_values_at_least_one(docs):
    idf = compute_idf(docs)
    values = [idf[w] for d in docs for w in d]
    assert min(values) >= 1.0
    common = set(docs[0]).intersection(*map(set, docs))
    assert (min(values) == 1.0) == bool(common)


def test_idf_documents_one_per_sentence():
    records = generate_synthetic_dataset(1, 2)
    docs = idf_documents(records)
    assert len(docs) == sum(len(r.captions) + len(r.questions) for r in records)


# -- question types ----------------------------------------------------------


@pytest.mark.parametrize("text, expected", [
    ("what color is the floor", QuestionType.WHAT),
    ("how many people are there", QuestionType.HOW),
    ("is the floor brown", QuestionType.OTHER),
    ("", QuestionType.OTHER),
])
def test_extract_question_type(text, expected):
    assert extract_question_type(text) is expected


def test_question_type_keywords_and_indices():
    from vqg.corpus import SAMPLEABLE_TYPES
    assert [t.keyword for t in SAMPLEABLE_TYPES] == ["what", "when", "where", "who", "why", "how"]
    assert [t.index for t in SAMPLEABLE_TYPES] == list(range(6))
    with pytest.raises(ValueError):
        QuestionType.OTHER.keyword


# -- dataset files -----------------------------------------------------------


def _record(**overrides):
    rec = {"image_id": "img1", "feature": [0.5] * FEATURE_DIM,
           "captions": [{"text": "the car is red", "confidence": 1.2}, {"text": "a dog", "confidence": -0.3}],
           "questions": [{"text": "What color is the car?"}]}
    rec.update(overrides)
    return rec


def _write(tmp_path, *records):
    path = tmp_path / "data.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_load_dataset_parses_record(tmp_path):
    [rec] = load_dataset(_write(tmp_path, _record(extra="ignored")))
    assert len(rec.captions) == 2
    assert rec.feature.shape == (FEATURE_DIM,)
    assert rec.questions[0].words[-1] == "?"
    assert rec.questions[0].qtype is QuestionType.WHAT


def test_load_dataset_short_feature_names_field(tmp_path):
    with pytest.raises(DatasetError, match=r"line 2: field 'feature'"):
        load_dataset(_write(tmp_path, _record(), _record(feature=[0.0] * 299)))


def test_load_dataset_accepts_inference_only_record(tmp_path):
    [rec] = load_dataset(_write(tmp_path, _record(questions=[])))
    assert rec.questions == []


@pytest.mark.parametrize("bad, field", [
    ({"image_id": 3}, "image_id"),
    ({"feature": [float("nan")] + [0.0] * 299}, "feature"),
    ({"captions": [{"text": "x"}]}, "captions"),
    ({"captions": [{"text": "", "confidence": 0}]}, "captions"),
    ({"questions": [{"q": "what"}]}, "questions"),
])
def test_load_dataset_schema_errors(tmp_path, bad, field):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(_record(**bad)) + "\n")
    with pytest.raises(DatasetError, match=field):
        load_dataset(path)


def test_load_dataset_invalid_json_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(_record()) + "\n{oops\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(path)


def test_write_then_load_round_trip(tmp_path):
    records = generate_synthetic_dataset(5, 3)
    path = tmp_path / "syn.jsonl"
    write_dataset(records, path, meta={"tool_version": "x"})
    loaded = load_dataset(path)
    assert [r.image_id for r in loaded] == [r.image_id for r in records]
    for a, b in zip(loaded, records):
        np.testing.assert_array_equal(a.feature, b.feature)
        assert [c.words for c in a.captions] == [c.words for c in b.captions]
        assert [c.confidence for c in a.captions] == [c.confidence for c in b.captions]
        assert [q.words for q in a.questions] == [q.words for q in b.questions]
