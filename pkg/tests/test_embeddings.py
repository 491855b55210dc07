import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from diatom.corpus import AnnotatedSentence, ProxyLabel
from diatom.embeddings import (
    EmbeddingError, EmbeddingSource, EmbeddingTable, cosine, load_embedding_table,
    load_sentence_cache, sentence_embedding, topic_embedding, write_embedding_table,
)


def _table(**vecs):
    t = EmbeddingTable()
    for tok, v in vecs.items():
        t.add(tok, v)
    return t


def test_load_table(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "emb.txt"
    write_embedding_table(path, {w: rng.normal(size=300) for w in ("dark", "ring", "elf")})
    table = load_embedding_table(path)
    assert len(table) == 3 and table.dimension == 300


def test_load_table_errors(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("a 1 2 3 4\nb 1 2 3\n")
    with pytest.raises(EmbeddingError, match=":2"):
        load_embedding_table(path)
    path.write_text("")
    table = load_embedding_table(path)
    with pytest.raises(EmbeddingError):
        table.get("a")


def test_topic_embedding_examples():
    w = np.array([3.0, 4.0, 0.0])
    assert np.allclose(topic_embedding([("ring", 1.0)], _table(ring=w)), w / 5)
    t = _table(a=[1.0, 0, 0], b=[0, 1.0, 0])
    assert np.allclose(topic_embedding([("a", 0.5), ("b", 0.5)], t), [1 / math.sqrt(2), 1 / math.sqrt(2), 0])
    with pytest.raises(EmbeddingError, match="unlabelable"):
        topic_embedding([("zzz", 1.0)], t)


def test_topic_embedding_renormalizes_over_present_words():
    t = _table(a=[1.0, 0], b=[0, 1.0])
    v = topic_embedding([("a", 0.3), ("missing", 0.4), ("b", 0.3)], t)
    assert np.allclose(v, [1 / math.sqrt(2), 1 / math.sqrt(2)])
    # only the first n words count
    assert np.allclose(topic_embedding([("a", 0.1), ("b", 0.9)], t, n=1), [1, 0])


vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.floats(0.01, 1)), min_size=1, max_size=10),
       vec3, vec3, vec3, vec3)
def test_topic_embedding_unit_norm(words, a, b, c, d):
    t = _table(a=a, b=b, c=c, d=d)
    try:
        v = topic_embedding(words, t)
    except EmbeddingError:
        return  # weighted mean cancelled out exactly
    assert abs(np.linalg.norm(v) - 1) < 1e-9


def test_sentence_embedding():
    t = _table(dark=[1.0, 0, 0], power=[0, 1.0, 0])
    s = sentence_embedding(AnnotatedSentence("dark power", ProxyLabel.PLOT), t)
    assert np.allclose(s.vector, [1 / math.sqrt(2), 1 / math.sqrt(2), 0])
    assert s.source is EmbeddingSource.MEAN_OF_WORDS
    cached = sentence_embedding("dark power", t, {"dark power": np.array([0.0, 0.0, 2.0])})
    assert np.array_equal(cached.vector, [0, 0, 2]) and cached.source is EmbeddingSource.EXTERNAL_FILE
    with pytest.raises(EmbeddingError):
        sentence_embedding("", t)
    assert np.array_equal(sentence_embedding("dark power", t).vector, s.vector)


def test_sentence_cache(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text(json.dumps({"text": "Great film.", "vector": [0.5, 0.5]}) + "\n")
    assert np.array_equal(load_sentence_cache(path)["Great film."], [0.5, 0.5])
    path.write_text("{not json\n")
    with pytest.raises(EmbeddingError):
        load_sentence_cache(path)


def test_cosine_examples():
    assert cosine([1, 0], [1, 0]) == 1
    assert cosine([1, 0], [0, 1]) == 0
    assert cosine([1, 0], [-1, 0]) == -1
    with pytest.raises(EmbeddingError):
        cosine([0, 0], [1, 0])


@given(vec3, vec3, st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_symmetric_scale_invariant(u, v, a, b):
    assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-12)
    assert cosine(a * u, b * v) == pytest.approx(cosine(u, v), abs=1e-9)
