import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from diatom.corpus import AnnotatedSentence, ProxyLabel, Sentiment
from diatom.embeddings import EmbeddingTable
from diatom.eval import (
    AnnotationIndex, CoherenceConfig, EvalReport, TopicLabel, disentanglement_rate, export_topic_vectors,
    label_topic, label_topics, linear_probe_accuracy, mean_latents, npmi, npmi_coherence,
    read_topic_vectors, sentiment_accuracy, topic_uniqueness, window_counts,
)
from diatom.model import DIATOM, ModelConfig, Topic, topic_set_from_matrix, topic_word_matrix
from diatom.training import build_model, doc_tensors


# ---------------------------------------------------------------------------
# coherence

def brute_windows(reference, window):
    """Explicit list of token sets, one per sliding window."""
    out = []
    for doc in reference:
        if not doc:
            continue
        span = min(window, len(doc))
        out += [set(doc[i:i + span]) for i in range(len(doc) - span + 1)]
    return out


def brute_npmi(reference, a, b, window, eps=1e-12):
    wins = brute_windows(reference, window)
    n = len(wins)
    ci = sum(a in w for w in wins)
    cj = sum(b in w for w in wins)
    cij = sum(a in w and b in w for w in wins)
    if cij == 0:
        return -1.0
    if cij == ci == cj:
        return 1.0
    pij = cij / n
    return math.log((pij + eps) / (ci / n * cj / n)) / -math.log(pij + eps)


docs_st = st.lists(st.lists(st.sampled_from("abcdefg"), max_size=25), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(docs_st, st.integers(2, 12))
def test_window_counts_match_brute_force(reference, window):
    words = list("abcdef")
    n, single, joint = window_counts(reference, words, window)
    wins = brute_windows(reference, window)
    assert n == len(wins)
    for i, w in enumerate(words):
        assert single[i] == sum(w in s for s in wins)
    for (i, a), (j, b) in itertools.product(enumerate(words), repeat=2):
        assert joint[i, j] == sum(a in s and b in s for s in wins)


@settings(max_examples=30, deadline=None)
@given(docs_st, st.integers(2, 12))
def test_npmi_coherence_matches_brute_force(reference, window):
    topic = ["a", "b", "c"]
    res = npmi_coherence([topic], reference, CoherenceConfig(window_size=window, top_n=3))
    present = [w for w in topic if any(w in d for d in reference)]
    pairs = [(x, y) for x, y in itertools.combinations(topic, 2) if x in present and y in present]
    if not pairs:
        assert res.per_topic == [None] and res.mean is None
        return
    expected = np.mean([brute_npmi(reference, x, y, window) for x, y in pairs])
    assert res.per_topic[0] == pytest.approx(expected, abs=1e-9)


def test_npmi_limit_cases():
    ref = [["ring", "dark"], ["elf", "song"], ["ring", "dark", "elf"]]
    perfect = npmi_coherence([["ring", "dark"]], ref, CoherenceConfig(window_size=5, top_n=2))
    assert perfect.per_topic == [1.0]
    never = npmi_coherence([["ring", "song"]], ref, CoherenceConfig(window_size=2, top_n=2))
    assert never.per_topic == [-1.0]
    assert npmi(2, 3, 0, 10) == -1.0


def test_npmi_independent_pairs():
    # 5000 documents of 20 tokens, each shorter than the window; "alpha" and "beta"
    # appear independently in half of them. 10^5 tokens total.
    rng = np.random.default_rng(0)
    filler = [f"w{i}" for i in range(200)]
    ref = []
    for _ in range(5000):
        doc = list(rng.choice(filler, size=20))
        if rng.random() < 0.5:
            doc[rng.integers(20)] = "alpha"
        if rng.random() < 0.5:
            doc[rng.integers(20)] = "beta"
        ref.append(doc)
    assert sum(map(len, ref)) == 100_000
    res = npmi_coherence([["alpha", "beta"]], ref, CoherenceConfig(window_size=110, top_n=2))
    assert abs(res.per_topic[0]) < 0.05


@settings(max_examples=30, deadline=None)
@given(docs_st, st.randoms(use_true_random=False))
def test_npmi_invariant_to_document_order(reference, rnd):
    shuffled = list(reference)
    rnd.shuffle(shuffled)
    cfg = CoherenceConfig(window_size=4, top_n=4)
    a = npmi_coherence([list("abcd"), list("defg")], reference, cfg)
    b = npmi_coherence([list("abcd"), list("defg")], shuffled, cfg)
    assert a.per_topic == b.per_topic


def test_coherence_skips_absent_words(caplog):
    res = npmi_coherence([["zz", "qq"], ["ring", "dark"]], [["ring", "dark"]], CoherenceConfig(top_n=2))
    assert res.per_topic == [None, 1.0] and res.mean == 1.0
    assert "excluded" in caplog.text


# ---------------------------------------------------------------------------
# uniqueness

def _lists(K, L, overlap):
    return [[f"t{k}_{i}" if i >= overlap else f"shared{i}" for i in range(L)] for k in range(K)]


def test_tu_examples():
    per, mean = topic_uniqueness(_lists(4, 10, 0), 10)
    assert per == [1.0] * 4 and mean == 1.0
    K = 5
    per, mean = topic_uniqueness(_lists(K, 10, 10), 10)
    assert mean == pytest.approx(1 / K)
    per, mean = topic_uniqueness(_lists(2, 10, 5), 10)
    assert per == [pytest.approx(0.75)] * 2


@given(st.lists(st.lists(st.integers(0, 30), min_size=4, max_size=4, unique=True), min_size=1, max_size=6))
def test_tu_one_iff_disjoint(lists):
    lists = [[str(w) for w in lst] for lst in lists]
    _, mean = topic_uniqueness(lists, 4)
    disjoint = all(not set(a) & set(b) for a, b in itertools.combinations(lists, 2))
    assert (mean == pytest.approx(1.0)) == disjoint


# ---------------------------------------------------------------------------
# labeling and rho

P, N, T, X = ProxyLabel.POSITIVE, ProxyLabel.NEGATIVE, ProxyLabel.PLOT, ProxyLabel.NONE


def test_rho_examples():
    assert disentanglement_rate([P, N, T, X]) == 0.5
    assert disentanglement_rate([T] * 6) == 0
    assert disentanglement_rate([P] * 3) == 1
    assert disentanglement_rate([TopicLabel(0, P), TopicLabel(1, T)]) == 0.5
    with pytest.raises(ValueError):
        disentanglement_rate([])


@given(st.lists(st.sampled_from(list(ProxyLabel)), min_size=1, max_size=20), st.randoms(use_true_random=False))
def test_rho_permutation_invariant(labels, rnd):
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert disentanglement_rate(labels) == disentanglement_rate(shuffled)


def _pool(rows):
    """Sentences with prescribed cosine to e1, served through the sentence cache."""
    table = EmbeddingTable()
    table.add("topicword", [1.0, 0.0, 0.0])
    sentences, cache = [], {}
    for i, (label, sim) in enumerate(rows):
        text = f"Sentence number {i}."
        cache[text] = np.array([sim, math.sqrt(1 - sim ** 2), 0.0])
        sentences.append(AnnotatedSentence(text, label))
    topic = Topic(0, "plot", [("topicword", 1.0)])
    return topic, sentences, table, cache


def test_label_unanimous():
    topic, sents, table, cache = _pool([(T, 0.9 - 0.01 * i) for i in range(10)])
    assert label_topic(topic, AnnotationIndex(sents, table, cache)).label is T


def test_label_tie_break_by_mean_similarity():
    rows = [(P, 0.8)] * 5 + [(N, 0.6)] * 5 + [(T, 0.1)] * 5
    topic, sents, table, cache = _pool(rows)
    lab = label_topic(topic, AnnotationIndex(sents, table, cache))
    assert lab.label is P and len(lab.retrieved) == 10


def test_label_majority():
    rows = [(P, 0.5)] * 6 + [(T, 0.9)] * 4 + [(N, 0.05)] * 4
    topic, sents, table, cache = _pool(rows)
    assert label_topic(topic, AnnotationIndex(sents, table, cache)).label is P


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(ProxyLabel)), st.floats(-0.99, 0.99)), min_size=1, max_size=25),
       st.integers(2, 4))
def test_label_invariant_to_duplicated_pool(rows, copies):
    topic, sents, table, cache = _pool(rows)
    a = label_topic(topic, AnnotationIndex(sents, table, cache))
    b = label_topic(topic, AnnotationIndex(sents * copies, table, cache))
    assert a.label == b.label and a.retrieved == b.retrieved


def test_label_topics_reports_unlabelable():
    table = EmbeddingTable()
    table.add("ring", [1.0, 0.0])
    sents = [AnnotatedSentence("The ring.", T)]
    topics = topic_set_from_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]), ["ring", "zzz"], K=1)
    # topic 1 ranks "zzz" first but "ring" is still among its top words
    labels, missing = label_topics(topics, AnnotationIndex(sents, table), n_words=1)
    assert [l.topic_index for l in labels] == [0] and missing == [1]


# ---------------------------------------------------------------------------
# accuracy

def _separable_model():
    cfg = ModelConfig(V=4, K=2, S=2, M=2, hidden_doc=4, hidden_clf=2, mix_identity=True)
    m = DIATOM(cfg)
    with torch.no_grad():
        enc = m.sent_encoder
        enc.hidden.weight.copy_(10 * torch.eye(4))
        enc.mu.weight.copy_(torch.eye(4)[:2])
        enc.var.weight.zero_()
        m.sent_head.fc1.weight.copy_(10 * torch.eye(2))
        m.sent_head.fc2.weight.copy_(10 * torch.eye(2))
    return m.eval()


def _docs(n_pos, n_neg):
    from diatom.corpus import BowDocument
    docs = [BowDocument(f"p{i}", {0: 3}, Sentiment.POSITIVE, None) for i in range(n_pos)]
    docs += [BowDocument(f"n{i}", {1: 3}, Sentiment.NEGATIVE, None) for i in range(n_neg)]
    docs.append(BowDocument("u", {2: 1}, None, None))
    return docs


class _Corpus:
    """Just enough of a CorpusSplit for doc_tensors."""
    def __init__(self, V):
        from diatom.corpus import Vocabulary
        self.vocab = Vocabulary.from_tokens([f"w{i}" for i in range(V)])
        self.plots = []
        self.plot_index = {}


def test_accuracy_perfect_and_majority():
    model, corpus = _separable_model(), _Corpus(4)
    res = sentiment_accuracy(model, _docs(7, 3), corpus)
    assert res.accuracy == 1.0 and res.n == 10 and res.skipped == 1
    with torch.no_grad():
        model.sent_head.fc2.weight.zero_()
        model.sent_head.fc2.bias.copy_(torch.tensor([5.0, 0.0]))
    assert sentiment_accuracy(model, _docs(7, 3), corpus).accuracy == pytest.approx(0.7)


def test_accuracy_random_heads_average_to_chance(tiny):
    _, corpus, _, _ = tiny
    test = doc_tensors(corpus.test, corpus)
    assert (test.y == 0).mean() == 0.5
    accs = [sentiment_accuracy(build_model(corpus, K=3, S=2, seed=s), test).accuracy for s in range(100)]
    assert abs(np.mean(accs) - 0.5) <= 0.05


def test_linear_probe():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 400)
    sep = np.c_[y + 0.1 * rng.normal(size=400), rng.normal(size=400)]
    assert linear_probe_accuracy(sep[:300], y[:300], sep[300:], y[300:]) > 0.95
    noise = rng.normal(size=(400, 3))
    assert abs(linear_probe_accuracy(noise[:300], y[:300], noise[300:], y[300:]) - 0.5) < 0.15


def test_mean_latents_shapes(tiny):
    _, corpus, _, _ = tiny
    za, zs, y = mean_latents(build_model(corpus, K=3, S=2), corpus.test, corpus)
    assert za.shape == (30, 3) and zs.shape == (30, 2) and y.shape == (30,)
    assert np.allclose(za.sum(1), 1, atol=1e-5)


# ---------------------------------------------------------------------------
# export and report

def test_export_roundtrip(tmp_path, tiny):
    _, corpus, _, _ = tiny
    m = build_model(corpus, K=2, S=1)
    path = tmp_path / "topics.csv"
    export_topic_vectors(m, corpus.vocab.tokens, path, {2: ProxyLabel.POSITIVE})
    tokens, meta, W = read_topic_vectors(path)
    assert len(meta) == 3 and tokens == list(corpus.vocab.tokens)
    assert [r["tag"] for r in meta] == ["plot", "plot", "opinion"] and meta[2]["label"] == "Positive"
    assert np.array_equal(W.astype(np.float32), m.W.detach().numpy())


def test_report_drops_missing_fields():
    assert EvalReport(topic_uniqueness=0.9).to_dict() == {"topic_uniqueness": 0.9}


def test_topic_word_matrix_ten_words(tiny):
    _, corpus, _, _ = tiny
    topics = topic_word_matrix(build_model(corpus, K=3, S=2), corpus.vocab)
    assert len(topics) == 5 and all(len(t.top_tokens(10)) == 10 for t in topics)
