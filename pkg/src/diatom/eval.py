"""Topic quality, sentiment and disentanglement metrics."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import AnnotatedSentence, BowDocument, CorpusSplit, ProxyLabel
from .embeddings import EmbeddingError, EmbeddingTable, sentence_embedding, topic_embedding
from .model import DIATOM, Topic, TopicSet
from .training import DocTensors, doc_tensors

logger = logging.getLogger(__name__)

OPINION_LABELS = frozenset({ProxyLabel.POSITIVE, ProxyLabel.NEGATIVE})
NPMI_EPS = 1e-12


@dataclass
class CoherenceConfig:
    window_size: int = 110
    top_n: int = 10
    reference: str = "all"

    def __post_init__(self) -> None:
        if self.window_size < 2 or self.top_n < 2:
            raise ValueError("window_size and top_n must be >= 2")


def _top_lists(topics: TopicSet | Sequence[Sequence[str]], n: int) -> list[list[str]]:
    if isinstance(topics, TopicSet):
        return topics.top_lists(n)
    return [list(t)[:n] for t in topics]


# ---------------------------------------------------------------------------
# coherence

def window_counts(reference: Sequence[Sequence[str]], words: Sequence[str], window: int
                  ) -> tuple[int, np.ndarray, np.ndarray]:
    """Boolean sliding-window document frequencies.

    Every run of ``window`` consecutive tokens inside a document is one
    window; a document shorter than ``window`` is a single window. Returns
    (number of windows, per-word counts, pairwise co-occurrence counts).
    """
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    single = np.zeros(n, dtype=np.int64)
    joint = np.zeros((n, n), dtype=np.int64)
    total = 0
    for doc in reference:
        if not doc:
            continue
        span = min(window, len(doc))
        n_win = len(doc) - span + 1
        total += n_win
        ids = np.fromiter((index.get(t, -1) for t in doc), dtype=np.int64, count=len(doc))
        present = np.unique(ids[ids >= 0])
        if present.size == 0:
            continue
        presence = np.empty((n_win, present.size), dtype=np.float64)
        for j, wid in enumerate(present):
            cs = np.concatenate([[0], np.cumsum(ids == wid)])
            presence[:, j] = (cs[span:span + n_win] - cs[:n_win]) > 0
        single[present] += presence.sum(0).astype(np.int64)
        joint[np.ix_(present, present)] += np.rint(presence.T @ presence).astype(np.int64)
    return total, single, joint


def npmi(c_i: int, c_j: int, c_ij: int, n_windows: int, eps: float = NPMI_EPS) -> float:
    if c_ij == 0:
        return -1.0
    if c_ij == c_i == c_j:
        return 1.0
    p_i, p_j, p_ij = c_i / n_windows, c_j / n_windows, c_ij / n_windows
    return math.log((p_ij + eps) / (p_i * p_j)) / -math.log(p_ij + eps)


@dataclass
class CoherenceResult:
    per_topic: list[float | None]
    mean: float | None


def npmi_coherence(topics: TopicSet | Sequence[Sequence[str]], reference: Sequence[Sequence[str]],
                   cfg: CoherenceConfig = CoherenceConfig()) -> CoherenceResult:
    """Mean pairwise windowed NPMI of each topic's top words.

    An approximation of C_V without its indirect cosine confirmation step.
    Pairs with a word absent from the reference are skipped.
    """
    lists = _top_lists(topics, cfg.top_n)
    words = sorted({w for lst in lists for w in lst})
    n_win, single, joint = window_counts(reference, words, cfg.window_size)
    idx = {w: i for i, w in enumerate(words)}
    scores: list[float | None] = []
    for k, lst in enumerate(lists):
        vals = []
        for a in range(len(lst)):
            for b in range(a + 1, len(lst)):
                i, j = idx[lst[a]], idx[lst[b]]
                if single[i] == 0 or single[j] == 0:
                    continue
                vals.append(npmi(single[i], single[j], joint[i, j], n_win))
        if not vals:
            logger.warning("topic %d: no top-word pair found in the reference; excluded", k)
            scores.append(None)
        else:
            scores.append(float(np.mean(vals)))
    valid = [s for s in scores if s is not None]
    return CoherenceResult(scores, float(np.mean(valid)) if valid else None)


# ---------------------------------------------------------------------------
# uniqueness

def topic_uniqueness(topics: TopicSet | Sequence[Sequence[str]], L: int = 10) -> tuple[list[float], float]:
    lists = _top_lists(topics, L)
    if any(len(lst) < L for lst in lists):
        raise ValueError(f"every topic needs at least {L} top words")
    cnt = Counter(w for lst in lists for w in set(lst))
    per_topic = [sum(1.0 / cnt[w] for w in lst) / L for lst in lists]
    return per_topic, float(np.mean(per_topic))


# ---------------------------------------------------------------------------
# topic labeling

@dataclass
class TopicLabel:
    topic_index: int
    label: ProxyLabel
    retrieved: list[tuple[str, ProxyLabel, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "topic": self.topic_index,
            "label": self.label.value,
            "retrieved": [{"text": t, "label": l.value, "similarity": s} for t, l, s in self.retrieved],
        }


class AnnotationIndex:
    """Unit sentence vectors for a deduplicated annotation pool."""

    def __init__(self, annotations: Sequence[AnnotatedSentence], table: EmbeddingTable,
                 cache: Mapping[str, np.ndarray] | None = None):
        seen: set[str] = set()
        self.sentences: list[AnnotatedSentence] = []
        vecs = []
        skipped = 0
        for sent in annotations:
            if sent.text in seen:
                continue
            seen.add(sent.text)
            try:
                emb = sentence_embedding(sent, table, cache)
            except EmbeddingError:
                skipped += 1
                continue
            self.sentences.append(sent)
            vecs.append(emb.vector / np.linalg.norm(emb.vector))
        if skipped:
            logger.warning("%d annotated sentences have no embeddable words; skipped", skipped)
        if not self.sentences:
            raise EmbeddingError("annotation pool has no embeddable sentence")
        self.matrix = np.vstack(vecs)
        self.table = table


def label_topic(topic: Topic, annotations: Sequence[AnnotatedSentence] | AnnotationIndex,
                table: EmbeddingTable | None = None, n_words: int = 10, n_sentences: int = 10) -> TopicLabel:
    """Majority label of the most cosine-similar annotated sentences.

    Ties go to the tied label with the highest mean similarity.
    """
    index = annotations if isinstance(annotations, AnnotationIndex) else AnnotationIndex(annotations, table)
    t = topic_embedding(topic.top(n_words), index.table, n_words)
    sims = index.matrix @ t
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:n_sentences]
    retrieved = [(index.sentences[i].text, index.sentences[i].label, float(sims[i])) for i in order]
    votes = Counter(lab for _, lab, _ in retrieved)
    best = max(votes.values())
    tied = [lab for lab in ProxyLabel if votes.get(lab) == best]
    mean_sim = {lab: np.mean([s for _, l, s in retrieved if l == lab]) for lab in tied}
    label = max(tied, key=lambda lab: mean_sim[lab])
    return TopicLabel(topic.index, label, retrieved)


def label_topics(topics: TopicSet, index: AnnotationIndex, n_words: int = 10
                 ) -> tuple[list[TopicLabel], list[int]]:
    """Label every topic; returns the labels and the indices of unlabelable topics."""
    labels, unlabelable = [], []
    for topic in topics:
        try:
            labels.append(label_topic(topic, index, n_words=n_words))
        except EmbeddingError:
            unlabelable.append(topic.index)
    if unlabelable:
        logger.warning("unlabelable topics (no top word embedded): %s", unlabelable)
    return labels, unlabelable


def disentanglement_rate(labels: Sequence[TopicLabel | ProxyLabel]) -> float:
    """Share of labeled topics whose proxy label is Positive or Negative."""
    labs = [l.label if isinstance(l, TopicLabel) else l for l in labels]
    if not labs:
        raise ValueError("no labeled topics")
    opinion = sum(l in OPINION_LABELS for l in labs)
    return opinion / len(labs)


# ---------------------------------------------------------------------------
# sentiment

@torch.no_grad()
def mean_latents(model: DIATOM, data: DocTensors | Sequence[BowDocument], corpus: CorpusSplit | None = None,
                 chunk: int = 1024) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z_a, z_s, labels) at the posterior mean, eval mode."""
    if not isinstance(data, DocTensors):
        data = doc_tensors(data, corpus)
    model.eval()
    za, zs = [], []
    for start in range(0, len(data), chunk):
        x = torch.from_numpy(data.x[start:start + chunk].toarray())
        a, s = model.latents(x)
        za.append(a.numpy())
        zs.append(s.numpy())
    K, S = model.cfg.K, model.cfg.S
    return (np.concatenate(za) if za else np.empty((0, K)),
            np.concatenate(zs) if zs else np.empty((0, S)), data.y.copy())


@dataclass
class AccuracyResult:
    accuracy: float
    n: int
    skipped: int


@torch.no_grad()
def sentiment_accuracy(model: DIATOM, test: DocTensors | Sequence[BowDocument],
                       corpus: CorpusSplit | None = None) -> AccuracyResult:
    """Argmax of the sentiment head on the mean z_s versus the gold label."""
    _, zs, y = mean_latents(model, test, corpus)
    keep = y >= 0
    skipped = int((~keep).sum())
    if skipped:
        logger.info("sentiment accuracy: %d unlabeled documents skipped", skipped)
    if not keep.any():
        raise ValueError("no labeled documents")
    pred = model.classify_sentiment(torch.from_numpy(zs[keep])).argmax(-1).numpy()
    return AccuracyResult(float((pred == y[keep]).mean()), int(keep.sum()), skipped)


def linear_probe_accuracy(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                          test_y: np.ndarray, seed: int = 0) -> float:
    """Test accuracy of a fresh logistic-regression probe on frozen features."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    keep_tr, keep_te = train_y >= 0, test_y >= 0
    scaler = StandardScaler().fit(train_x[keep_tr])
    probe = LogisticRegression(max_iter=2000, random_state=seed)
    probe.fit(scaler.transform(train_x[keep_tr]), train_y[keep_tr])
    return float(probe.score(scaler.transform(test_x[keep_te]), test_y[keep_te]))


# ---------------------------------------------------------------------------
# export and reports

def export_topic_vectors(model: DIATOM, tokens: Sequence[str], path: str | Path,
                         labels: Mapping[int, ProxyLabel] | None = None) -> None:
    """One CSV row per topic: index, structural tag, proxy label, then its W column."""
    W = model.W.detach().cpu().numpy()
    K = model.cfg.K
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["topic", "tag", "label", *tokens])
        for k in range(W.shape[1]):
            label = labels.get(k) if labels else None
            writer.writerow([k, "plot" if k < K else "opinion", label.value if label else "",
                             *(repr(float(v)) for v in W[:, k])])


def read_topic_vectors(path: str | Path) -> tuple[list[str], list[dict], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    meta = [{"topic": int(r[0]), "tag": r[1], "label": r[2] or None} for r in body]
    W = np.array([[float(v) for v in r[3:]] for r in body]).T
    return header[3:], meta, W


@dataclass
class EvalReport:
    coherence: float | None = None
    coherence_per_topic: list[float | None] | None = None
    topic_uniqueness: float | None = None
    topic_uniqueness_per_topic: list[float] | None = None
    accuracy: float | None = None
    accuracy_n: int | None = None
    accuracy_skipped: int | None = None
    rho: float | None = None
    expected_rho: float | None = None
    topic_labels: list[dict] | None = None
    unlabelable_topics: list[int] | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}
