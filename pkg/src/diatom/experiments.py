"""Synthetic disentanglement trials shared by the scripts and the acceptance suite."""
from __future__ import annotations

import dataclasses
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusSplit, load_annotations, load_corpus
from .embeddings import load_embedding_table
from .eval import (
    AnnotationIndex, disentanglement_rate, label_topics, linear_probe_accuracy, mean_latents,
    sentiment_accuracy, topic_uniqueness,
)
from .model import topic_word_matrix
from .synthetic import GenConfig, synthetic_corpus
from .training import TrainConfig, build_model, train

# hyperparameters for the K=8, S=4 synthetic setting
SYNTH_MODEL = dict(gamma=200.0, beta=200.0, eta=20.0, mix_identity=True,
                   weight_plot_za=10.0, weight_plot_zd=10.0)
SYNTH_TRAIN = dict(epochs=30, learning_rate=0.002, dropout=0.2, unfreeze_e=5, unfreeze_n=5,
                   early_stop_patience=30)


@dataclass
class TrialResult:
    seed: int
    probe_za: float
    probe_zs: float
    accuracy: float
    rho: float
    n_opinion_topics: int
    tu: float
    labels: list[str]
    best_epoch: int
    seconds: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_synthetic(gen: GenConfig, out_dir: str | Path | None = None):
    """Generate, write and reload a synthetic corpus through the regular file loaders."""
    synth = synthetic_corpus(gen)
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        out_dir = tmp.name
    paths = synth.write(out_dir)
    corpus = load_corpus(out_dir)
    annotations = load_annotations(paths["annotations"])
    table = load_embedding_table(paths["embeddings"])
    if tmp is not None:
        tmp.cleanup()
    return synth, corpus, annotations, table


def run_trial(corpus: CorpusSplit, annotations, table, K: int = 8, S: int = 4, seed: int = 0,
              model_overrides: dict | None = None, train_overrides: dict | None = None) -> TrialResult:
    start = time.perf_counter()
    overrides = {**SYNTH_MODEL, **(model_overrides or {})}
    tcfg = TrainConfig(**{**SYNTH_TRAIN, **(train_overrides or {}), "seed": seed})
    model = build_model(corpus, K=K, S=S, seed=seed, **overrides)
    model, history = train(model, corpus, tcfg)

    za_tr, zs_tr, y_tr = mean_latents(model, corpus.train, corpus)
    za_te, zs_te, y_te = mean_latents(model, corpus.test, corpus)
    probe_za = linear_probe_accuracy(za_tr, y_tr, za_te, y_te, seed=seed)
    probe_zs = linear_probe_accuracy(zs_tr, y_tr, zs_te, y_te, seed=seed)
    acc = sentiment_accuracy(model, corpus.test, corpus).accuracy

    topics = topic_word_matrix(model, corpus.vocab)
    labels, _ = label_topics(topics, AnnotationIndex(annotations, table))
    rho = disentanglement_rate(labels)
    _, tu = topic_uniqueness(topics, 10)
    return TrialResult(
        seed=seed, probe_za=probe_za, probe_zs=probe_zs, accuracy=acc, rho=rho,
        n_opinion_topics=sum(l.label.value in ("Positive", "Negative") for l in labels),
        tu=tu, labels=[l.label.value for l in labels], best_epoch=history.best_epoch,
        seconds=time.perf_counter() - start,
    )
