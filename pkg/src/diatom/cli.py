"""``diatom`` command line: train, eval, topics, synth, export-vectors.

One JSON config drives every command. Flags only pick the subcommand and
override the seed and the output directory. Exit codes are 0 on success,
2 for configuration or input errors and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import CorpusError, load_annotations, load_corpus, reference_texts
from .embeddings import EmbeddingError, load_embedding_table, load_sentence_cache
from .eval import (
    AnnotationIndex, CoherenceConfig, EvalReport, disentanglement_rate, export_topic_vectors,
    label_topics, npmi_coherence, sentiment_accuracy, topic_uniqueness,
)
from .model import ModelConfig, NumericalError, topic_word_matrix
from .synthetic import GenConfig, synthetic_corpus
from .training import TrainConfig, model_from_config, train

logger = logging.getLogger("diatom")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "DIATOM_SEED"
METRICS = ("coherence", "tu", "accuracy", "rho")


class ConfigError(ValueError):
    pass


def _from_mapping(cls, data: Mapping | None, section: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass
class Paths:
    corpus: str
    plots: str | None = None
    annotations: str | None = None
    embeddings: str | None = None
    sentence_cache: str | None = None
    output_dir: str = "run"


@dataclass
class Ablation:
    orth: bool = True
    sentiment: bool = True
    adversarial: bool = True
    plot_net: bool = True


# fields taken from the corpus rather than the config file
_DERIVED = ("V", "M", "P")


@dataclass
class ExperimentConfig:
    paths: Paths
    model: dict = field(default_factory=lambda: {"K": 50, "S": 50})
    train: TrainConfig = field(default_factory=TrainConfig)
    coherence: CoherenceConfig = field(default_factory=CoherenceConfig)
    ablation: Ablation = field(default_factory=Ablation)
    max_vocab: int = 2000

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path = ".") -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
        if "paths" not in data or "corpus" not in (data["paths"] or {}):
            raise ConfigError("[paths] corpus is required")
        paths = _from_mapping(Paths, data["paths"], "paths")
        base = Path(base_dir)
        for f in dataclasses.fields(Paths):
            value = getattr(paths, f.name)
            if value is not None:
                setattr(paths, f.name, str(base / value))

        model = dict(data.get("model") or {"K": 50, "S": 50})
        for name in _DERIVED:
            if name in model:
                raise ConfigError(f"[model] {name} is derived from the corpus; remove it")
        known = {f.name for f in dataclasses.fields(ModelConfig)} - set(_DERIVED)
        bad = set(model) - known
        if bad:
            raise ConfigError(f"[model] unknown fields: {sorted(bad)}")
        if "K" not in model or "S" not in model:
            raise ConfigError("[model] K and S are required")

        max_vocab = data.get("max_vocab", 2000)
        if not isinstance(max_vocab, int) or max_vocab < 1:
            raise ConfigError("max_vocab must be a positive integer")
        return cls(
            paths=paths,
            model=model,
            train=_from_mapping(TrainConfig, data.get("train"), "train"),
            coherence=_from_mapping(CoherenceConfig, data.get("coherence"), "coherence"),
            ablation=_from_mapping(Ablation, data.get("ablation"), "ablation"),
            max_vocab=max_vocab,
        )

    def model_config(self, V: int, M: int, P: int) -> ModelConfig:
        values = {
            **self.model, "V": V, "M": M, "P": P,
            "enable_orth": self.ablation.orth,
            "enable_sentiment": self.ablation.sentiment,
            "enable_adversarial": self.ablation.adversarial,
            "enable_plot_net": self.ablation.plot_net,
        }
        try:
            return ModelConfig(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[model] {exc}") from None

    def to_dict(self) -> dict:
        return {
            "paths": dataclasses.asdict(self.paths),
            "model": dict(sorted(self.model.items())),
            "train": self.train.to_dict(),
            "coherence": dataclasses.asdict(self.coherence),
            "ablation": dataclasses.asdict(self.ablation),
            "max_vocab": self.max_vocab,
        }


def load_config(path: str | Path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Read a config file; precedence for the seed is ``--seed``, then DIATOM_SEED, then the file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}") from None
    cfg = ExperimentConfig.from_dict(data, base_dir=path.parent)

    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    if output_dir is not None:
        cfg.paths.output_dir = output_dir
    return cfg


def _check_paths(cfg: ExperimentConfig, needed: Sequence[str]) -> None:
    for name in needed:
        value = getattr(cfg.paths, name)
        if value is None:
            raise ConfigError(f"[paths] {name} is required for this command")
        if not Path(value).exists():
            raise ConfigError(f"[paths] {name} not found: {value}")


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.paths.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output dir {out} is not writable: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output dir {out} is not writable")
    return out


def _attach_log_file(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "train.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


def _load_corpus(cfg: ExperimentConfig):
    _check_paths(cfg, ["corpus"])
    return load_corpus(cfg.paths.corpus, max_vocab=cfg.max_vocab, plots=cfg.paths.plots)


def _annotation_index(annotations: str, embeddings: str, cache: str | None) -> AnnotationIndex:
    table = load_embedding_table(embeddings)
    sentences = load_annotations(annotations)
    return AnnotationIndex(sentences, table, load_sentence_cache(cache) if cache else None)


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed, args.output_dir)
    corpus = _load_corpus(cfg)
    out = _output_dir(cfg)
    handler = _attach_log_file(out)
    try:
        mcfg = cfg.model_config(corpus.vocab.size, corpus.num_classes, len(corpus.plots))
        model = model_from_config(mcfg, corpus, seed=cfg.train.seed)
        model, history = train(model, corpus, cfg.train)

        (out / "config.resolved.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
        (out / "history.jsonl").write_text(history.to_jsonl(), encoding="utf-8")
        save_checkpoint(out / "checkpoint.bin", model, corpus.vocab,
                        extra={"train": cfg.train.to_dict(), "best_epoch": history.best_epoch})
        logger.info("wrote %s (best epoch %d)", out, history.best_epoch)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def _parse_metrics(raw: str | None) -> list[str]:
    if not raw:
        return list(METRICS)
    chosen = [m.strip() for m in raw.split(",") if m.strip()]
    bad = [m for m in chosen if m not in METRICS]
    if bad:
        raise ConfigError(f"unknown metrics {bad}; choose from {list(METRICS)}")
    return chosen


def cmd_eval(args) -> int:
    metrics = _parse_metrics(args.metrics)
    cfg = load_config(args.config, args.seed, args.output_dir)
    model, vocab, _ = load_checkpoint(args.model)
    topics = topic_word_matrix(model, vocab)
    report = EvalReport()

    if "tu" in metrics:
        report.topic_uniqueness_per_topic, report.topic_uniqueness = topic_uniqueness(topics, 10)
    if "coherence" in metrics:
        _check_paths(cfg, ["corpus"])
        ref = reference_texts(cfg.paths.corpus, cfg.coherence.reference, plots=cfg.paths.plots)
        res = npmi_coherence(topics, ref, cfg.coherence)
        report.coherence, report.coherence_per_topic = res.mean, res.per_topic
    if "accuracy" in metrics:
        corpus = _load_corpus(cfg)
        if tuple(corpus.vocab.tokens) != tuple(vocab.tokens):
            raise ConfigError("checkpoint vocabulary does not match the corpus in the config")
        acc = sentiment_accuracy(model, corpus.test, corpus)
        report.accuracy, report.accuracy_n, report.accuracy_skipped = acc.accuracy, acc.n, acc.skipped
    if "rho" in metrics:
        _check_paths(cfg, ["annotations", "embeddings"])
        index = _annotation_index(cfg.paths.annotations, cfg.paths.embeddings, cfg.paths.sentence_cache)
        labels, unlabelable = label_topics(topics, index)
        report.rho = disentanglement_rate(labels)
        report.expected_rho = model.cfg.S / (model.cfg.K + model.cfg.S)
        report.topic_labels = [l.to_dict() for l in labels]
        report.unlabelable_topics = unlabelable

    out = _output_dir(cfg)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    print(json.dumps({k: v for k, v in report.to_dict().items() if not isinstance(v, list)}, sort_keys=True))
    return EXIT_OK


def cmd_topics(args) -> int:
    model, vocab, _ = load_checkpoint(args.model)
    n = args.top_words
    if n < 1:
        raise ConfigError("--top-words must be >= 1")
    if n > vocab.size:
        logger.warning("--top-words %d exceeds the vocabulary size; clamped to %d", n, vocab.size)
        n = vocab.size
    topics = topic_word_matrix(model, vocab)

    labels = None
    if args.annotations or args.embeddings:
        if not (args.annotations and args.embeddings):
            raise ConfigError("proxy labels need both --annotations and --embeddings")
        index = _annotation_index(args.annotations, args.embeddings, args.sentence_cache)
        found, _ = label_topics(topics, index)
        labels = {l.topic_index: l.label.value for l in found}

    for t in topics:
        cols = [f"{t.index:3d}", f"{t.tag:<7}"]
        if labels is not None:
            cols.append(f"{labels.get(t.index, '?'):<8}")
        cols.append(" ".join(t.top_tokens(n)))
        print("  ".join(cols))
    return EXIT_OK


def cmd_synth(args) -> int:
    data = {}
    if args.gen_config:
        try:
            data = json.loads(Path(args.gen_config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read generator config: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.gen_config}: malformed JSON at line {exc.lineno}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    elif os.environ.get(SEED_ENV):
        data["seed"] = int(os.environ[SEED_ENV])
    try:
        gen = GenConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"generator config: {exc}") from None
    out = Path(args.output_dir or "synthetic")
    paths = synthetic_corpus(gen).write(out)
    for name in sorted(paths):
        print(paths[name])
    return EXIT_OK


def cmd_export_vectors(args) -> int:
    model, vocab, _ = load_checkpoint(args.model)
    labels = None
    if args.config:
        cfg = load_config(args.config)
        if cfg.paths.annotations and cfg.paths.embeddings:
            index = _annotation_index(cfg.paths.annotations, cfg.paths.embeddings, cfg.paths.sentence_cache)
            found, _ = label_topics(topic_word_matrix(model, vocab), index)
            labels = {l.topic_index: l.label for l in found}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_topic_vectors(model, vocab.tokens, out, labels)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diatom", description="Train, evaluate and inspect DIATOM topic models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir")

    p = sub.add_parser("train", help="train a model from a config")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--metrics", help=f"comma-separated subset of {','.join(METRICS)}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topics", help="print topics")
    p.add_argument("--model", required=True)
    p.add_argument("--top-words", type=int, default=10)
    p.add_argument("--annotations")
    p.add_argument("--embeddings")
    p.add_argument("--sentence-cache")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("synth", help="write a planted synthetic corpus")
    p.add_argument("--gen-config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-vectors", help="write topic-word vectors as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_export_vectors)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    root = logging.getLogger()
    if not any(getattr(h, "_diatom_console", False) for h in root.handlers):
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        console._diatom_console = True
        root.addHandler(console)
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    if args.command == "train":
        logging.getLogger("diatom").setLevel(logging.INFO)
    try:
        return args.func(args)
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, EmbeddingError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except ValueError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_INPUT
    except BrokenPipeError:
        # output piped into e.g. ``head``; silence the flush at interpreter exit
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
