"""Tokenization, vocabulary, bag-of-words vectors and corpus file loading."""
from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_SIZE = 2000
MIN_TOKEN_LEN = 3

_WORD_RE = re.compile(r"[^\W_]+")


class CorpusError(ValueError):
    """Raised for malformed corpus, plot or annotation input."""


class Sentiment(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NEUTRAL = "Neutral"


class ProxyLabel(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    PLOT = "Plot"
    NONE = "None"


# class index order used by the sentiment head
SENTIMENT_ORDER = (Sentiment.POSITIVE, Sentiment.NEGATIVE, Sentiment.NEUTRAL)

_REVIEW_LABELS = {"pos": Sentiment.POSITIVE, "neg": Sentiment.NEGATIVE, "neu": Sentiment.NEUTRAL}


def _load_stopwords() -> frozenset[str]:
    text = resources.files("diatom").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


STOPWORDS = _load_stopwords()


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics and drop stopwords, short and numeric tokens."""
    out = []
    for tok in _WORD_RE.findall(text.lower()):
        if len(tok) < MIN_TOKEN_LEN or tok.isdigit() or tok in STOPWORDS:
            continue
        out.append(tok)
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise CorpusError("vocabulary tokens must be unique")
        return cls(tokens, index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def build_vocabulary(docs: Iterable[Sequence[str]], max_size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens, ties broken lexicographically."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    freq: Counter[str] = Counter()
    for doc in docs:
        freq.update(doc)
    if not freq:
        raise CorpusError("no tokens")
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary.from_tokens([tok for tok, _ in ranked[:max_size]])


@dataclass
class BowDocument:
    doc_id: str
    counts: dict[int, int]
    sentiment_label: Sentiment | None = None
    plot_id: str | None = None

    @property
    def length(self) -> int:
        return sum(self.counts.values())

    @property
    def is_empty(self) -> bool:
        return not self.counts


@dataclass
class PlotDocument:
    plot_id: str
    counts: dict[int, int]

    @property
    def length(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class AnnotatedSentence:
    text: str
    label: ProxyLabel


def vectorize(tokens: Sequence[str], vocab: Vocabulary) -> dict[int, int]:
    """Count in-vocabulary tokens; OOV tokens are dropped. An empty dict marks an empty document."""
    counts: Counter[int] = Counter()
    for tok in tokens:
        idx = vocab.index.get(tok)
        if idx is not None:
            counts[idx] += 1
    return dict(sorted(counts.items()))


def background_log_frequency(
    corpus: Sequence[BowDocument | PlotDocument], vocab_size: int, smoothing: float = 1.0
) -> np.ndarray:
    """Smoothed log unigram distribution m over the vocabulary."""
    totals = np.zeros(vocab_size, dtype=np.float64)
    for doc in corpus:
        for idx, c in doc.counts.items():
            totals[idx] += c
    smoothed = totals + smoothing
    if smoothed.sum() <= 0:
        raise CorpusError("background frequencies need a nonzero count or positive smoothing")
    return np.log(smoothed / smoothed.sum())


def to_matrix(docs: Sequence[BowDocument | PlotDocument], vocab_size: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, doc in enumerate(docs):
        for idx, c in doc.counts.items():
            rows.append(r)
            cols.append(idx)
            vals.append(c)
    return sp.csr_matrix(
        (np.asarray(vals, dtype=np.float32), (rows, cols)), shape=(len(docs), vocab_size)
    )


@dataclass
class CorpusSplit:
    vocab: Vocabulary
    train: list[BowDocument]
    dev: list[BowDocument]
    test: list[BowDocument]
    plots: list[PlotDocument]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for split in (self.train, self.dev, self.test):
            ids = {d.doc_id for d in split}
            if seen & ids:
                raise CorpusError(f"doc_ids shared across splits: {sorted(seen & ids)[:5]}")
            seen |= ids
        plot_ids = [p.plot_id for p in self.plots]
        if len(set(plot_ids)) != len(plot_ids):
            raise CorpusError("duplicate plot_id in plots")
        known = set(plot_ids)
        for d in self.all_reviews():
            if d.plot_id and d.plot_id not in known:
                raise CorpusError(f"review {d.doc_id!r} references unknown plot {d.plot_id!r}")

    def all_reviews(self) -> list[BowDocument]:
        return self.train + self.dev + self.test

    @property
    def plot_index(self) -> dict[str, int]:
        return {p.plot_id: i for i, p in enumerate(self.plots)}

    @property
    def num_classes(self) -> int:
        labels = {d.sentiment_label for d in self.all_reviews()}
        return 3 if Sentiment.NEUTRAL in labels else 2

    def statistics(self) -> dict:
        n = len(self.all_reviews())
        labels = Counter(d.sentiment_label for d in self.all_reviews())
        return {
            "train": len(self.train),
            "dev": len(self.dev),
            "test": len(self.test),
            "reviews": n,
            "plots": len(self.plots),
            "vocab": self.vocab.size,
            "label_proportions": {
                (k.value if k else "unlabeled"): v / n for k, v in sorted(
                    labels.items(), key=lambda kv: kv[0].value if kv[0] else "")
            } if n else {},
        }


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            records.append(rec)
    return records


def _parse_review_label(value, where: str) -> Sentiment | None:
    if value is None:
        return None
    try:
        return _REVIEW_LABELS[value]
    except (KeyError, TypeError):
        raise CorpusError(f"{where}: unknown label {value!r}") from None


SPLITS = ("train", "dev", "test")


def load_corpus(
    path: str | Path, format: str = "jsonl", max_vocab: int = DEFAULT_VOCAB_SIZE,
    plots: str | Path | None = None,
) -> CorpusSplit:
    """Load ``{train,dev,test}.jsonl`` and optional ``plots.jsonl`` from a directory.

    ``plots`` points at a plot file elsewhere. The vocabulary is built from
    training reviews and plot summaries. All-OOV reviews are kept (flagged by
    ``is_empty``) so split sizes match the files.
    """
    if format != "jsonl":
        raise CorpusError(f"unsupported corpus format {format!r}")
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")

    raw: dict[str, list[tuple[str, list[str], Sentiment | None, str | None]]] = {}
    for split in SPLITS:
        fpath = root / f"{split}.jsonl"
        if not fpath.exists():
            if split == "train":
                raise CorpusError(f"missing {fpath}")
            raw[split] = []
            continue
        rows = []
        for lineno, rec in enumerate(_read_jsonl(fpath), 1):
            where = f"{fpath}:{lineno}"
            if "doc_id" not in rec or "text" not in rec:
                raise CorpusError(f"{where}: review needs doc_id and text")
            label = _parse_review_label(rec.get("label"), where)
            rows.append((str(rec["doc_id"]), tokenize(rec["text"]), label, rec.get("plot_id") or None))
        raw[split] = rows

    plot_raw: list[tuple[str, list[str]]] = []
    ppath = Path(plots) if plots is not None else root / "plots.jsonl"
    if plots is not None and not ppath.exists():
        raise CorpusError(f"plot file not found: {ppath}")
    if ppath.exists():
        for lineno, rec in enumerate(_read_jsonl(ppath), 1):
            if "plot_id" not in rec or "text" not in rec:
                raise CorpusError(f"{ppath}:{lineno}: plot needs plot_id and text")
            plot_raw.append((str(rec["plot_id"]), tokenize(rec["text"])))

    vocab = build_vocabulary(
        [toks for _, toks, _, _ in raw["train"]] + [toks for _, toks in plot_raw], max_vocab
    )

    splits: dict[str, list[BowDocument]] = {}
    for split in SPLITS:
        splits[split] = [
            BowDocument(doc_id, vectorize(toks, vocab), label, plot_id)
            for doc_id, toks, label, plot_id in raw[split]
        ]
    plots = [PlotDocument(pid, vectorize(toks, vocab)) for pid, toks in plot_raw]

    corpus = CorpusSplit(vocab, splits["train"], splits["dev"], splits["test"], plots)
    logger.info("loaded corpus %s: %s", root, corpus.statistics())
    return corpus


def reference_texts(path: str | Path, which: str = "all", plots: str | Path | None = None
                    ) -> list[list[str]]:
    """Tokenized texts in file order, for window statistics.

    ``which`` is a split name, ``plots``, or ``all`` (every split plus plots).
    """
    root = Path(path)
    names = [*SPLITS, "plots"] if which == "all" else [which]
    out = []
    for name in names:
        if name not in (*SPLITS, "plots"):
            raise CorpusError(f"unknown reference {which!r}")
        fpath = Path(plots) if name == "plots" and plots is not None else root / f"{name}.jsonl"
        if fpath.exists():
            out += [tokenize(rec.get("text", "")) for rec in _read_jsonl(fpath)]
    if not out:
        raise CorpusError(f"no reference texts found for {which!r} under {root}")
    return out


def load_annotations(path: str | Path) -> list[AnnotatedSentence]:
    out = []
    path = Path(path)
    for lineno, rec in enumerate(_read_jsonl(path), 1):
        try:
            label = ProxyLabel(rec.get("label"))
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: unknown annotation label {rec.get('label')!r}") from None
        out.append(AnnotatedSentence(str(rec.get("text", "")), label))
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")

