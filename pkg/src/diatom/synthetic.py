"""Planted-topic review corpus with known plot/opinion structure.

Every review mixes one plot block, one opinion block (which alone decides
its label), an optional neutral block and shared background words. Plot and
label are assigned on a balanced grid, so label and plot identity are
exactly independent in every split.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import AnnotatedSentence, ProxyLabel, write_jsonl
from .embeddings import write_embedding_table


@dataclass
class GenConfig:
    K_star: int = 8
    S_star: int = 4
    V: int = 600
    n_train: int = 2000
    n_dev: int = 250
    n_test: int = 250
    seed: int = 7
    n_neutral: int = 0
    block_size: int = 30
    doc_length: int = 80
    plot_length: int = 300
    # Dirichlet concentration over (plot, opinion, neutral, background) token shares
    mix_concentration: tuple[float, float, float, float] = (6.0, 3.0, 1.0, 1.0)
    word_concentration: float = 1.0
    sentences_per_label: int = 100
    sentence_length: int = 8
    embedding_dim: int = 32
    embedding_noise: float = 0.5

    def __post_init__(self) -> None:
        if self.K_star < 1 or self.S_star < 2 or self.S_star % 2:
            raise ValueError("need K_star >= 1 and an even S_star >= 2 (half positive, half negative)")
        if self.n_neutral < 0 or self.block_size < 1:
            raise ValueError("n_neutral >= 0 and block_size >= 1 required")
        if self.n_train < 2 or self.n_dev < 0 or self.n_test < 0:
            raise ValueError("invalid split sizes")
        if self.background_size < 1:
            raise ValueError(
                f"vocabulary too small: V={self.V} cannot hold {self.n_blocks} blocks of "
                f"{self.block_size} words plus background words"
            )
        self.mix_concentration = tuple(float(c) for c in self.mix_concentration)
        if len(self.mix_concentration) != 4 or min(self.mix_concentration) <= 0:
            raise ValueError("mix_concentration needs four positive values")

    @property
    def n_blocks(self) -> int:
        return self.K_star + self.S_star + self.n_neutral

    @property
    def background_size(self) -> int:
        return self.V - self.n_blocks * self.block_size

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mix_concentration"] = list(self.mix_concentration)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "GenConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown generator config fields: {sorted(unknown)}")
        data = dict(data)
        if "mix_concentration" in data:
            data["mix_concentration"] = tuple(data["mix_concentration"])
        return cls(**data)


@dataclass
class Block:
    name: str
    kind: str            # plot | positive | negative | neutral | background
    words: list[str]
    probs: np.ndarray


@dataclass
class SyntheticCorpus:
    config: GenConfig
    blocks: list[Block]
    reviews: dict[str, list[dict]]
    plots: list[dict]
    annotations: list[AnnotatedSentence]
    embeddings: dict[str, np.ndarray]
    assignments: dict[str, dict] = field(default_factory=dict)

    def word_kind(self) -> dict[str, str]:
        return {w: b.kind for b in self.blocks for w in b.words}

    def ground_truth(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "blocks": [{"name": b.name, "kind": b.kind, "words": b.words} for b in self.blocks],
            "documents": self.assignments,
        }

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for split, recs in self.reviews.items():
            paths[split] = out / f"{split}.jsonl"
            write_jsonl(paths[split], recs)
        paths["plots"] = out / "plots.jsonl"
        write_jsonl(paths["plots"], self.plots)
        paths["annotations"] = out / "annotations.jsonl"
        write_jsonl(paths["annotations"], ({"text": s.text, "label": s.label.value} for s in self.annotations))
        paths["embeddings"] = out / "embeddings.txt"
        write_embedding_table(paths["embeddings"], self.embeddings)
        paths["ground_truth"] = out / "ground_truth.json"
        paths["ground_truth"].write_text(json.dumps(self.ground_truth(), sort_keys=True, indent=1) + "\n",
                                         encoding="utf-8")
        return paths


def _make_blocks(cfg: GenConfig, rng: np.random.Generator) -> list[Block]:
    def block(name: str, kind: str, prefix: str, n: int) -> Block:
        words = [f"{prefix}w{i:02d}" for i in range(n)]
        return Block(name, kind, words, rng.dirichlet(np.full(n, cfg.word_concentration)))

    blocks = [block(f"plot{b}", "plot", f"plot{b}", cfg.block_size) for b in range(cfg.K_star)]
    half = cfg.S_star // 2
    for b in range(cfg.S_star):
        kind = "positive" if b < half else "negative"
        blocks.append(block(f"op{b}", kind, f"{kind[:3]}{b}", cfg.block_size))
    blocks += [block(f"neu{b}", "neutral", f"neu{b}", cfg.block_size) for b in range(cfg.n_neutral)]
    bg_words = [f"gen{i:03d}" for i in range(cfg.background_size)]
    zipf = 1.0 / np.arange(1, len(bg_words) + 1)
    blocks.append(Block("background", "background", bg_words, zipf / zipf.sum()))
    return blocks


def _draw(block: Block, n: int, rng: np.random.Generator) -> list[str]:
    if n <= 0:
        return []
    return [block.words[i] for i in rng.choice(len(block.words), size=n, p=block.probs)]


def synthetic_corpus(cfg: GenConfig = GenConfig()) -> SyntheticCorpus:
    rng = np.random.default_rng(cfg.seed)
    blocks = _make_blocks(cfg, rng)
    plot_blocks = blocks[:cfg.K_star]
    opinion = blocks[cfg.K_star:cfg.K_star + cfg.S_star]
    positive = [b for b in opinion if b.kind == "positive"]
    negative = [b for b in opinion if b.kind == "negative"]
    neutral = blocks[cfg.K_star + cfg.S_star:-1]
    background = blocks[-1]
    alpha = np.asarray(cfg.mix_concentration)
    if not neutral:
        alpha = alpha[[0, 1, 3]]

    reviews: dict[str, list[dict]] = {}
    assignments: dict[str, dict] = {}
    for split, n in (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test)):
        # balanced (plot, label) grid, then shuffled
        grid = [(i % cfg.K_star, (i // cfg.K_star) % 2) for i in range(n)]
        order = rng.permutation(n)
        recs = []
        for j, g in enumerate(order):
            plot_b, lab = grid[g]
            op_block = (positive if lab == 0 else negative)[rng.integers(len(positive))]
            parts = [plot_blocks[plot_b], op_block]
            neu_block = None
            if neutral:
                neu_block = neutral[rng.integers(len(neutral))]
                parts.append(neu_block)
            parts.append(background)
            shares = rng.dirichlet(alpha)
            length = max(cfg.sentence_length, int(rng.poisson(cfg.doc_length)))
            counts = rng.multinomial(length, shares)
            words: list[str] = []
            for blk, c in zip(parts, counts):
                words += _draw(blk, int(c), rng)
            rng.shuffle(words)
            doc_id = f"{split}-{j:05d}"
            recs.append({
                "doc_id": doc_id,
                "text": " ".join(words),
                "label": "pos" if lab == 0 else "neg",
                "plot_id": plot_blocks[plot_b].name,
            })
            assignments[doc_id] = {
                "plot_block": plot_blocks[plot_b].name,
                "opinion_block": op_block.name,
                "neutral_block": neu_block.name if neu_block else None,
                "label": "Positive" if lab == 0 else "Negative",
            }
        reviews[split] = recs

    plots = [{"plot_id": b.name, "text": " ".join(_draw(b, cfg.plot_length, rng))} for b in plot_blocks]

    sentence_sources = [
        (ProxyLabel.PLOT, plot_blocks),
        (ProxyLabel.POSITIVE, positive),
        (ProxyLabel.NEGATIVE, negative),
        (ProxyLabel.NONE, neutral or [background]),
    ]
    annotations = []
    for label, pool in sentence_sources:
        for i in range(cfg.sentences_per_label):
            blk = pool[i % len(pool)]
            words = _draw(blk, cfg.sentence_length - 2, rng) + _draw(background, 2, rng)
            rng.shuffle(words)
            annotations.append(AnnotatedSentence(" ".join(words).capitalize() + ".", label))
    perm = rng.permutation(len(annotations))
    annotations = [annotations[i] for i in perm]

    embeddings: dict[str, np.ndarray] = {}
    for blk in blocks:
        if blk.kind == "background":
            for w in blk.words:
                embeddings[w] = rng.normal(size=cfg.embedding_dim)
            continue
        centroid = rng.normal(size=cfg.embedding_dim)
        for w in blk.words:
            embeddings[w] = centroid + cfg.embedding_noise * rng.normal(size=cfg.embedding_dim)

    return SyntheticCorpus(cfg, blocks, reviews, plots, annotations, embeddings, assignments)
