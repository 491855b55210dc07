"""Adam training loop with sequential unfreezing, early stopping and gradient checking."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import torch

from .corpus import SENTIMENT_ORDER, BowDocument, CorpusSplit, background_log_frequency, to_matrix
from .model import (
    ALL_TERMS, AUTOENCODER_GROUP, LOSS_FIELDS, PLOT_HEAD_GROUP, SENTIMENT_GROUP, DIATOM, Batch, LossBreakdown,
    ModelConfig, Noise, NumericalError,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.002
    dropout: float = 0.2
    unfreeze_e: int = 5
    unfreeze_n: int = 5
    seed: int = 0
    early_stop_patience: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.unfreeze_e < 0 or self.unfreeze_n < 0:
            raise ValueError("unfreeze_e and unfreeze_n must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("epochs >= 0 and early_stop_patience >= 1 required")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Stage:
    name: str
    terms: frozenset[str]
    groups: frozenset[str]


def unfreeze_schedule(epoch: int, cfg: TrainConfig) -> Stage:
    """Autoencoder first, then both classifiers at ``e``, the adversary at ``e + n``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    terms = {"autoencoder", "orth", "plot_vae"}
    groups = {AUTOENCODER_GROUP}
    name = "autoencoder"
    if epoch >= cfg.unfreeze_e:
        terms |= {"sent", "plot_clf"}
        groups |= {SENTIMENT_GROUP, PLOT_HEAD_GROUP}
        name = "classifier"
    if epoch >= cfg.unfreeze_e + cfg.unfreeze_n:
        terms.add("adv")
        name = "adversarial"
    return Stage(name, frozenset(terms), frozenset(groups))


# ---------------------------------------------------------------------------
# data

@dataclass
class DocTensors:
    """Review counts with integer labels and paired plot indices (-1 when missing)."""
    x: sp.csr_matrix
    y: np.ndarray
    plot_y: np.ndarray
    plots: sp.csr_matrix | None

    def __len__(self) -> int:
        return self.x.shape[0]

    def batch(self, idx: np.ndarray) -> Batch:
        x = torch.from_numpy(self.x[idx].toarray())
        y = torch.from_numpy(self.y[idx])
        plot_x = plot_y = None
        if self.plots is not None:
            py = self.plot_y[idx]
            dense = self.plots[np.clip(py, 0, None)].toarray()
            dense[py < 0] = 0.0
            plot_x, plot_y = torch.from_numpy(dense), torch.from_numpy(py)
        return Batch(x, y, plot_x, plot_y)

    def all(self) -> Batch:
        return self.batch(np.arange(len(self)))


def label_index(doc: BowDocument) -> int:
    return -1 if doc.sentiment_label is None else SENTIMENT_ORDER.index(doc.sentiment_label)


def doc_tensors(docs: Sequence[BowDocument], corpus: CorpusSplit) -> DocTensors:
    pidx = corpus.plot_index
    V = corpus.vocab.size
    return DocTensors(
        x=to_matrix(docs, V),
        y=np.array([label_index(d) for d in docs], dtype=np.int64),
        plot_y=np.array([pidx.get(d.plot_id, -1) if d.plot_id else -1 for d in docs], dtype=np.int64),
        plots=to_matrix(corpus.plots, V) if corpus.plots else None,
    )


def build_model(corpus: CorpusSplit, K: int, S: int, seed: int = 0, **overrides) -> DIATOM:
    """Model sized to ``corpus`` with its background log-frequencies; init seeded by ``seed``."""
    cfg = ModelConfig(V=corpus.vocab.size, K=K, S=S, M=corpus.num_classes,
                      P=len(corpus.plots), **overrides)
    return model_from_config(cfg, corpus, seed)


def model_from_config(cfg: ModelConfig, corpus: CorpusSplit, seed: int = 0) -> DIATOM:
    bg = background_log_frequency(corpus.train + list(corpus.plots), corpus.vocab.size)
    return DIATOM(cfg, bg, generator=torch.Generator().manual_seed(seed))


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    stage: str
    active_groups: list[str]
    train: LossBreakdown
    dev: LossBreakdown

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "stage": self.stage,
            "active_groups": self.active_groups,
            "train": self.train.to_dict(),
            "dev": self.dev.to_dict(),
        }


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def dev_totals(self) -> list[float]:
        return [r.dev.total for r in self.epochs]

    def to_jsonl(self) -> str:
        # wall-clock times are excluded so identical runs give identical files
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.epochs)


def _mean_breakdown(parts: list[tuple[int, LossBreakdown]]) -> LossBreakdown:
    n = sum(w for w, _ in parts)
    out = {}
    for name in (*LOSS_FIELDS, "total"):
        out[name] = sum(w * getattr(b, name) for w, b in parts) / n
    return LossBreakdown(**out)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    # batch norm needs at least two rows per batch
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


@torch.no_grad()
def evaluate_loss(model: DIATOM, data: DocTensors, seed: int = 0, chunk: int = 1024) -> LossBreakdown:
    """Full-objective loss in eval mode with a fixed noise seed."""
    was_training = model.training
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    parts = []
    for idx in _batches(np.arange(len(data)), chunk):
        batch = data.batch(idx)
        noise = Noise.draw(model.cfg, len(batch), gen)
        _, bd = model.objective(batch, noise, ALL_TERMS)
        parts.append((len(idx), bd))
    model.train(was_training)
    return _mean_breakdown(parts)


def train(model: DIATOM, corpus: CorpusSplit, cfg: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[DIATOM, TrainHistory]:
    """Train in place and return the model restored to its best dev-loss epoch."""
    train_docs = [d for d in corpus.train if not d.is_empty]
    if len(train_docs) < len(corpus.train):
        logger.warning("excluding %d empty training documents", len(corpus.train) - len(train_docs))
    if len(train_docs) < 2:
        raise ValueError("training set needs at least two non-empty documents")
    train_data = doc_tensors(train_docs, corpus)
    dev_docs = [d for d in corpus.dev if not d.is_empty]
    dev_data = doc_tensors(dev_docs, corpus) if len(dev_docs) >= 2 else None

    torch.manual_seed(cfg.seed)  # dropout masks use the global generator
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    groups = model.parameter_groups()
    history = TrainHistory()
    best_state, best_loss, since_best = None, float("inf"), 0

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        stage = unfreeze_schedule(epoch, cfg)
        frozen = [p for g, params in groups.items() if g not in stage.groups for _, p in params]
        model.train()
        model.set_dropout(cfg.dropout)
        parts = []
        for b, idx in enumerate(_batches(rng.permutation(len(train_data)), cfg.batch_size)):
            batch = train_data.batch(idx)
            noise = Noise.draw(model.cfg, len(batch), noise_gen)
            try:
                loss, bd = model.objective(batch, noise, stage.terms)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from None
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            for p in frozen:
                p.grad = None
            optimizer.step()
            parts.append((len(idx), bd))
        model.set_dropout(0.0)
        train_bd = _mean_breakdown(parts)
        dev_bd = evaluate_loss(model, dev_data, seed=cfg.seed + 1) if dev_data is not None else train_bd
        record = EpochRecord(epoch, stage.name, sorted(stage.groups), train_bd, dev_bd)
        history.epochs.append(record)
        history.wall_clock.append(time.perf_counter() - start)
        logger.info("epoch %d [%s] train %.4f dev %.4f", epoch, stage.name, train_bd.total, dev_bd.total)
        if on_epoch is not None:
            on_epoch(record)

        if dev_bd.total < best_loss:
            best_loss, since_best = dev_bd.total, 0
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                logger.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> tuple[str, float]:
        return max(self.max_rel_error.items(), key=lambda kv: kv[1])

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error.values())


def gradient_check(model: DIATOM, batch: Batch, tolerance: float = 1e-4, step: float = 1e-5,
                   seed: int = 0, floor: float = 1e-3,
                   corrupt: Callable[[str, torch.Tensor], torch.Tensor] | None = None) -> GradCheckReport:
    """Compare autograd gradients of the full objective with central differences.

    Works on a float64 copy in training mode with dropout off. The noise draw
    and the adversarial-path head weights are held fixed so both routes see the
    same function. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    ``corrupt`` may rewrite an analytic gradient (negative controls).
    """
    m = copy.deepcopy(model).double()
    m.train()
    m.set_dropout(0.0)
    batch = batch.to(torch.float64)
    noise = Noise.draw(m.cfg, len(batch), torch.Generator().manual_seed(seed), dtype=torch.float64)
    head = {k: v.detach().clone() for k, v in m.sent_head.named_parameters()}

    def f() -> torch.Tensor:
        loss, _ = m.objective(batch, noise, ALL_TERMS, adv_head_params=head)
        return loss

    m.zero_grad(set_to_none=True)
    f().backward()
    errors = {}
    with torch.no_grad():
        for name, p in m.named_parameters():
            analytic = torch.zeros_like(p) if p.grad is None else p.grad.clone()
            if corrupt is not None:
                analytic = corrupt(name, analytic)
            flat = p.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                h = step * max(1.0, abs(orig))
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
            a = analytic.view(-1)
            denom = torch.maximum(torch.maximum(a.abs(), numeric.abs()), torch.tensor(floor, dtype=a.dtype))
            errors[name] = float(((a - numeric).abs() / denom).max())
    return GradCheckReport(errors, tolerance)
