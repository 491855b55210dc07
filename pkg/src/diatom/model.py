"""DIATOM computation graph: dual logistic-normal encoders, shared decoder, loss terms."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Vocabulary

LOG_CLAMP = math.log(1e-10)

AUTOENCODER_GROUP = "autoencoder"
SENTIMENT_GROUP = "sentiment_head"
PLOT_HEAD_GROUP = "plot_head"


class NumericalError(RuntimeError):
    """A loss term became NaN or infinite."""


@dataclass
class ModelConfig:
    V: int
    K: int
    S: int
    M: int = 2
    P: int = 0
    hidden_doc: int = 100
    hidden_clf: int = 50
    L: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eta: float = 1.0
    weight_plot_vae: float = 1.0
    weight_plot_za: float = 1.0
    weight_plot_zd: float = 1.0
    enable_orth: bool = True
    enable_sentiment: bool = True
    enable_adversarial: bool = True
    enable_plot_net: bool = True
    batchnorm: bool = True
    mix_identity: bool = False

    def __post_init__(self) -> None:
        if self.K < 1 or self.S < 1:
            raise ValueError("K and S must be >= 1")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.V < 1 or self.P < 0 or self.L < 1:
            raise ValueError("V >= 1, P >= 0 and L >= 1 required")
        for name in ("alpha", "beta", "gamma", "eta", "weight_plot_vae", "weight_plot_za", "weight_plot_zd"):
            w = getattr(self, name)
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"loss weight {name} must be finite and non-negative, got {w}")

    @property
    def plot_net_active(self) -> bool:
        return self.enable_plot_net and self.P > 0

    @property
    def adversarial_active(self) -> bool:
        # the adversary reuses the sentiment head; without it there is nothing to fool
        return self.enable_adversarial and self.enable_sentiment

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)


LOSS_FIELDS = (
    "L_x", "KL_a", "KL_s", "L_adv", "L_sent", "L_orth", "L_d", "KL_d", "L_plot_za", "L_plot_zd",
)


@dataclass
class LossBreakdown:
    L_x: float = 0.0
    KL_a: float = 0.0
    KL_s: float = 0.0
    L_adv: float = 0.0
    L_sent: float = 0.0
    L_orth: float = 0.0
    L_d: float = 0.0
    KL_d: float = 0.0
    L_plot_za: float = 0.0
    L_plot_zd: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


ALL_TERMS = frozenset({"autoencoder", "orth", "plot_vae", "plot_clf", "sent", "adv"})


def term_weights(cfg: ModelConfig, active: frozenset[str] = ALL_TERMS) -> dict[str, float]:
    """Weight applied to each loss field, after config flags and the active stage."""
    w = dict.fromkeys(LOSS_FIELDS, 0.0)
    if "autoencoder" in active:
        w["L_x"] = w["KL_a"] = w["KL_s"] = cfg.alpha
    if "orth" in active and cfg.enable_orth:
        w["L_orth"] = cfg.eta
    if "plot_vae" in active and cfg.plot_net_active:
        w["L_d"] = w["KL_d"] = cfg.weight_plot_vae
    if "plot_clf" in active and cfg.plot_net_active:
        w["L_plot_za"] = cfg.weight_plot_za
        w["L_plot_zd"] = cfg.weight_plot_zd
    if "sent" in active and cfg.enable_sentiment:
        w["L_sent"] = cfg.gamma
    if "adv" in active and cfg.adversarial_active:
        w["L_adv"] = cfg.beta
    return w


def total_loss(terms: Mapping[str, torch.Tensor | float], cfg: ModelConfig,
               active: frozenset[str] = ALL_TERMS):
    """Weighted sum of loss terms; every term is minimized. Raises on NaN."""
    weights = term_weights(cfg, active)
    total = 0.0
    for name in LOSS_FIELDS:
        value = terms[name]
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericalError(f"loss term {name} is not finite ({v})")
        if weights[name] != 0.0:
            total = total + weights[name] * value
    return total


# ---------------------------------------------------------------------------
# elementary operations

def kl_diag_gaussian(mu: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag var) || N(0, I)) summed over the last axis."""
    return 0.5 * (mu.pow(2) + var - 1.0 - torch.log(var)).sum(-1)


def sample_simplex(mu: torch.Tensor, var: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return torch.softmax(mu + var.sqrt() * eps, dim=-1)


def clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp_min(1e-10))


def reconstruction_loss(counts: torch.Tensor, log_probs: Sequence[torch.Tensor]) -> torch.Tensor:
    """Per-document negative log-likelihood averaged over Monte Carlo samples."""
    total = sum(-(counts * lp.clamp_min(LOG_CLAMP)).sum(-1) for lp in log_probs)
    return total / len(log_probs)


def uniform_kl(log_probs: torch.Tensor) -> torch.Tensor:
    """KL(U || p) per row, with p given by its (clamped) log-probabilities."""
    m = log_probs.shape[-1]
    return -math.log(m) - log_probs.clamp_min(LOG_CLAMP).mean(-1)


def cross_entropy(log_probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-row cross-entropy for integer targets."""
    return -log_probs.clamp_min(LOG_CLAMP).gather(-1, target.unsqueeze(-1)).squeeze(-1)


def orthogonality_loss(W: torch.Tensor) -> torch.Tensor:
    """Frobenius norm of the column-normalized Gram matrix minus identity."""
    Wn = W / W.norm(dim=0, keepdim=True).clamp_min(1e-12)
    gram = Wn.T @ Wn
    eye = torch.eye(gram.shape[0], dtype=W.dtype, device=W.device)
    # eps under the sqrt keeps the gradient finite at an exactly orthonormal W
    return torch.sqrt(((gram - eye) ** 2).sum() + 1e-24)


# ---------------------------------------------------------------------------
# networks

class Encoder(nn.Module):
    """One softplus hidden layer with mean and variance heads."""

    def __init__(self, n_in: int, hidden: int, n_out: int):
        super().__init__()
        self.hidden = nn.Linear(n_in, hidden)
        self.mu = nn.Linear(hidden, n_out)
        self.var = nn.Linear(hidden, n_out)
        self.dropout = nn.Dropout(0.0)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.dropout(F.softplus(self.hidden(x)))
        return self.mu(h), F.softplus(self.var(h))


class SentimentHead(nn.Module):
    def __init__(self, n_in: int, hidden: int, n_classes: int):
        super().__init__()
        self.fc1 = nn.Linear(n_in, hidden)
        self.fc2 = nn.Linear(hidden, n_classes)

    def logits(self, z: torch.Tensor, params: Mapping[str, torch.Tensor] | None = None) -> torch.Tensor:
        if params is None:
            return self.fc2(F.softplus(self.fc1(z)))
        h = F.softplus(F.linear(z, params["fc1.weight"], params["fc1.bias"]))
        return F.linear(h, params["fc2.weight"], params["fc2.bias"])


@dataclass
class Batch:
    x: torch.Tensor                 # (B, V) counts
    y: torch.Tensor                 # (B,) class index, -1 unlabeled
    plot_x: torch.Tensor | None = None   # (B, V) plot counts paired with each review
    plot_y: torch.Tensor | None = None   # (B,) plot index, -1 when no plot

    def __len__(self) -> int:
        return self.x.shape[0]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(
            self.x.to(dtype), self.y,
            None if self.plot_x is None else self.plot_x.to(dtype), self.plot_y,
        )

    def permute(self, order) -> "Batch":
        order = torch.as_tensor(order)
        return Batch(
            self.x[order], self.y[order],
            None if self.plot_x is None else self.plot_x[order],
            None if self.plot_y is None else self.plot_y[order],
        )


@dataclass
class Noise:
    """Standard normal draws: ``a`` (L, B, K), ``s`` (L, B, S), ``d`` (B, K)."""
    a: torch.Tensor
    s: torch.Tensor
    d: torch.Tensor

    @classmethod
    def draw(cls, cfg: ModelConfig, batch_size: int, generator: torch.Generator | None = None,
             dtype: torch.dtype = torch.float32) -> "Noise":
        def g(*shape):
            return torch.randn(*shape, generator=generator, dtype=dtype)
        return cls(g(cfg.L, batch_size, cfg.K), g(cfg.L, batch_size, cfg.S), g(batch_size, cfg.K))

    @classmethod
    def zeros(cls, cfg: ModelConfig, batch_size: int, dtype: torch.dtype = torch.float32) -> "Noise":
        return cls(torch.zeros(1, batch_size, cfg.K, dtype=dtype),
                   torch.zeros(1, batch_size, cfg.S, dtype=dtype),
                   torch.zeros(batch_size, cfg.K, dtype=dtype))


class DIATOM(nn.Module):
    def __init__(self, cfg: ModelConfig, background: np.ndarray | torch.Tensor | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        K, S, V = cfg.K, cfg.S, cfg.V
        self.plot_encoder = Encoder(V, cfg.hidden_doc, K)
        self.sent_encoder = Encoder(V, cfg.hidden_doc, S)
        self.mix_a = nn.Linear(K, K)
        self.mix_s = nn.Linear(S, S)
        self.W = nn.Parameter(torch.empty(V, K + S))
        self.decoder_bn = nn.BatchNorm1d(V, affine=False)
        self.sent_head = SentimentHead(S, cfg.hidden_clf, cfg.M)
        self.plot_vae_encoder = Encoder(V, cfg.hidden_doc, K)
        self.W_d = nn.Parameter(torch.empty(V, K))
        self.plot_head = nn.Linear(K, max(cfg.P, 1))
        self.register_buffer("adv_adapter", torch.empty(S, K))
        bg = torch.zeros(V) if background is None else torch.as_tensor(background, dtype=torch.float32)
        if bg.shape != (V,):
            raise ValueError(f"background must have shape ({V},), got {tuple(bg.shape)}")
        self.register_buffer("background", bg.clone())
        self.reset_parameters(generator)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """Xavier-uniform dense layers, Martens-style sparse init for the topic matrices."""
        g = generator
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = math.sqrt(6.0 / (module.in_features + module.out_features))
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=g)
                    module.bias.zero_()
        for W in (self.W, self.W_d):
            _sparse_init_(W, sparsity=0.9, std=0.01, generator=g)
        with torch.no_grad():
            bound = math.sqrt(6.0 / (self.cfg.K + self.cfg.S))
            self.adv_adapter.uniform_(-bound, bound, generator=g)
            if self.cfg.mix_identity:
                for layer in (self.mix_a, self.mix_s):
                    layer.weight.copy_(torch.eye(layer.in_features))
                    layer.bias.zero_()

    # -- parameter groups ----------------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list] = {AUTOENCODER_GROUP: [], SENTIMENT_GROUP: [], PLOT_HEAD_GROUP: []}
        for name, p in self.named_parameters():
            if name.startswith("sent_head."):
                key = SENTIMENT_GROUP
            elif name.startswith("plot_head."):
                key = PLOT_HEAD_GROUP
            else:
                key = AUTOENCODER_GROUP
            groups[key].append((name, p))
        return groups

    def set_dropout(self, rate: float) -> None:
        for enc in (self.plot_encoder, self.sent_encoder, self.plot_vae_encoder):
            enc.dropout.p = rate

    # -- components ------------------------------------------------------------

    def encode_plot(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.plot_encoder(x)

    def encode_sentiment(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.sent_encoder(x)

    def mix(self, p: torch.Tensor, which: str) -> torch.Tensor:
        """Affine layer on the log-coordinates of a simplex point, then the simplex map.

        With identity weights and zero bias this returns ``p`` unchanged.
        """
        layer = self.mix_a if which == "a" else self.mix_s
        return torch.softmax(layer(clamped_log(p)), dim=-1)

    def decode_logits(self, z_a: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        eta = self.background + torch.cat([z_a, z_s], dim=-1) @ self.W.T
        if self.cfg.batchnorm:
            eta = self.decoder_bn(eta)
        return eta

    def decode(self, z_a: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.decode_logits(z_a, z_s), dim=-1)

    def classify_sentiment(self, z_s: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.sent_head.logits(z_s), dim=-1)

    def latents(self, x: torch.Tensor, noise_a=None, noise_s=None) -> tuple[torch.Tensor, torch.Tensor]:
        """z_a, z_s for a batch; zero noise (the default) gives the mean latent."""
        mu_a, var_a = self.encode_plot(x)
        mu_s, var_s = self.encode_sentiment(x)
        ea = torch.zeros_like(mu_a) if noise_a is None else noise_a
        es = torch.zeros_like(mu_s) if noise_s is None else noise_s
        return self.mix(sample_simplex(mu_a, var_a, ea), "a"), self.mix(sample_simplex(mu_s, var_s, es), "s")

    # -- objective ---------------------------------------------------------------

    def loss_terms(self, batch: Batch, noise: Noise,
                   adv_head_params: Mapping[str, torch.Tensor] | None = None) -> dict[str, torch.Tensor]:
        """Batch-mean value of every loss term (orthogonality is not per-document).

        ``adv_head_params`` replaces the sentiment head weights on the
        adversarial path; by default they are the current weights, detached.
        """
        cfg = self.cfg
        x = batch.x
        dtype = x.dtype
        zero = x.new_zeros(())
        mu_a, var_a = self.encode_plot(x)
        mu_s, var_s = self.encode_sentiment(x)

        if adv_head_params is None:
            adv_head_params = {k: v.detach() for k, v in self.sent_head.named_parameters()}

        labeled = batch.y >= 0
        log_probs, adv, sent, plot_za = [], [], [], []
        plot_mask = (batch.plot_y >= 0) if (batch.plot_y is not None and cfg.plot_net_active) else None
        n_samples = noise.a.shape[0]
        for l in range(n_samples):
            z_a = self.mix(sample_simplex(mu_a, var_a, noise.a[l]), "a")
            z_s = self.mix(sample_simplex(mu_s, var_s, noise.s[l]), "s")
            log_probs.append(torch.log_softmax(self.decode_logits(z_a, z_s), dim=-1))
            adv_logits = self.sent_head.logits(z_a @ self.adv_adapter.T.to(dtype), adv_head_params)
            adv.append(uniform_kl(torch.log_softmax(adv_logits, dim=-1)).mean())
            if labeled.any():
                lp = torch.log_softmax(self.sent_head.logits(z_s[labeled]), dim=-1)
                sent.append(cross_entropy(lp, batch.y[labeled]).mean())
            if plot_mask is not None and plot_mask.any():
                lp = torch.log_softmax(self.plot_head(z_a[plot_mask]), dim=-1)
                plot_za.append(cross_entropy(lp, batch.plot_y[plot_mask]).mean())

        terms = {
            "L_x": reconstruction_loss(x, log_probs).mean(),
            "KL_a": kl_diag_gaussian(mu_a, var_a).mean(),
            "KL_s": kl_diag_gaussian(mu_s, var_s).mean(),
            "L_adv": torch.stack(adv).mean(),
            "L_sent": torch.stack(sent).mean() if sent else zero,
            "L_orth": orthogonality_loss(self.W),
            "L_d": zero, "KL_d": zero, "L_plot_za": zero, "L_plot_zd": zero,
        }
        if plot_mask is not None and plot_mask.any():
            d = batch.plot_x[plot_mask]
            rec_d, kl_d, z_d = self.plot_vae_terms(d, noise.d[plot_mask])
            lp = torch.log_softmax(self.plot_head(z_d), dim=-1)
            terms.update(
                L_d=rec_d.mean(), KL_d=kl_d.mean(),
                L_plot_za=torch.stack(plot_za).mean(),
                L_plot_zd=cross_entropy(lp, batch.plot_y[plot_mask]).mean(),
            )
        return terms

    def plot_vae_terms(self, d: torch.Tensor, eps: torch.Tensor):
        """Per-plot reconstruction NLL, KL and the sampled plot latent z_d."""
        mu_d, var_d = self.plot_vae_encoder(d)
        z_d = sample_simplex(mu_d, var_d, eps)
        lp = torch.log_softmax(self.background + z_d @ self.W_d.T, dim=-1)
        return reconstruction_loss(d, [lp]), kl_diag_gaussian(mu_d, var_d), z_d

    def objective(self, batch: Batch, noise: Noise, active: frozenset[str] = ALL_TERMS,
                  adv_head_params=None) -> tuple[torch.Tensor, LossBreakdown]:
        terms = self.loss_terms(batch, noise, adv_head_params)
        total = total_loss(terms, self.cfg, active)
        if not isinstance(total, torch.Tensor):
            total = batch.x.new_tensor(total)
        breakdown = LossBreakdown(**{k: float(v.detach()) for k, v in terms.items()},
                                  total=float(total.detach()))
        return total, breakdown


def _sparse_init_(tensor: torch.Tensor, sparsity: float, std: float,
                  generator: torch.Generator | None = None) -> None:
    """Zero a fraction ``sparsity`` of each column, N(0, std) elsewhere."""
    rows, cols = tensor.shape
    n_zero = int(math.ceil(sparsity * rows))
    with torch.no_grad():
        tensor.normal_(0.0, std, generator=generator)
        for c in range(cols):
            idx = torch.randperm(rows, generator=generator)[:n_zero]
            tensor[idx, c] = 0.0


# ---------------------------------------------------------------------------
# topics

TOPIC_PLOT = "plot"
TOPIC_OPINION = "opinion"


@dataclass
class Topic:
    index: int
    tag: str
    words: list[tuple[str, float]]      # full vocabulary, descending, with topic probabilities
    label: str | None = None

    def top(self, n: int = 10) -> list[tuple[str, float]]:
        return self.words[:n]

    def top_tokens(self, n: int = 10) -> list[str]:
        return [w for w, _ in self.words[:n]]


@dataclass
class TopicSet:
    topics: list[Topic] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.topics)

    def __iter__(self):
        return iter(self.topics)

    def __getitem__(self, i: int) -> Topic:
        return self.topics[i]

    def top_lists(self, n: int = 10) -> list[list[str]]:
        return [t.top_tokens(n) for t in self.topics]


def topic_set_from_matrix(W: np.ndarray, tokens: Sequence[str], K: int) -> TopicSet:
    """Rank each column of ``W``; weights are the column's softmax over the vocabulary."""
    W = np.asarray(W, dtype=np.float64)
    topics = []
    for k in range(W.shape[1]):
        col = W[:, k]
        probs = np.exp(col - col.max())
        probs /= probs.sum()
        order = sorted(range(len(tokens)), key=lambda v: (-col[v], tokens[v]))
        topics.append(Topic(k, TOPIC_PLOT if k < K else TOPIC_OPINION,
                            [(tokens[v], float(probs[v])) for v in order]))
    return TopicSet(topics)


def topic_word_matrix(model: DIATOM, vocab: Vocabulary | Sequence[str]) -> TopicSet:
    tokens = vocab.tokens if isinstance(vocab, Vocabulary) else list(vocab)
    return topic_set_from_matrix(model.W.detach().cpu().numpy(), tokens, model.cfg.K)
