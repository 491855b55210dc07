import copy

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from diatom.model import (
    AUTOENCODER_GROUP, PLOT_HEAD_GROUP, SENTIMENT_GROUP, DIATOM, Batch, ModelConfig, Noise,
)
from diatom.training import (
    TrainConfig, _batches, build_model, doc_tensors, evaluate_loss, gradient_check, train,
    unfreeze_schedule,
)


def toy_instance():
    """V=20, K=3, S=2, M=2, P=2 with five documents and two plots."""
    cfg = ModelConfig(V=20, K=3, S=2, M=2, P=2)
    model = DIATOM(cfg, background=np.log(np.full(20, 1 / 20)), generator=torch.Generator().manual_seed(0))
    g = torch.Generator().manual_seed(1)
    x = torch.randint(0, 4, (5, 20), generator=g).float()
    plots = torch.randint(0, 6, (2, 20), generator=g).float()
    plot_y = torch.tensor([0, 1, 0, 1, 0])
    return model, Batch(x, torch.tensor([0, 1, 1, 0, 0]), plots[plot_y], plot_y)


def test_schedule_examples():
    cfg = TrainConfig(unfreeze_e=5, unfreeze_n=5)
    s0, s5, s10 = (unfreeze_schedule(e, cfg) for e in (0, 5, 10))
    assert s0.name == "autoencoder" and "sent" not in s0.terms and s0.groups == {AUTOENCODER_GROUP}
    assert s5.name == "classifier" and {"sent", "plot_clf"} <= s5.terms and "adv" not in s5.terms
    assert {SENTIMENT_GROUP, PLOT_HEAD_GROUP} <= s5.groups
    assert s10.name == "adversarial" and "adv" in s10.terms
    assert unfreeze_schedule(9, cfg).name == "classifier"


def test_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 64 and (cfg.unfreeze_e, cfg.unfreeze_n) == (5, 5)
    assert cfg.early_stop_patience == 10
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochz": 3})


def test_batches_never_leave_a_singleton():
    chunks = _batches(np.arange(129), 64)
    assert [len(b) for b in chunks] == [64, 65]
    assert np.array_equal(np.concatenate(chunks), np.arange(129))
    assert [len(b) for b in _batches(np.arange(130), 64)] == [64, 64, 2]


def test_initialization():
    model, _ = toy_instance()
    for name in ("W", "W_d"):
        w = getattr(model, name).detach()
        assert (w == 0).float().mean() > 0.8  # sparse
    lin = model.plot_encoder.hidden
    bound = np.sqrt(6 / (lin.in_features + lin.out_features))
    assert lin.weight.abs().max() <= bound and torch.all(lin.bias == 0)


def test_gradient_check_toy():
    model, batch = toy_instance()
    report = gradient_check(model, batch, tolerance=1e-4)
    assert report.passed, report.worst


def test_gradient_check_negative_control():
    model, batch = toy_instance()
    corrupt = lambda name, g: g * 1.01 if name == "W" else g
    report = gradient_check(model, batch, corrupt=corrupt)
    assert not report.passed and report.worst[0] == "W"


def test_zero_model_symmetric_input_zero_gradient():
    cfg = ModelConfig(V=6, K=2, S=2, batchnorm=False, enable_plot_net=False)
    model = DIATOM(cfg)
    with torch.no_grad():
        model.W.zero_()
    x = torch.full((3, 6), 2.0)
    loss, _ = model.objective(Batch(x, torch.full((3,), -1)), Noise.zeros(cfg, 3), frozenset({"autoencoder"}))
    loss.backward()
    assert torch.allclose(model.W.grad, torch.zeros_like(model.W), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(5)))
def test_batch_loss_permutation_invariant(order):
    model, batch = toy_instance()
    model = model.double()
    batch = batch.to(torch.float64)
    noise = Noise.draw(model.cfg, 5, torch.Generator().manual_seed(0), dtype=torch.float64)
    idx = torch.tensor(order)
    permuted_noise = Noise(noise.a[:, idx], noise.s[:, idx], noise.d[idx])
    with torch.no_grad():
        a, _ = model.objective(batch, noise)
        b, _ = model.objective(batch.permute(idx), permuted_noise)
    assert float(a) == pytest.approx(float(b), rel=1e-12)


def test_zero_learning_rate_step():
    model, batch = toy_instance()
    before = copy.deepcopy(model.state_dict())
    opt = torch.optim.Adam(model.parameters(), lr=0.0)
    loss, _ = model.objective(batch, Noise.zeros(model.cfg, 5))
    loss.backward()
    opt.step()
    after = model.state_dict()
    params = dict(model.named_parameters())
    assert all(torch.equal(before[k], after[k]) for k in params)


def _fit(tiny, **kw):
    _, corpus, _, _ = tiny
    model = build_model(corpus, K=3, S=2, seed=0, gamma=10.0)
    snapshots = []
    cfg = TrainConfig(**{"epochs": 6, "unfreeze_e": 2, "unfreeze_n": 2, "seed": 0, **kw})
    groups = model.parameter_groups()

    def on_epoch(rec):
        snapshots.append((rec.epoch, {n: p.detach().clone() for n, p in groups[SENTIMENT_GROUP]}))

    model, history = train(model, corpus, cfg, on_epoch=on_epoch)
    return model, history, snapshots, corpus, cfg


def test_train_frozen_groups_and_best_epoch(tiny):
    model, history, snapshots, corpus, cfg = _fit(tiny)
    init = build_model(corpus, K=3, S=2, seed=0, gamma=10.0)
    head0 = dict(init.parameter_groups()[SENTIMENT_GROUP])
    for epoch, snap in snapshots:
        if epoch < cfg.unfreeze_e:
            assert all(torch.equal(snap[n], head0[n]) for n in snap)
    assert not all(torch.equal(snapshots[-1][1][n], head0[n]) for n in head0)

    stages = [r.stage for r in history.epochs]
    assert stages == ["autoencoder"] * 2 + ["classifier"] * 2 + ["adversarial"] * 2
    dev = doc_tensors([d for d in corpus.dev if not d.is_empty], corpus)
    final = evaluate_loss(model, dev, seed=cfg.seed + 1).total
    assert final == pytest.approx(min(history.dev_totals()), rel=1e-6)
    assert all(final <= t + 1e-6 * abs(t) for t in history.dev_totals())


def test_train_deterministic(tiny):
    a = _fit(tiny)[1]
    b = _fit(tiny)[1]
    assert a.to_jsonl() == b.to_jsonl()
    assert a.dev_totals()[-1] == b.dev_totals()[-1]


def test_early_stopping(tiny):
    _, history, _, _, _ = _fit(tiny, epochs=40, early_stop_patience=1, learning_rate=0.05)
    assert len(history.epochs) < 40
    assert history.best_epoch == int(np.argmin(history.dev_totals()))


def test_train_rejects_degenerate_corpus(tiny):
    _, corpus, _, _ = tiny
    import dataclasses
    tiny_corpus = dataclasses.replace(corpus, train=corpus.train[:1], dev=[], test=[])
    with pytest.raises(ValueError, match="two"):
        train(build_model(corpus, K=2, S=2), tiny_corpus, TrainConfig(epochs=1))
