import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2anim.corpus import gen_utterance, items_from_utterances
from s2anim.errors import ConfigError, InvalidInputError, TrainingDiverged
from s2anim.features import fit_norm_stats
from s2anim.model import ModelConfig, TransformerS2A, mean_predictor
from s2anim.numerics import RngState, Tensor
from s2anim.trainer import (
    Adam,
    TrainConfig,
    collate,
    fit,
    make_batches,
    make_example,
    mse_loss,
    overfit_single,
)


def small_corpus(n_train=32, n_val=8, seed=0, n_phonemes=5):
    utts = [gen_utterance(RngState(seed, (i,)), n_phonemes, float(np.exp(np.random.default_rng(i).uniform(-0.69, 0.69))),
                          utterance_id=f"u{i:03d}") for i in range(n_train + n_val)]
    items = items_from_utterances(utts)
    return {"train": items[:n_train], "val": items[n_train:]}


# -- loss -------------------------------------------------------------------

def test_mse_zero_and_constant_offset(rng):
    t = rng.normal(size=(2, 5, 32))
    mask = np.ones((2, 5))
    assert float(mse_loss(Tensor(t), t, mask).data) == 0.0
    assert float(mse_loss(Tensor(t + 0.1), t, mask).data) == pytest.approx(0.01, rel=1e-5)


def test_mse_ignores_masked_frames(rng):
    t = rng.normal(size=(1, 6, 32))
    p = t + rng.normal(size=t.shape) * 0.1
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=float)
    base = float(mse_loss(Tensor(p), t, mask).data)
    p2 = p.copy()
    p2[0, 5] += 100.0
    assert float(mse_loss(Tensor(p2), t, mask).data) == base


def test_mse_rejects_empty_mask_and_shape_mismatch():
    with pytest.raises(InvalidInputError):
        mse_loss(Tensor(np.zeros((1, 3, 32))), np.zeros((1, 3, 32)), np.zeros((1, 3)))
    with pytest.raises(InvalidInputError):
        mse_loss(Tensor(np.zeros((1, 3, 32))), np.zeros((1, 4, 32)), np.ones((1, 3)))


# -- optimiser ----------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(0.01, 10.0))
def test_clipped_norm_bounded(values, clip):
    p = Tensor(np.zeros(len(values)), requires_grad=True)
    opt = Adam([p], 1e-3, clip_norm=clip)
    grads = [np.array(values, dtype=np.float64)]
    opt.clip(grads)
    assert np.linalg.norm(grads[0]) <= clip + 1e-6


def test_adam_first_step_matches_hand_computation():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    p.grad = np.array([0.3, -0.1, 0.0])
    opt = Adam([p], lr=0.01, clip_norm=None)
    opt.step()
    g = np.array([0.3, -0.1, 0.0])
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adam_second_step():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], lr=0.1, beta1=0.9, beta2=0.98, eps=1e-8, clip_norm=None)
    p.grad = np.array([1.0])
    opt.step()
    p.grad = np.array([2.0])
    opt.step()
    m = 0.9 * 0.1 + 0.1 * 2.0
    v = 0.98 * 0.02 + 0.02 * 4.0
    step2 = 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.98 ** 2)) + 1e-8)
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8) - step2, rel=1e-12)


# -- batching -----------------------------------------------------------------

def test_batches_bucket_by_length():
    lengths = [50, 10, 30, 20, 40, 60, 15]
    batches = make_batches(lengths, 3)
    assert batches == [[1, 6, 3], [2, 4, 0], [5]]
    shuffled = make_batches(lengths, 3, np.random.default_rng(0))
    assert sorted(map(tuple, shuffled)) == sorted(map(tuple, batches))


def test_collate_pads_and_masks():
    c = small_corpus(3, 1)
    stats = fit_norm_stats([i.animation.values for i in c["train"]], [i.features for i in c["train"]])
    ex = [make_example(i, "moe", stats) for i in c["train"]]
    ppg, pro, tgt, lengths, mask = collate(ex)
    T = max(len(e) for e in ex)
    assert ppg.shape == (3, T, 64) and pro.shape == (3, T, 2) and tgt.shape == (3, T, 32)
    assert mask.sum() == sum(len(e) for e in ex)
    for b, e in enumerate(ex):
        assert np.all(ppg[b, len(e):] == 0)


def test_padding_does_not_change_gradients():
    c = small_corpus(2, 1)
    stats = fit_norm_stats([i.animation.values for i in c["train"]], [i.features for i in c["train"]])
    ex = make_example(c["train"][0], "moe", stats)
    model = TransformerS2A(ModelConfig.tiny(), RngState(1)).astype(np.float64)
    T = len(ex)

    def grads(pad):
        gen = np.random.default_rng(5)
        ppg = np.concatenate([ex.ppg, gen.random((pad, 64))])[None].astype(np.float64)
        pro = np.concatenate([ex.prosody, gen.normal(size=(pad, 2))])[None].astype(np.float64)
        tgt = np.concatenate([ex.target, gen.normal(size=(pad, 32))])[None].astype(np.float64)
        mask = (np.arange(T + pad) < T)[None].astype(np.float64)
        model.zero_grad()
        mse_loss(model(ppg, pro, [T]), tgt, mask).backward()
        return [p.grad.copy() for p in model.parameters()]

    for a, b in zip(grads(0), grads(13)):
        np.testing.assert_allclose(b, a, rtol=1e-5, atol=1e-12)


# -- config -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(batch_size=0), dict(max_epochs=5),
                                dict(grad_clip_norm=0), dict(beta2=1.0), dict(eps=0)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_config_round_trip():
    cfg = TrainConfig(seed=3, max_epochs=20)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1})


# -- training runs ---------------------------------------------------------------

def test_training_decreases_loss_and_beats_mean_predictor():
    c = small_corpus(32, 8)
    log = []
    result = fit(c, ModelConfig.tiny(), TrainConfig(max_epochs=12, early_stop_patience=12, seed=0), "moe", log.append)
    losses = [r["train_loss"] for r in log]
    assert all(b < a for a, b in zip(losses[:5], losses[1:5]))
    ck = result.checkpoint
    mean_fn = mean_predictor(ck.stats)
    baseline = np.mean([np.sqrt(np.mean((mean_fn(it.features).values - it.animation.values) ** 2)) for it in c["val"]])
    assert ck.meta["best_val_rmse"] < baseline
    assert ck.meta["best_val_rmse"] == min(r["val_rmse"] for r in log)


def test_training_deterministic():
    c = small_corpus(10, 2)
    cfg = TrainConfig(max_epochs=2, early_stop_patience=2, seed=4)
    a = fit(c, ModelConfig.tiny(dropout=0.1), cfg)
    b = fit(c, ModelConfig.tiny(dropout=0.1), cfg)
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    assert a.history == b.history


def test_early_stopping_keeps_best():
    c = small_corpus(8, 2)
    res = fit(c, ModelConfig.tiny(), TrainConfig(learning_rate=0.0, max_epochs=5, early_stop_patience=2))
    # with a frozen model val RMSE never improves after epoch 1
    assert res.stopped_early and len(res.history) == 3 and res.best_epoch == 1


def test_divergence_is_reported():
    c = small_corpus(4, 1)
    bad = c["train"][0]
    bad.animation.values[3, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        fit(c, ModelConfig.tiny(), TrainConfig(max_epochs=2, early_stop_patience=1))


def test_empty_split_rejected():
    c = small_corpus(2, 1)
    with pytest.raises(InvalidInputError):
        fit({"train": c["train"], "val": []}, ModelConfig.tiny(), TrainConfig(max_epochs=1, early_stop_patience=1))


def test_dense_features_variant_trains():
    c = small_corpus(6, 2)
    res = fit(c, ModelConfig.tiny(), TrainConfig(max_epochs=1, early_stop_patience=1), "dense-features")
    assert res.checkpoint.config.ppg_dim == 20


def test_zero_learning_rate_keeps_loss_constant():
    item = small_corpus(1, 0)["train"][0]
    res = overfit_single(item, learning_rate=0.0, steps=6, threshold=0.0)
    assert len(set(res.losses)) == 1 and res.steps == 6


@pytest.mark.parametrize("variant", ["moe", "dense"])
def test_overfit_single_utterance(variant):
    item = small_corpus(1, 0, seed=3, n_phonemes=8)["train"][0]
    res = overfit_single(item, variant=variant)
    assert res.converged and res.steps <= 500 and res.rmse < 0.02
