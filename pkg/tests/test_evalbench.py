import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from s2anim import evalbench
from s2anim.animation import AnimationSequence
from s2anim.corpus import gen_utterance, items_from_utterances
from s2anim.errors import ConfigError, ShapeError
from s2anim.evalbench import (
    RmseReport,
    bench_rtf,
    blstm_for,
    evaluate_suite,
    make_runner,
    rmse,
    rmse_report,
)
from s2anim.features import fit_norm_stats
from s2anim.model import BlstmBaseline, ModelCheckpoint, ModelConfig, TransformerS2A, mean_predictor
from s2anim.numerics import RngState

anims = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(32)), elements=st.floats(0, 1))


def test_rmse_analytic(rng):
    ref = rng.random((10, 32))
    assert rmse(ref, ref) == 0.0
    assert rmse(ref + 0.01, ref) == pytest.approx(0.01)
    assert 100 * rmse(ref + 0.01, ref) == pytest.approx(1.0)


def test_rmse_channel_subset(rng):
    ref = rng.random((8, 32))
    pred = ref.copy()
    pred[:, 4] += 0.5  # mouthClose
    assert rmse(pred, ref, ["jawOpen"]) == 0.0
    assert rmse(pred, ref, ["mouthClose"]) == pytest.approx(0.5)


def test_rmse_errors(rng):
    with pytest.raises(ShapeError):
        rmse(rng.random((3, 32)), rng.random((4, 32)))
    with pytest.raises(ConfigError):
        rmse(rng.random((3, 32)), rng.random((3, 32)), [])
    with pytest.raises(ConfigError):
        rmse(rng.random((3, 32)), rng.random((3, 32)), ["eyeBlink"])


@settings(max_examples=60, deadline=None)
@given(anims, st.floats(-3, 3))
def test_rmse_properties(a, c):
    b = np.clip(a[::-1] * 0.5 + 0.2, 0, 1)
    assert rmse(a, a) == 0.0
    assert rmse(a, b) == pytest.approx(rmse(b, a))
    scaled = b + c * (a - b)
    assert rmse(scaled, b) == pytest.approx(abs(c) * rmse(a, b), rel=1e-9, abs=1e-12)


def _items(n=4, seed=0):
    return items_from_utterances([gen_utterance(RngState(seed, (i,)), 4, 1.0, utterance_id=f"t{i}") for i in range(n)])


def test_report_columns_and_x100(rng):
    refs = {f"u{i}": AnimationSequence(rng.random((5, 32)).astype(np.float32)) for i in range(3)}
    preds = {k: AnimationSequence(np.clip(v.values + 0.02, 0, 1)) for k, v in refs.items()}
    r = rmse_report("x", preds, refs)
    d = r.to_dict()
    assert d["entire_mean_x100"] == 100.0 * d["entire_mean"]
    assert d["crucial_mean_x100"] == 100.0 * d["crucial_mean"]
    assert d["crucial_channels"] == ["jawOpen", "mouthClose"]
    assert set(d["per_utterance"]) == set(refs)


def test_mean_predictor_closed_form():
    items = _items(5)
    stats = fit_norm_stats([it.animation.values for it in items], [it.features for it in items])
    suite = evaluate_suite({"mean": mean_predictor(stats)}, items)
    pooled = np.concatenate([it.animation.values for it in items]).astype(np.float64)
    # predicting the test-set mean gives the root of the mean per-channel variance
    expected = np.sqrt(np.mean(pooled.var(axis=0)))
    assert suite["mean"].pooled_entire == pytest.approx(expected, rel=1e-5)


def test_identical_checkpoints_identical_rows():
    items = _items(3)
    stats = fit_norm_stats([it.animation.values for it in items], [it.features for it in items])
    ck = ModelCheckpoint.from_model(TransformerS2A(ModelConfig.tiny(), RngState(0)), stats)
    suite = evaluate_suite({"a": ck, "b": ck}, items)
    da, db = suite["a"].to_dict(), suite["b"].to_dict()
    da.pop("name"), db.pop("name")
    assert da == db
    assert "crucial_x100" in suite.table().splitlines()[0]
    body = json.loads(suite.to_json())
    assert body["version"] == 1 and len(body["reports"]) == 2


def test_missing_variant_skipped_with_warning():
    items = _items(2)
    stats = fit_norm_stats([it.animation.values for it in items], [it.features for it in items])
    with pytest.warns(UserWarning, match="skipped"):
        suite = evaluate_suite({"mean": mean_predictor(stats), "gone": None}, items)
    assert [r.name for r in suite.reports] == ["mean"]


def test_dense_feature_checkpoint_uses_dense_inputs():
    items = _items(2)
    stats = fit_norm_stats([it.animation.values for it in items], [it.features for it in items])
    model = TransformerS2A(ModelConfig.tiny(ppg_dim=20), RngState(0), "dense-features")
    suite = evaluate_suite({"mfcc": ModelCheckpoint.from_model(model, stats)}, items)
    assert isinstance(suite["mfcc"], RmseReport)


# -- RTF ----------------------------------------------------------------------

def test_bench_validates_arguments():
    with pytest.raises(ConfigError):
        bench_rtf({"f": lambda: None}, frames=10, runs=4, baseline=None)
    with pytest.raises(ConfigError):
        bench_rtf({"f": lambda: None}, frames=10, runs=5, warmup=1, baseline=None)
    with pytest.raises(ConfigError):
        bench_rtf({"f": lambda: None}, frames=10, runs=5, baseline="BLSTM")


def test_bench_rejects_coarse_timer(monkeypatch):
    # pretend the clock only ticks every 10 ms
    monkeypatch.setattr(evalbench.time, "get_clock_info", lambda name: SimpleNamespace(resolution=0.01))
    with pytest.raises(evalbench.BenchmarkError, match="resolution"):
        bench_rtf({"noop": lambda: None}, frames=10, runs=5, baseline=None)


def test_bench_report_fields():
    model = TransformerS2A(ModelConfig.tiny(), RngState(0))
    blstm = blstm_for(model)
    report = bench_rtf({"moe": model, "BLSTM": blstm}, frames=120, runs=5, warmup=2)
    assert report.threads == 1 and report.frames == 120 and report.runs == 5
    for name, t in report.models.items():
        assert t.mean_s > 0 and t.rtf_mean == pytest.approx(t.mean_s / 2.0)
        assert len(t.times_s) == 5
    assert report.models["BLSTM"].speedup == 1.0
    moe = report.models["moe"]
    assert moe.speedup == pytest.approx(report.models["BLSTM"].rtf_mean / moe.rtf_mean)
    body = json.loads(report.to_json())
    assert body["models"]["moe"]["speedup"] == moe.speedup


def test_same_model_twice_speedup_near_one():
    model = TransformerS2A(ModelConfig.tiny(), RngState(0))
    report = bench_rtf({"a": model, "BLSTM": model}, frames=240, runs=5, warmup=2)
    assert 0.5 < report.models["a"].speedup < 2.0


def test_blstm_matched_to_model():
    model = TransformerS2A(ModelConfig(), RngState(0))
    blstm = blstm_for(model)
    assert isinstance(blstm, BlstmBaseline) and blstm.in_dim == 66
    assert abs(blstm.n_parameters() - model.n_parameters()) <= 0.2 * model.n_parameters()


def test_runner_includes_denormalisation(monkeypatch):
    items = _items(2)
    stats = fit_norm_stats([it.animation.values for it in items], [it.features for it in items])
    calls = []
    monkeypatch.setattr(type(stats), "denormalize_animation", lambda self, z, clamp=True: calls.append(z.shape))
    make_runner(TransformerS2A(ModelConfig.tiny(), RngState(0)), 30, stats)()
    assert calls == [(30, 32)]
