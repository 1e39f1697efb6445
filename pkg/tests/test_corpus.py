import filecmp
import json

import numpy as np
import pytest

from s2anim.animation import JAW_OPEN, MOUTH_CLOSE
from s2anim.corpus import (
    Corpus,
    Manifest,
    VisemeTable,
    dense_projection,
    draw_gain,
    gen_corpus,
    gen_dense_feature_variant,
    gen_utterance,
    jaw_factor,
    split_counts,
)
from s2anim.errors import ConfigError, InvalidInputError
from s2anim.numerics import RngState


def test_viseme_table_invariants():
    t = VisemeTable.default()
    assert t.n_phonemes >= 10
    assert np.all((t.targets >= 0) & (t.targets <= 1))
    assert len(np.unique(t.targets[:, JAW_OPEN])) > 10
    assert t.channels[JAW_OPEN] == "jawOpen" and t.channels[MOUTH_CLOSE] == "mouthClose"
    # bilabials close the mouth
    bilabial = t.viseme_of == 1
    assert t.targets[bilabial, MOUTH_CLOSE].min() > t.targets[~bilabial, MOUTH_CLOSE].max()


def test_jaw_factor_range():
    assert jaw_factor(0.5) == pytest.approx(0.6)
    assert jaw_factor(2.0) == pytest.approx(1.4)
    assert jaw_factor(1.0) == pytest.approx(1.0)


def test_utterance_deterministic():
    a = gen_utterance(RngState(4), 6, 1.3)
    b = gen_utterance(RngState(4), 6, 1.3)
    assert a.features.ppg.tobytes() == b.features.ppg.tobytes()
    assert a.animation.values.tobytes() == b.animation.values.tobytes()
    assert a.features.energy.tobytes() == b.features.energy.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_utterance_invariants(seed):
    u = gen_utterance(RngState(seed), 7, 0.8)
    u.features.validate()
    assert np.all(np.asarray(u.durations) >= 5) and np.all(np.asarray(u.durations) <= 25)
    assert len(u.features) == sum(u.durations)
    assert len(u.animation) == round(len(u.features) * 1.2)
    v = u.animation.values
    assert v.min() >= 0 and v.max() <= 1
    voiced = u.features.pitch[u.features.pitch > 0]
    assert voiced.min() >= 80 and voiced.max() <= 300


def test_gain_changes_jaw_not_posteriors():
    lo = gen_utterance(RngState(11), 10, 0.5)
    hi = gen_utterance(RngState(11), 10, 2.0)
    assert lo.features.ppg.tobytes() == hi.features.ppg.tobytes()
    assert lo.phonemes == hi.phonemes
    diff = np.abs(lo.animation.values[:, JAW_OPEN] - hi.animation.values[:, JAW_OPEN])
    assert diff.max() > 0.1
    # only jawOpen is coupled
    others = np.delete(np.arange(32), JAW_OPEN)
    np.testing.assert_array_equal(lo.animation.values[:, others], hi.animation.values[:, others])
    assert hi.features.energy.mean() > lo.features.energy.mean() + 2.0


def test_one_to_many_over_fifty_pairs():
    diffs = []
    for i in range(50):
        lo = gen_utterance(RngState(100, (i,)), 6, 0.5)
        hi = gen_utterance(RngState(100, (i,)), 6, 2.0)
        assert np.array_equal(lo.features.ppg, hi.features.ppg)
        diffs.append(np.abs(lo.animation.values[:, JAW_OPEN] - hi.animation.values[:, JAW_OPEN]).mean())
    assert np.mean(diffs) > 0.05


def test_uncoupled_corpus_ignores_gain():
    lo = gen_utterance(RngState(2), 5, 0.5, coupled_energy=False)
    hi = gen_utterance(RngState(2), 5, 2.0, coupled_energy=False)
    np.testing.assert_array_equal(lo.animation.values, hi.animation.values)


@pytest.mark.parametrize("bad", [0.49, 2.01, float("nan"), 0.0])
def test_invalid_gain(bad):
    with pytest.raises(InvalidInputError):
        gen_utterance(RngState(0), 3, bad)


def test_invalid_phoneme_count():
    with pytest.raises(InvalidInputError):
        gen_utterance(RngState(0), 0, 1.0)


def test_dense_variant_limiting_case():
    u = gen_utterance(RngState(5), 6, 1.0)
    fs = gen_dense_feature_variant(u, RngState(9), noise=0.0, offset_scale=0.0)
    P = dense_projection()
    assert fs.dim == 20 and fs.kind == "dense"
    np.testing.assert_allclose(fs.ppg, u.features.ppg.astype(np.float64) @ P, rtol=1e-5, atol=1e-6)
    # confident frames decode back to their phoneme by nearest projected label
    confident = u.features.ppg.max(axis=1) > 0.9
    d2 = ((fs.ppg[confident, None, :] - P[None]) ** 2).sum(axis=-1)
    assert np.array_equal(d2.argmin(axis=1), u.features.ppg[confident].argmax(axis=1))


def test_dense_variant_speaker_offset():
    u = gen_utterance(RngState(5), 6, 1.0)
    a = gen_dense_feature_variant(u, RngState(1))
    b = gen_dense_feature_variant(u, RngState(2))
    assert a.ppg.shape == (len(u.features), 20)
    assert not np.allclose(a.ppg, b.ppg)


def test_split_counts():
    assert split_counts(200) == (160, 20, 20)
    assert split_counts(3) == (1, 1, 1)
    with pytest.raises(InvalidInputError):
        split_counts(2)
    with pytest.raises(ConfigError):
        split_counts(10, (0.5, 0.2, 0.2))


def test_gain_is_log_uniform_in_range():
    g = np.array([draw_gain(0, i) for i in range(400)])
    assert g.min() >= 0.5 and g.max() <= 2.0
    assert abs(np.mean(np.log(g))) < 0.1


def test_gen_corpus_layout_and_determinism(tmp_path):
    m = gen_corpus(tmp_path / "a", 20, 7)
    gen_corpus(tmp_path / "b", 20, 7)
    assert m.counts() == {"train": 16, "val": 2, "test": 2}
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for split in ("train", "val", "test"):
        a = sorted(p.name for p in (tmp_path / "a" / split).iterdir())
        b = sorted(p.name for p in (tmp_path / "b" / split).iterdir())
        assert a == b
        assert all((tmp_path / "a" / split / n).read_bytes() == (tmp_path / "b" / split / n).read_bytes() for n in a)
    ids = [set(e.id for e in m.split(s)) for s in ("train", "val", "test")]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_manifest_schema_and_reload(tmp_path):
    gen_corpus(tmp_path, 5, 1, coupled_energy=False)
    body = json.loads((tmp_path / "manifest.json").read_text())
    assert body["version"] == 1 and body["coupled_energy"] is False
    assert set(body["utterances"][0]) == {"id", "split", "feature_path", "animation_path",
                                          "dense_feature_path", "energy_gain"}
    corpus = Corpus.load(tmp_path)
    item = corpus.split("test")[0]
    assert len(item.animation) == round(len(item.features) * 1.2)
    assert item.dense_features.dim == 20
    assert Manifest.from_json(corpus.manifest.to_json()) == corpus.manifest


def test_corpus_missing_manifest(tmp_path):
    with pytest.raises(InvalidInputError):
        Corpus.load(tmp_path)
