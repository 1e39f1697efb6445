"""Synthetic paired corpus: posteriorgrams plus prosody in, blendshape curves out.

Every utterance is a pure function of ``(master seed, index)``. The energy
gain is drawn from its own stream and only enters the signal after all random
draws, so two utterances that differ only in gain share phonemes, durations,
posteriors and pitch noise exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .animation import BLENDSHAPE_CHANNELS, JAW_OPEN, MOUTH_CLOSE, N_CHANNELS, AnimationSequence
from .errors import ConfigError, InvalidInputError
from .features import (
    FEATURE_RATE_HZ,
    PPG_DIM,
    FeatureSequence,
    animation_length,
    resample_linear,
    smooth_time,
    synth_ppg,
)
from .io import load_animation, load_features, save_animation, save_features
from .numerics import RngState

MANIFEST_VERSION = 1
N_PHONEMES = 40
DENSE_DIM = 20
GAIN_RANGE = (0.5, 2.0)
DURATION_RANGE = (5, 25)
PITCH_RANGE = (80.0, 300.0)
COARTICULATION = np.array([1.0, 2.0, 3.0, 2.0, 1.0]) / 9.0
DEFAULT_SPLITS = (0.8, 0.1, 0.1)

_TABLE_SEED = 20210
_DENSE_SEED = 20211
# integer stream tags for RngState paths
_UTTERANCE, _GAIN, _DENSE = 1, 2, 3
_PPG, _LENGTH, _OFFSET = 0, 1, 2

# viseme classes: (jawOpen, mouthClose, voiced, base log-energy)
_VISEMES = [
    ("silence", 0.05, 0.30, False, -6.0),
    ("bilabial", 0.05, 0.85, True, -3.0),
    ("labiodental", 0.12, 0.35, False, -3.5),
    ("dental", 0.18, 0.10, False, -3.2),
    ("alveolar", 0.20, 0.08, True, -2.8),
    ("postalveolar", 0.25, 0.06, False, -3.0),
    ("velar", 0.30, 0.05, True, -2.5),
    ("open", 0.70, 0.00, True, -0.5),
    ("mid", 0.50, 0.02, True, -1.0),
    ("close-front", 0.30, 0.04, True, -1.5),
    ("rounded", 0.55, 0.03, True, -1.0),
    ("close-back", 0.25, 0.05, True, -1.6),
]


@dataclass(frozen=True)
class VisemeTable:
    """Per-phoneme blendshape targets and the acoustic traits of each phoneme."""

    targets: np.ndarray  # [n_phonemes, 32]
    voiced: np.ndarray  # [n_phonemes] bool
    base_energy: np.ndarray  # [n_phonemes]
    viseme_of: np.ndarray  # [n_phonemes] viseme class index
    channels: tuple[str, ...] = BLENDSHAPE_CHANNELS

    @classmethod
    def default(cls, n_phonemes: int = N_PHONEMES) -> VisemeTable:
        gen = RngState(_TABLE_SEED).generator()
        n_cls = len(_VISEMES)
        shapes = gen.uniform(0.0, 0.4, size=(n_cls, N_CHANNELS))
        for c, (_, jaw, close, _, _) in enumerate(_VISEMES):
            shapes[c, JAW_OPEN] = jaw
            shapes[c, MOUTH_CLOSE] = close
        viseme_of = np.arange(n_phonemes) % n_cls
        jitter = gen.uniform(-0.04, 0.04, size=(n_phonemes, N_CHANNELS))
        targets = np.clip(shapes[viseme_of] + jitter, 0.0, 1.0)
        targets[:, JAW_OPEN] = np.clip(targets[:, JAW_OPEN], 0.05, 0.7)
        voiced = np.array([_VISEMES[c][3] for c in viseme_of])
        base = np.array([_VISEMES[c][4] for c in viseme_of]) + gen.uniform(-0.2, 0.2, size=n_phonemes)
        return cls(targets, voiced, base, viseme_of)

    @property
    def n_phonemes(self) -> int:
        return self.targets.shape[0]


@dataclass
class SyntheticUtterance:
    features: FeatureSequence
    animation: AnimationSequence
    phonemes: list[int]
    durations: list[int]
    energy_gain: float
    seed: tuple = ()

    @property
    def utterance_id(self) -> str:
        return self.features.utterance_id


def jaw_factor(energy_gain: float) -> float:
    """Map a gain in [0.5, 2] log-linearly onto a jawOpen scale in [0.6, 1.4]."""
    lo, hi = GAIN_RANGE
    return 0.6 + 0.8 * (math.log(energy_gain) - math.log(lo)) / (math.log(hi) - math.log(lo))


def _check_gain(g: float) -> float:
    g = float(g)
    if not (GAIN_RANGE[0] <= g <= GAIN_RANGE[1]) or not math.isfinite(g):
        raise InvalidInputError(f"energy_gain must lie in [{GAIN_RANGE[0]}, {GAIN_RANGE[1]}], got {g}")
    return g


def gen_utterance(rng: RngState, n_phonemes: int, energy_gain: float, *, table: VisemeTable | None = None,
                  coupled_energy: bool = True, utterance_id: str = "") -> SyntheticUtterance:
    """One utterance at 50 Hz features / 60 fps animation."""
    if n_phonemes < 1:
        raise InvalidInputError(f"n_phonemes must be >= 1, got {n_phonemes}")
    g = _check_gain(energy_gain)
    table = table if table is not None else VisemeTable.default()
    gen = rng.generator()
    phonemes = gen.integers(0, table.n_phonemes, size=n_phonemes)
    durations = gen.integers(DURATION_RANGE[0], DURATION_RANGE[1] + 1, size=n_phonemes)
    labels = np.repeat(phonemes, durations)
    T1 = labels.size

    ppg = synth_ppg(list(zip(phonemes.tolist(), durations.tolist())), rng.child(_PPG))

    energy_noise = gen.normal(0.0, 0.3, size=T1)
    start = gen.uniform(100.0, 220.0)
    walk = smooth_time(np.cumsum(gen.normal(0.0, 4.0, size=T1)), np.ones(9) / 9.0)

    # gain enters only below this line
    energy = smooth_time(table.base_energy[labels], np.ones(3) / 3.0) + 2.0 * math.log(g) + energy_noise
    pitch = np.clip((start + walk) * g ** 0.15, *PITCH_RANGE)
    pitch = np.where(table.voiced[labels], pitch, 0.0)
    features = FeatureSequence(ppg, pitch, energy, FEATURE_RATE_HZ, utterance_id, "ppg")

    T2 = animation_length(T1)
    frames = table.targets[labels]
    anim = resample_linear(frames, T2) if T1 > 1 else np.repeat(frames, T2, axis=0)
    anim = smooth_time(anim, COARTICULATION)
    if coupled_energy:
        anim[:, JAW_OPEN] *= jaw_factor(g)
    anim = np.clip(anim, 0.0, 1.0).astype(np.float32)
    animation = AnimationSequence(anim, table.channels, 60.0, utterance_id,
                                  {"energy_gain": g, "coupled_energy": coupled_energy})
    return SyntheticUtterance(features, animation, phonemes.tolist(), durations.tolist(), g, rng.path)


def dense_projection() -> np.ndarray:
    """The fixed [64, 20] matrix shared by every dense feature variant."""
    gen = RngState(_DENSE_SEED).generator()
    return gen.normal(0.0, 1.0, size=(PPG_DIM, DENSE_DIM))


def gen_dense_feature_variant(u: SyntheticUtterance, rng: RngState, noise: float = 0.1,
                              offset_scale: float = 0.5) -> FeatureSequence:
    """Replace the posteriors with a 20-dim speaker-entangled projection.

    ``features = ppg @ P + offset + noise`` where ``offset`` is one vector per
    utterance standing in for speaker identity.
    """
    gen = rng.generator()
    offset = gen.normal(0.0, 1.0, size=DENSE_DIM)
    jitter = gen.normal(0.0, 1.0, size=(len(u.features), DENSE_DIM))
    dense = u.features.ppg.astype(np.float64) @ dense_projection() + offset_scale * offset + noise * jitter
    fs = u.features
    return FeatureSequence(dense, fs.pitch, fs.energy, fs.frame_rate_hz, fs.utterance_id, "dense")


# -- corpus on disk ---------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    split: str
    feature_path: str
    animation_path: str
    dense_feature_path: str
    energy_gain: float


@dataclass
class Manifest:
    seed: int
    coupled_energy: bool
    utterances: list[ManifestEntry]
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ManifestEntry]:
        return [u for u in self.utterances if u.split == name]

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in ("train", "val", "test")}

    def to_json(self) -> str:
        body = {"version": self.version, "seed": self.seed, "coupled_energy": self.coupled_energy,
                "utterances": [vars(u) for u in self.utterances]}
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Manifest:
        body = json.loads(text)
        if body.get("version") != MANIFEST_VERSION:
            raise InvalidInputError(f"unsupported manifest version {body.get('version')!r}")
        return cls(int(body["seed"]), bool(body["coupled_energy"]),
                   [ManifestEntry(**u) for u in body["utterances"]], body["version"])


def split_counts(n: int, ratios=DEFAULT_SPLITS) -> tuple[int, int, int]:
    if n < 3:
        raise InvalidInputError(f"a corpus needs at least 3 utterances, got {n}")
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r <= 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {tuple(ratios)}")
    n_train = int(round(r[0] * n))
    n_val = int(round(r[1] * n))
    # every split keeps at least one utterance
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


@dataclass
class CorpusItem:
    id: str
    features: FeatureSequence
    animation: AnimationSequence
    dense_features: FeatureSequence | None = None
    energy_gain: float = 1.0


def utterance_seed(seed: int, index: int) -> RngState:
    return RngState(seed, (_UTTERANCE, index))


def draw_gain(seed: int, index: int) -> float:
    """Log-uniform gain in [0.5, 2] from a stream separate from the utterance's."""
    u = RngState(seed, (_GAIN, index)).generator().uniform()
    lo, hi = GAIN_RANGE
    return float(math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))))


def gen_corpus(out_dir, n_utts: int, seed: int, ratios=DEFAULT_SPLITS, *, coupled_energy: bool = True,
               phoneme_range: tuple[int, int] = (4, 10), table: VisemeTable | None = None) -> Manifest:
    """Write ``n_utts`` utterances under ``out_dir/<split>/`` plus ``manifest.json``."""
    n_train, n_val, _ = split_counts(n_utts, ratios)
    out = Path(out_dir)
    table = table if table is not None else VisemeTable.default()
    entries = []
    for i in range(n_utts):
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        uid = f"utt{i:05d}"
        rng = utterance_seed(seed, i)
        n_ph = int(rng.child(_LENGTH).generator().integers(phoneme_range[0], phoneme_range[1] + 1))
        u = gen_utterance(rng, n_ph, draw_gain(seed, i), table=table, coupled_energy=coupled_energy,
                          utterance_id=uid)
        dense = gen_dense_feature_variant(u, rng.child(_OFFSET))
        (out / split).mkdir(parents=True, exist_ok=True)
        paths = {k: f"{split}/{uid}.{k}.s2a" for k in ("feat", "anim", "dense")}
        extra = {"energy_gain": u.energy_gain, "phonemes": u.phonemes, "durations": u.durations}
        save_features(out / paths["feat"], u.features, extra)
        save_animation(out / paths["anim"], u.animation)
        save_features(out / paths["dense"], dense)
        entries.append(ManifestEntry(uid, split, paths["feat"], paths["anim"], paths["dense"], u.energy_gain))
    manifest = Manifest(int(seed), bool(coupled_energy), entries)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


@dataclass
class Corpus:
    """A generated corpus loaded back from disk."""

    root: Path
    manifest: Manifest
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, root) -> Corpus:
        root = Path(root)
        path = root / "manifest.json"
        if not path.is_file():
            raise InvalidInputError(f"no manifest.json under {root}")
        return cls(root, Manifest.from_json(path.read_text()))

    def item(self, entry: ManifestEntry) -> CorpusItem:
        if entry.id not in self._cache:
            self._cache[entry.id] = CorpusItem(
                entry.id,
                load_features(self.root / entry.feature_path),
                load_animation(self.root / entry.animation_path),
                load_features(self.root / entry.dense_feature_path),
                entry.energy_gain,
            )
        return self._cache[entry.id]

    def split(self, name: str) -> list[CorpusItem]:
        return [self.item(e) for e in self.manifest.split(name)]


def items_from_utterances(utts, dense_seed: int = 0) -> list[CorpusItem]:
    """In-memory corpus items, for training without touching disk."""
    return [CorpusItem(u.utterance_id, u.features, u.animation,
                       gen_dense_feature_variant(u, RngState(dense_seed, (_DENSE, i))), u.energy_gain)
            for i, u in enumerate(utts)]


__all__ = [
    "Corpus",
    "CorpusItem",
    "Manifest",
    "ManifestEntry",
    "SyntheticUtterance",
    "VisemeTable",
    "dense_projection",
    "draw_gain",
    "gen_corpus",
    "gen_dense_feature_variant",
    "gen_utterance",
    "items_from_utterances",
    "jaw_factor",
    "split_counts",
]
