"""Model inputs: PPG posteriors, frame energy and pitch, VAD, resampling, normalisation.

Energy and pitch share one framing (16 kHz audio, 40 ms Hamming window,
20 ms hop), giving 50 feature frames per second. Animation targets run at
60 fps, so every stream is linearly resampled to the animation length before
it reaches the model.
"""
from __future__ import annotations

import math
import wave
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError
from .numerics import RngState

PPG_DIM = 64
FEATURE_RATE_HZ = 50.0
ENERGY_FLOOR = 1e-10
PITCH_MIN_HZ = 60.0
PITCH_MAX_HZ = 400.0
VOICING_THRESHOLD = 0.3
# 30 dB in natural-log power units
VAD_DROP = 3.0 * math.log(10.0)
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class FrameSpec:
    sample_rate: int = 16000
    window_ms: float = 40.0
    hop_ms: float = 20.0
    window_shape: str = "hamming"

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window and hop must be positive")
        if self.hop_ms > self.window_ms:
            raise ConfigError(f"hop {self.hop_ms} ms exceeds window {self.window_ms} ms")
        if self.window_shape != "hamming":
            raise ConfigError(f"unsupported window shape {self.window_shape!r}")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate / self.hop_length

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            return 0
        return (n_samples - self.window_length) // self.hop_length + 1


@dataclass
class FeatureSequence:
    """Time-aligned model inputs for one utterance.

    ``ppg`` holds phonetic posteriors when ``kind == "ppg"``; the dense
    spectral-style stand-in used by the feature ablation stores its vectors
    in the same slot with ``kind == "dense"``.
    """

    ppg: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    frame_rate_hz: float = FEATURE_RATE_HZ
    utterance_id: str = ""
    kind: str = "ppg"

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=np.float32)
        self.pitch = np.asarray(self.pitch, dtype=np.float32).reshape(-1)
        self.energy = np.asarray(self.energy, dtype=np.float32).reshape(-1)
        if self.ppg.ndim != 2:
            raise ShapeError(f"ppg must be [T, D], got {self.ppg.shape}")
        T = self.ppg.shape[0]
        if self.pitch.shape[0] != T or self.energy.shape[0] != T:
            raise ShapeError(
                f"stream lengths differ: ppg {T}, pitch {self.pitch.shape[0]}, energy {self.energy.shape[0]}"
            )

    def __len__(self) -> int:
        return self.ppg.shape[0]

    @property
    def dim(self) -> int:
        return self.ppg.shape[1]

    def validate(self) -> None:
        """Raise if any stream invariant is violated."""
        if self.kind == "ppg":
            if np.any(self.ppg < 0):
                raise InvalidInputError("negative PPG posterior")
            sums = self.ppg.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-4):
                raise InvalidInputError(f"PPG rows must sum to 1, worst {sums[np.argmax(np.abs(sums - 1))]}")
        voiced = self.pitch[self.pitch != 0]
        if np.any((voiced < PITCH_MIN_HZ - 1e-3) | (voiced > PITCH_MAX_HZ + 1e-3)):
            raise InvalidInputError("pitch outside [60, 400] Hz on a voiced frame")
        for name in ("ppg", "pitch", "energy"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"non-finite values in {name}")

    def slice(self, start: int, stop: int) -> FeatureSequence:
        return replace(self, ppg=self.ppg[start:stop], pitch=self.pitch[start:stop],
                       energy=self.energy[start:stop])


# -- audio ----------------------------------------------------------------

def read_wav(path, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Mono 16-bit PCM at ``spec.sample_rate`` as float samples in [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise InvalidInputError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != spec.sample_rate:
            raise InvalidInputError(
                f"{path}: sample rate {wf.getframerate()} Hz, expected {spec.sample_rate} Hz"
            )
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, spec: FrameSpec = FrameSpec()) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(spec.sample_rate)
        wf.writeframes(pcm.tobytes())


def _frames(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    n = spec.n_frames(samples.size)
    if n == 0:
        warnings.warn(
            f"waveform of {samples.size} samples is shorter than one {spec.window_length}-sample window",
            stacklevel=3,
        )
        return np.zeros((0, spec.window_length))
    view = np.lib.stride_tricks.sliding_window_view(samples, spec.window_length)
    return view[:: spec.hop_length][:n]


def frame_energy(samples: np.ndarray, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Log power of each Hamming-windowed frame, floored at ``ln(1e-10)``."""
    frames = _frames(samples, spec)
    windowed = frames * np.hamming(spec.window_length)
    return np.log(np.sum(windowed * windowed, axis=1) + ENERGY_FLOOR)


def _nccf(frames: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Normalised cross-correlation of each frame with itself at each lag."""
    N = frames.shape[1]
    sq = frames * frames
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    out = np.zeros((frames.shape[0], lags.size))
    for j, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", frames[:, : N - lag], frames[:, lag:])
        e0 = csum[:, N - lag]
        e1 = csum[:, N] - csum[:, lag]
        den = np.sqrt(e0 * e1)
        out[:, j] = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)
    return out


def frame_pitch(samples: np.ndarray, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Per-frame F0 in Hz from the normalised autocorrelation; 0 marks unvoiced frames.

    The candidate is the shortest-lag local maximum within 90% of the best
    peak, which keeps period multiples (octave-down errors) from winning.
    The lag is refined by a parabola through the peak and its neighbours.
    """
    frames = _frames(samples, spec)
    sr = spec.sample_rate
    lag_min = int(math.floor(sr / PITCH_MAX_HZ))
    lag_max = int(math.ceil(sr / PITCH_MIN_HZ))
    lags = np.arange(lag_min - 1, lag_max + 2)
    pitch = np.zeros(frames.shape[0])
    if frames.shape[0] == 0:
        return pitch
    frames = frames - frames.mean(axis=1, keepdims=True)
    acf = _nccf(frames, lags)
    for i, r in enumerate(acf):
        inner = r[1:-1]
        is_peak = (inner >= r[:-2]) & (inner > r[2:])
        peaks = np.flatnonzero(is_peak) + 1
        if peaks.size == 0:
            continue
        best = r[peaks].max()
        if best < VOICING_THRESHOLD:
            continue
        j = peaks[np.flatnonzero(r[peaks] >= 0.9 * best)[0]]
        a, b, c = r[j - 1], r[j], r[j + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
        f0 = sr / (lags[j] + float(np.clip(shift, -0.5, 0.5)))
        pitch[i] = float(np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ))
    return pitch


def extract_prosody(samples: np.ndarray, spec: FrameSpec = FrameSpec()) -> tuple[np.ndarray, np.ndarray]:
    """(pitch, energy) on the shared framing."""
    return frame_pitch(samples, spec), frame_energy(samples, spec)


# -- sequence ops ---------------------------------------------------------

def vad_trim(fs: FeatureSequence) -> FeatureSequence:
    """Drop leading and trailing frames more than 30 dB below the loudest frame.

    Frames within 30 dB of the numeric silence floor never count as speech,
    so an all-silent utterance is rejected rather than returned whole.
    """
    if len(fs) == 0:
        raise InvalidInputError("vad_trim on an empty sequence")
    e = fs.energy.astype(np.float64)
    threshold = max(float(e.max()) - VAD_DROP, math.log(ENERGY_FLOOR) + VAD_DROP)
    speech = np.flatnonzero(e >= threshold)
    if speech.size == 0:
        raise InvalidInputError(f"utterance {fs.utterance_id!r} has no frames above the VAD threshold")
    return fs.slice(int(speech[0]), int(speech[-1]) + 1)


def resample_linear(stream: np.ndarray, t2: int) -> np.ndarray:
    """Linear interpolation of each column from T1 rows onto ``t2`` rows.

    Both sequences span the normalised time axis [0, 1]; the first and last
    rows are reproduced exactly.
    """
    x = np.asarray(stream)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    T1 = x.shape[0]
    if T1 < 2:
        raise InvalidInputError(f"resample_linear needs at least 2 input frames, got {T1}")
    if t2 < 1:
        raise InvalidInputError(f"target length must be >= 1, got {t2}")
    if t2 == 1:
        out = x[:1].copy()
    else:
        pos = np.arange(t2, dtype=np.float64) * ((T1 - 1) / (t2 - 1))
        i0 = np.minimum(np.floor(pos).astype(np.int64), T1 - 2)
        w = (pos - i0)[:, None]
        lo = x[i0].astype(np.float64)
        out = lo + w * (x[i0 + 1].astype(np.float64) - lo)
        out[-1] = x[-1]
        out = out.astype(x.dtype)
    return out[:, 0] if squeeze else out


def animation_length(n_feature_frames: int, feature_rate: float = FEATURE_RATE_HZ,
                     animation_rate: float = 60.0) -> int:
    return max(1, int(round(n_feature_frames * animation_rate / feature_rate)))


def resample_features(fs: FeatureSequence, t2: int, frame_rate_hz: float = 60.0) -> FeatureSequence:
    """All streams onto ``t2`` frames; PPG rows renormalised, voicing kept crisp.

    Pitch is interpolated only between voiced neighbours: a target frame is
    voiced when its nearer source frame is, and takes the interpolated value
    of the voiced source frames around it.
    """
    ppg = resample_linear(fs.ppg, t2)
    if fs.kind == "ppg":
        ppg = np.clip(ppg, 0.0, None)
        ppg = ppg / ppg.sum(axis=1, keepdims=True)
    energy = resample_linear(fs.energy, t2)
    pitch = _resample_pitch(fs.pitch, t2)
    return FeatureSequence(ppg, pitch, energy, frame_rate_hz, fs.utterance_id, fs.kind)


def _resample_pitch(pitch: np.ndarray, t2: int) -> np.ndarray:
    T1 = pitch.shape[0]
    voiced = pitch > 0
    if t2 == 1:
        return pitch[:1].copy()
    pos = np.arange(t2) * ((T1 - 1) / (t2 - 1))
    nearest = np.clip(np.rint(pos).astype(np.int64), 0, T1 - 1)
    if not voiced.any():
        return np.zeros(t2, dtype=pitch.dtype)
    vidx = np.flatnonzero(voiced)
    values = np.interp(pos, vidx, pitch[vidx])
    return np.where(voiced[nearest], values, 0.0).astype(pitch.dtype)


# -- synthetic posteriors -------------------------------------------------

def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3 * sigma)))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (taps / sigma) ** 2)
    return k / k.sum()


def smooth_time(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve each column with ``kernel`` along time, replicating edge frames."""
    radius = (len(kernel) - 1) // 2
    padded = np.pad(x, [(radius, radius)] + [(0, 0)] * (x.ndim - 1), mode="edge")
    out = np.zeros_like(x, dtype=np.float64)
    for j, kj in enumerate(kernel):
        out += kj * padded[j:j + x.shape[0]]
    return out


def synth_ppg(phonemes, rng: RngState | np.random.Generator, noise: float = 0.02,
              sigma: float = 2.0, dim: int = PPG_DIM) -> np.ndarray:
    """Posteriorgram for a phoneme segmentation ``[(phoneme_id, n_frames), ...]``.

    One-hot labels are blurred across segment boundaries with a Gaussian of
    ``sigma`` frames, then mixed with Dirichlet noise at weight ``noise``.
    """
    labels = []
    for pid, dur in phonemes:
        if not 0 <= int(pid) < dim:
            raise InvalidInputError(f"phoneme id {pid} outside [0, {dim})")
        if int(dur) < 1:
            raise InvalidInputError(f"phoneme duration must be >= 1 frame, got {dur}")
        labels.extend([int(pid)] * int(dur))
    if not labels:
        raise InvalidInputError("empty phoneme sequence")
    onehot = np.zeros((len(labels), dim))
    onehot[np.arange(len(labels)), labels] = 1.0
    post = smooth_time(onehot, _gaussian_kernel(sigma))
    if noise > 0:
        gen = rng.generator() if isinstance(rng, RngState) else rng
        post = (1.0 - noise) * post + noise * gen.dirichlet(np.ones(dim), size=len(labels))
    post = np.clip(post, 0.0, None)
    return (post / post.sum(axis=1, keepdims=True)).astype(np.float32)


# -- normalisation --------------------------------------------------------

def apply_norm(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(x) - mean) / std


def invert_norm(z: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return np.asarray(z) * std + mean


def _floored_std(values: np.ndarray, what: str) -> np.ndarray:
    std = np.asarray(values.std(axis=0), dtype=np.float64)
    low = std < STD_FLOOR
    if np.any(low):
        warnings.warn(f"{what}: {int(np.sum(low))} zero-variance dimension(s); std floored at {STD_FLOOR}",
                      stacklevel=3)
        std = np.where(low, STD_FLOOR, std)
    return std


@dataclass
class NormStats:
    """Z-score statistics fitted on the training split (population std)."""

    anim_mean: np.ndarray
    anim_std: np.ndarray
    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float

    def normalize_animation(self, values: np.ndarray) -> np.ndarray:
        return apply_norm(values, self.anim_mean, self.anim_std).astype(np.float32)

    def denormalize_animation(self, z: np.ndarray, clamp: bool = True) -> np.ndarray:
        out = invert_norm(z, self.anim_mean, self.anim_std)
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return out.astype(np.float32)

    def prosody(self, fs: FeatureSequence) -> np.ndarray:
        """[T, 2] normalised (pitch, energy); unvoiced frames get pitch 0."""
        voiced = fs.pitch > 0
        pitch = np.where(voiced, (fs.pitch - self.pitch_mean) / self.pitch_std, 0.0)
        energy = (fs.energy - self.energy_mean) / self.energy_std
        return np.stack([pitch, energy], axis=1).astype(np.float32)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "norm.anim_mean": np.asarray(self.anim_mean, dtype=np.float32),
            "norm.anim_std": np.asarray(self.anim_std, dtype=np.float32),
            "norm.prosody": np.array(
                [self.pitch_mean, self.pitch_std, self.energy_mean, self.energy_std], dtype=np.float32
            ),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> NormStats:
        p = arrays["norm.prosody"]
        return cls(arrays["norm.anim_mean"], arrays["norm.anim_std"], float(p[0]), float(p[1]),
                   float(p[2]), float(p[3]))


def fit_norm_stats(animations, features) -> NormStats:
    """Fit on training data only: animation per channel, pitch over voiced frames, energy over all."""
    anim = np.concatenate([np.asarray(a, dtype=np.float64) for a in animations], axis=0)
    pitch = np.concatenate([np.asarray(f.pitch, dtype=np.float64) for f in features])
    energy = np.concatenate([np.asarray(f.energy, dtype=np.float64) for f in features])
    voiced = pitch[pitch > 0]
    if voiced.size == 0:
        voiced = np.zeros(1)
    # round-trip through float32 so stored stats reproduce the fitted ones exactly
    return NormStats(
        anim_mean=anim.mean(axis=0).astype(np.float32),
        anim_std=_floored_std(anim, "animation").astype(np.float32),
        pitch_mean=float(np.float32(voiced.mean())),
        pitch_std=float(np.float32(_floored_std(voiced, "pitch"))),
        energy_mean=float(np.float32(energy.mean())),
        energy_std=float(np.float32(_floored_std(energy, "energy"))),
    )
