"""Objective metrics: blendshape RMSE reports and single-thread real-time-factor benchmarks."""
from __future__ import annotations

import json
import math
import statistics
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .animation import ANIMATION_FPS, BLENDSHAPE_CHANNELS, CRUCIAL_CHANNELS, AnimationSequence
from .errors import ConfigError, InvalidInputError, S2AError, ShapeError
from .features import NormStats
from .model import BlstmBaseline, ModelCheckpoint, TransformerS2A
from .numerics import no_grad

REPORT_VERSION = 1
CV_STABLE = 0.3


class BenchmarkError(S2AError, RuntimeError):
    """Timing cannot be trusted (timer too coarse, or measurement failed)."""


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, AnimationSequence) else np.asarray(x)


def rmse(pred, ref, channels: Sequence[str] | None = None) -> float:
    """Root mean squared error over frames x ``channels`` (all 32 when None), raw units."""
    p, r = _values(pred), _values(ref)
    if p.shape != r.shape:
        raise ShapeError(f"prediction {p.shape} and reference {r.shape} differ")
    if channels is not None:
        channels = list(channels)
        if not channels:
            raise ConfigError("channel subset must be non-empty")
        unknown = [c for c in channels if c not in BLENDSHAPE_CHANNELS]
        if unknown:
            raise ConfigError(f"unknown channels {unknown}")
        idx = [BLENDSHAPE_CHANNELS.index(c) for c in channels]
        p, r = p[:, idx], r[:, idx]
    if p.size == 0:
        raise InvalidInputError("rmse over an empty sequence")
    return float(np.sqrt(np.mean((p.astype(np.float64) - r.astype(np.float64)) ** 2)))


@dataclass
class RmseReport:
    """Per-variant RMSE across test utterances, in raw [0, 1] blendshape units."""

    name: str
    entire_mean: float
    entire_std: float
    crucial_mean: float
    crucial_std: float
    pooled_entire: float
    per_utterance: dict[str, dict[str, float]]
    crucial_channels: tuple[str, ...] = CRUCIAL_CHANNELS

    @property
    def entire_mean_x100(self) -> float:
        return 100.0 * self.entire_mean

    @property
    def crucial_mean_x100(self) -> float:
        return 100.0 * self.crucial_mean

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crucial_channels"] = list(self.crucial_channels)
        for key in ("entire_mean", "entire_std", "crucial_mean", "crucial_std"):
            d[f"{key}_x100"] = 100.0 * d[key]
        return d


def rmse_report(name: str, preds: Mapping[str, AnimationSequence], refs: Mapping[str, AnimationSequence],
                crucial: Sequence[str] = CRUCIAL_CHANNELS) -> RmseReport:
    missing = sorted(set(refs) ^ set(preds))
    if missing:
        raise InvalidInputError(f"unmatched utterance ids: {missing}")
    if not refs:
        raise InvalidInputError("no utterances to evaluate")
    per = {}
    sq_sum, n_cells = 0.0, 0
    for uid in sorted(refs):
        p, r = _values(preds[uid]), _values(refs[uid])
        per[uid] = {"entire": rmse(p, r), "crucial": rmse(p, r, crucial)}
        sq_sum += float(np.sum((p.astype(np.float64) - r) ** 2))
        n_cells += r.size
    entire = [v["entire"] for v in per.values()]
    cruc = [v["crucial"] for v in per.values()]
    return RmseReport(name, float(np.mean(entire)), float(np.std(entire)), float(np.mean(cruc)),
                      float(np.std(cruc)), math.sqrt(sq_sum / n_cells), per, tuple(crucial))


@dataclass
class SuiteResult:
    reports: list[RmseReport]

    def __getitem__(self, name: str) -> RmseReport:
        for r in self.reports:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        body = {"version": REPORT_VERSION, "kind": "rmse", "units": "raw blendshape [0,1]",
                "reports": [r.to_dict() for r in self.reports]}
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        header = ("variant", "entire", "entire_std", "crucial", "crucial_std", "entire_x100", "crucial_x100")
        rows = [header] + [
            (r.name, f"{r.entire_mean:.5f}", f"{r.entire_std:.5f}", f"{r.crucial_mean:.5f}",
             f"{r.crucial_std:.5f}", f"{r.entire_mean_x100:.3f}", f"{r.crucial_mean_x100:.3f}")
            for r in self.reports
        ]
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                 for row in rows]
        return "\n".join(lines)


def _predictor(entry) -> Callable:
    """Turn a checkpoint, model or callable into ``item -> AnimationSequence``."""
    if isinstance(entry, ModelCheckpoint):
        model, stats, variant = entry.build(), entry.stats, entry.variant
    elif isinstance(entry, tuple) and isinstance(entry[0], (TransformerS2A, BlstmBaseline)):
        model, stats = entry
        variant = getattr(model, "variant", "moe")
    else:
        return lambda item: entry(item.features)

    def predict(item):
        fs = item.dense_features if variant == "dense-features" else item.features
        return model.predict(fs, stats)

    return predict


def evaluate_suite(predictors: Mapping[str, object], test_items: Sequence) -> SuiteResult:
    """One :class:`RmseReport` per named predictor over ``test_items``.

    A predictor is a :class:`ModelCheckpoint`, a ``(model, stats)`` pair, or a
    callable taking a :class:`FeatureSequence`. ``None`` entries are skipped
    with a warning.
    """
    refs = {it.id: it.animation for it in test_items}
    reports = []
    for name, entry in predictors.items():
        if entry is None:
            warnings.warn(f"variant {name!r} has no checkpoint; skipped", stacklevel=2)
            continue
        predict = _predictor(entry)
        preds = {it.id: predict(it) for it in test_items}
        reports.append(rmse_report(name, preds, refs))
    return SuiteResult(reports)


# -- RTF benchmark ----------------------------------------------------------

@dataclass
class ModelTiming:
    times_s: list[float]
    mean_s: float
    std_s: float
    rtf_mean: float
    rtf_std: float
    cv: float
    stable: bool
    speedup: float | None = None


@dataclass
class RtfReport:
    frames: int
    runs: int
    warmup: int
    threads: int
    fps: float
    baseline: str | None
    models: dict[str, ModelTiming] = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return all(m.stable for m in self.models.values())

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "kind": "rtf", "frames": self.frames, "runs": self.runs,
                "warmup": self.warmup, "threads": self.threads, "fps": self.fps, "baseline": self.baseline,
                "stable": self.stable, "models": {k: asdict(v) for k, v in self.models.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        rows = [("model", "rtf_mean", "rtf_std", "cv", "speedup", "stable")]
        for name, m in self.models.items():
            sp = "-" if m.speedup is None else f"{m.speedup:.2f}x"
            rows.append((name, f"{m.rtf_mean:.5f}", f"{m.rtf_std:.5f}", f"{m.cv:.3f}", sp, str(m.stable).lower()))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                         for r in rows)


def make_runner(model, frames: int, stats: NormStats | None = None, seed: int = 0) -> Callable[[], None]:
    """Zero-argument closure running one forward pass on random inputs of ``frames`` frames.

    The pass includes denormalisation when ``stats`` is given, and excludes any I/O.
    """
    gen = np.random.default_rng(seed)
    if isinstance(model, ModelCheckpoint):
        model, stats = model.build(), model.stats
    if isinstance(model, TransformerS2A):
        cfg = model.config
        ppg = gen.dirichlet(np.ones(cfg.ppg_dim), size=frames).astype(np.float32)
        pro = gen.normal(size=(frames, cfg.prosody_dim)).astype(np.float32)
        model.eval()

        def run():
            with no_grad():
                z = model(ppg, pro).data
            if stats is not None:
                stats.denormalize_animation(z)

        return run
    if isinstance(model, BlstmBaseline):
        x = gen.normal(size=(frames, model.in_dim)).astype(np.float32)

        def run():
            z = model(x)
            if stats is not None:
                stats.denormalize_animation(z)

        return run
    if callable(model):
        return model
    raise InvalidInputError(f"cannot benchmark object of type {type(model).__name__}")


def bench_rtf(models: Mapping[str, object], frames: int = 720, runs: int = 10, warmup: int = 2,
              baseline: str | None = "BLSTM", fps: float = ANIMATION_FPS, stats: NormStats | None = None,
              seed: int = 0) -> RtfReport:
    """Time forward passes single-threaded; RTF = mean seconds / (frames / fps)."""
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    if runs < 5:
        raise ConfigError(f"at least 5 timed runs are required, got {runs}")
    if warmup < 2:
        raise ConfigError(f"at least 2 warmup runs are required, got {warmup}")
    if baseline is not None and baseline not in models:
        raise ConfigError(f"baseline {baseline!r} is not among the benchmarked models")
    resolution = time.get_clock_info("perf_counter").resolution
    seconds = frames / fps
    report = RtfReport(frames, runs, warmup, 1, fps, baseline)
    with threadpool_limits(limits=1):
        for name, model in models.items():
            run = make_runner(model, frames, stats, seed)
            for _ in range(warmup):
                run()
            times = []
            for _ in range(runs):
                t0 = time.perf_counter()
                run()
                times.append(time.perf_counter() - t0)
            if min(times) <= 0 or resolution > 0.01 * min(times):
                raise BenchmarkError(
                    f"{name}: timer resolution {resolution:.3g}s is coarser than 1% of the run time {min(times):.3g}s"
                )
            mean = statistics.fmean(times)
            std = statistics.stdev(times)
            cv = std / mean
            report.models[name] = ModelTiming(times, mean, std, mean / seconds, std / seconds, cv, cv < CV_STABLE)
    if baseline is not None:
        base = report.models[baseline].rtf_mean
        for timing in report.models.values():
            timing.speedup = base / timing.rtf_mean
    return report


def blstm_for(model: TransformerS2A, gen: np.random.Generator | None = None) -> BlstmBaseline:
    """BLSTM baseline with a parameter count matched to ``model``, same input width."""
    cfg = model.config
    return BlstmBaseline.matched(model.n_parameters(), cfg.ppg_dim + cfg.prosody_dim, cfg.out_dim, gen)


__all__ = [
    "BenchmarkError",
    "ModelTiming",
    "RmseReport",
    "RtfReport",
    "SuiteResult",
    "bench_rtf",
    "blstm_for",
    "evaluate_suite",
    "make_runner",
    "rmse",
    "rmse_report",
]
