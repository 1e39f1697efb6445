"""Mini-batch MSE training with Adam, length bucketing, early stopping and checkpoints."""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .animation import ANIMATION_FPS
from .corpus import Corpus, CorpusItem
from .errors import ConfigError, InvalidInputError, TrainingDiverged
from .features import FeatureSequence, NormStats, fit_norm_stats, resample_features
from .model import ModelCheckpoint, ModelConfig, TransformerS2A
from .model.config import VARIANTS
from .numerics import RngState, Tensor, mul, no_grad
from .numerics import sum as tsum

# RngState stream tags
_INIT, _DROPOUT, _SHUFFLE = 0, 1, 2


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    grad_clip_norm: float = 1.0
    time_budget_s: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        for name in ("eps", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("batch_size", "max_epochs", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.early_stop_patience > self.max_epochs:
            raise ConfigError(
                f"early_stop_patience {self.early_stop_patience} exceeds max_epochs {self.max_epochs}"
            )
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ConfigError("time_budget_s must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def mse_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over valid (frame, channel) cells; ``mask`` is [B, T] or [T]."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InvalidInputError(f"prediction {pred.shape} and target {target.shape} differ")
    m = np.asarray(mask, dtype=pred.dtype)
    if m.shape != pred.shape[:-1]:
        raise InvalidInputError(f"mask {m.shape} does not match frames {pred.shape[:-1]}")
    n_valid = float(m.sum()) * pred.shape[-1]
    if n_valid == 0:
        raise InvalidInputError("mse_loss over zero valid frames")
    diff = mul(pred - target.astype(pred.dtype), m[..., None])
    return tsum(mul(diff, diff)) * (1.0 / n_valid)


class Adam:
    """Adam with global-norm gradient clipping, operating in place on parameter arrays."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-8, clip_norm: float | None = 1.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps, self.clip_norm = lr, beta1, beta2, eps, clip_norm
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def clip(self, grads: list[np.ndarray]) -> float:
        """Rescale ``grads`` in place; returns the norm before clipping."""
        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
            for g in grads:
                g *= scale
        return norm

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in self.params]
        norm = self.clip(grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)
        return norm


@dataclass
class Example:
    id: str
    ppg: np.ndarray  # [T, D] at 60 fps
    prosody: np.ndarray  # [T, 2] normalised
    target: np.ndarray  # [T, 32] normalised
    animation: np.ndarray  # [T, 32] raw

    def __len__(self) -> int:
        return self.ppg.shape[0]


def features_for(item: CorpusItem, variant: str) -> FeatureSequence:
    if variant == "dense-features":
        if item.dense_features is None:
            raise InvalidInputError(f"{item.id}: dense feature variant missing")
        return item.dense_features
    return item.features


def make_example(item: CorpusItem, variant: str, stats: NormStats) -> Example:
    fs = features_for(item, variant)
    T2 = len(item.animation)
    if fs.frame_rate_hz != ANIMATION_FPS or len(fs) != T2:
        fs = resample_features(fs, T2)
    anim = item.animation.values
    return Example(item.id, fs.ppg, stats.prosody(fs), stats.normalize_animation(anim), anim)


def make_batches(lengths: Sequence[int], batch_size: int, gen: np.random.Generator | None = None) -> list[list[int]]:
    """Group indices of similar length; batch order shuffled by ``gen`` when given."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if gen is not None:
        batches = [batches[j] for j in gen.permutation(len(batches))]
    return batches


def collate(examples: Sequence[Example], dtype=np.float32):
    """Pad to the longest example; returns ppg, prosody, target, lengths, mask."""
    T = max(len(e) for e in examples)
    B = len(examples)
    D = examples[0].ppg.shape[1]
    ppg = np.zeros((B, T, D), dtype)
    pro = np.zeros((B, T, 2), dtype)
    tgt = np.zeros((B, T, examples[0].target.shape[1]), dtype)
    lengths = np.array([len(e) for e in examples])
    for b, e in enumerate(examples):
        n = len(e)
        ppg[b, :n], pro[b, :n], tgt[b, :n] = e.ppg, e.prosody, e.target
    mask = (np.arange(T)[None] < lengths[:, None]).astype(dtype)
    return ppg, pro, tgt, lengths, mask


def batch_loss(model: TransformerS2A, examples: Sequence[Example]) -> Tensor:
    ppg, pro, tgt, lengths, mask = collate(examples, model.input_proj.weight.dtype)
    loss = mse_loss(model(ppg, pro, lengths), tgt, mask)
    aux = model.aux_loss()
    return loss if aux is None else loss + aux


def evaluate_rmse(model: TransformerS2A, examples: Sequence[Example], stats: NormStats,
                  batch_size: int = 8) -> float:
    """Mean over utterances of the raw-unit RMSE across all 32 channels."""
    values = []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for idx in make_batches([len(e) for e in examples], batch_size):
                batch = [examples[i] for i in idx]
                ppg, pro, _, lengths, _ = collate(batch)
                z = model(ppg, pro, lengths).data
                for b, e in enumerate(batch):
                    pred = stats.denormalize_animation(z[b, :len(e)])
                    values.append(float(np.sqrt(np.mean((pred.astype(np.float64) - e.animation) ** 2))))
    finally:
        model.train(was_training)
    return float(np.mean(values))


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _items(corpus, split: str) -> list[CorpusItem]:
    if isinstance(corpus, Corpus):
        return corpus.split(split)
    return list(corpus[split])


def fit(corpus, model_cfg: ModelConfig, train_cfg: TrainConfig, variant: str = "moe",
        log: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on ``corpus`` (a :class:`Corpus` or a mapping of split name to items).

    Every epoch emits ``{"epoch", "train_loss", "val_rmse", "grad_norm"}`` to ``log``.
    The returned checkpoint holds the parameters from the best validation epoch.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    train_items, val_items = _items(corpus, "train"), _items(corpus, "val")
    if not train_items or not val_items:
        raise InvalidInputError("training needs non-empty train and val splits")
    if variant == "dense-features":
        model_cfg = replace(model_cfg, ppg_dim=train_items[0].dense_features.dim)

    stats = fit_norm_stats([it.animation.values for it in train_items],
                           [features_for(it, variant) for it in train_items])
    train_ex = [make_example(it, variant, stats) for it in train_items]
    val_ex = [make_example(it, variant, stats) for it in val_items]
    if train_ex[0].ppg.shape[1] != model_cfg.ppg_dim:
        raise ConfigError(f"feature width {train_ex[0].ppg.shape[1]} does not match ppg_dim {model_cfg.ppg_dim}")

    root = RngState(train_cfg.seed)
    model = TransformerS2A(model_cfg, root.child(_INIT), variant)
    model.seed_dropout(root.child(_DROPOUT).generator())
    opt = Adam(model.parameters(), train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2,
               train_cfg.eps, train_cfg.grad_clip_norm)

    history: list[dict] = []
    best = (math.inf, 0, model.state_dict())
    stale = 0
    stopped_early = False
    start = time.perf_counter()
    lengths = [len(e) for e in train_ex]
    for epoch in range(1, train_cfg.max_epochs + 1):
        model.train()
        gen = root.child(_SHUFFLE, epoch).generator()
        total, count, norm = 0.0, 0, 0.0
        for step, idx in enumerate(make_batches(lengths, train_cfg.batch_size, gen)):
            batch = [train_ex[i] for i in idx]
            model.zero_grad()
            loss = batch_loss(model, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {step} "
                    f"(utterances {[e.id for e in batch]}); last gradient norm {norm:.4g}"
                )
            loss.backward()
            norm = opt.step()
            total += value * len(batch)
            count += len(batch)
        val = evaluate_rmse(model, val_ex, stats, train_cfg.batch_size)
        record = {"epoch": epoch, "train_loss": total / count, "val_rmse": val, "grad_norm": norm}
        history.append(record)
        if log is not None:
            log(record)
        if val < best[0]:
            best = (val, epoch, model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.early_stop_patience:
                stopped_early = True
                break
        if train_cfg.time_budget_s is not None and time.perf_counter() - start > train_cfg.time_budget_s:
            break

    model.load_state_dict(best[2])
    meta = {"seed": train_cfg.seed, "best_epoch": best[1], "best_val_rmse": best[0],
            "epochs_run": len(history), "train_config": train_cfg.to_dict()}
    return TrainResult(ModelCheckpoint.from_model(model, stats, **meta), history, best[1], stopped_early)


def train(corpus, model_cfg: ModelConfig, train_cfg: TrainConfig, variant: str = "moe",
          log: Callable[[dict], None] | None = None) -> ModelCheckpoint:
    return fit(corpus, model_cfg, train_cfg, variant, log).checkpoint


def jsonl_logger(fh) -> Callable[[dict], None]:
    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()

    return write


@dataclass
class OverfitResult:
    checkpoint: ModelCheckpoint
    losses: list[float]
    rmse: float
    steps: int
    converged: bool


def overfit_single(item: CorpusItem, model_cfg: ModelConfig | None = None, variant: str = "moe",
                   steps: int = 500, learning_rate: float = 3e-3, threshold: float = 0.02,
                   seed: int = 0) -> OverfitResult:
    """Fit one utterance; stops once the normalised-space RMSE drops below ``threshold``.

    A model that cannot memorise a single utterance this way has broken
    gradients or a broken forward pass.
    """
    model_cfg = model_cfg or ModelConfig.tiny()
    if variant == "dense-features":
        model_cfg = replace(model_cfg, ppg_dim=item.dense_features.dim)
    fs = features_for(item, variant)
    with warnings.catch_warnings():
        # a single utterance can leave some channels constant; the std floor handles it
        warnings.simplefilter("ignore")
        stats = fit_norm_stats([item.animation.values], [fs])
    ex = make_example(item, variant, stats)
    root = RngState(seed)
    model = TransformerS2A(model_cfg, root.child(_INIT), variant)
    model.seed_dropout(root.child(_DROPOUT).generator())
    model.train()
    opt = Adam(model.parameters(), learning_rate, clip_norm=1.0)
    losses: list[float] = []
    rmse = math.inf
    for _ in range(steps):
        model.zero_grad()
        loss = batch_loss(model, [ex])
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss on {item.id} after {len(losses)} steps")
        losses.append(value)
        rmse = math.sqrt(value)
        if rmse < threshold:
            break
        loss.backward()
        opt.step()
    ck = ModelCheckpoint.from_model(model, stats, seed=seed, steps=len(losses))
    return OverfitResult(ck, losses, rmse, len(losses), rmse < threshold)


__all__ = [
    "Adam",
    "OverfitResult",
    "TrainConfig",
    "TrainResult",
    "batch_loss",
    "collate",
    "evaluate_rmse",
    "fit",
    "jsonl_logger",
    "make_batches",
    "make_example",
    "mse_loss",
    "overfit_single",
    "train",
]
