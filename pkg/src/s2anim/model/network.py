"""Transformer-S2A: content encoder over PPGs, prosody fusion, expert decoder, blendshape head."""
from __future__ import annotations

import numpy as np

from ..animation import ANIMATION_FPS, AnimationSequence
from ..errors import ConfigError, ShapeError
from ..features import FeatureSequence, NormStats, animation_length, resample_features
from ..numerics import RngState, Tensor, concat, no_grad, reshape
from .config import VARIANTS, ModelConfig
from .layers import (
    Dropout,
    ExpertFFN,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    key_padding_bias,
    positional_encoding,
)
from .moe import MoeLayer


class Block(Module):
    """Pre-LN residual block: x + attn(LN(x)), then x + ffn(LN(x))."""

    def __init__(self, cfg: ModelConfig, ffn: Module, gen: np.random.Generator):
        self.attn_norm = LayerNorm(cfg.d_model)
        self.attn = MultiHeadSelfAttention(cfg.d_model, cfg.n_heads, gen)
        self.ffn_norm = LayerNorm(cfg.d_model)
        self.ffn = ffn
        self.drop = Dropout(cfg.dropout)

    def __call__(self, x: Tensor, bias: np.ndarray, mask: np.ndarray, importance_weight: float = 0.0) -> Tensor:
        x = x + self.drop(self.attn(self.attn_norm(x), bias))
        h = self.ffn_norm(x)
        if isinstance(self.ffn, MoeLayer):
            y = self.ffn(h, mask, importance_weight)
        else:
            y = self.ffn(h, mask)
        return x + self.drop(y)


def variant_flags(variant: str) -> tuple[str, bool]:
    """(decoder feed-forward kind, prosody enabled) for a training variant name."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    return ("dense" if variant == "dense" else "moe"), variant != "no-prosody"


class TransformerS2A(Module):
    """Non-autoregressive speech-to-animation network.

    ``variant`` selects the ablation: ``dense`` swaps every MOE layer for a
    single expert-shaped FFN with ``top_k * expert_hidden`` hidden units
    (same per-frame FLOPs as the k active experts), ``no-prosody`` zeroes pitch and energy inputs
    in training and inference, ``dense-features`` only changes the input
    width (``cfg.ppg_dim``).
    """

    def __init__(self, cfg: ModelConfig, rng: RngState | np.random.Generator, variant: str = "moe"):
        cfg.validate()
        self._cfg = cfg
        self._variant = variant
        ffn_kind, self._use_prosody = variant_flags(variant)
        gen = rng.generator() if isinstance(rng, RngState) else rng

        self.input_proj = Linear(cfg.ppg_dim, cfg.d_model, gen)
        self.encoder = [
            Block(cfg, FeedForward(cfg.d_model, cfg.expert_hidden, gen), gen) for _ in range(cfg.n_enc_blocks)
        ]
        self.enc_norm = LayerNorm(cfg.d_model)
        self.fuse = Linear(cfg.d_model + cfg.prosody_dim, cfg.d_model, gen)

        def decoder_ffn() -> Module:
            if ffn_kind == "dense":
                # one expert-shaped FFN as wide as the k active experts together
                return ExpertFFN(cfg.d_model, cfg.expert_hidden * cfg.top_k, cfg.expert_kernel, gen)
            return MoeLayer(cfg.d_model, cfg.n_experts, cfg.top_k, cfg.expert_hidden, cfg.expert_kernel, gen)

        self.decoder = [Block(cfg, decoder_ffn(), gen) for _ in range(cfg.n_dec_blocks)]
        self.out_norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.out_dim, gen)
        self.drop = Dropout(cfg.dropout)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def variant(self) -> str:
        return self._variant

    @property
    def uses_prosody(self) -> bool:
        return self._use_prosody

    def seed_dropout(self, gen: np.random.Generator) -> None:
        for m in self.modules():
            if isinstance(m, Dropout):
                m.seed(gen)

    def moe_layers(self) -> list[MoeLayer]:
        return [b.ffn for b in self.decoder if isinstance(b.ffn, MoeLayer)]

    def aux_loss(self) -> Tensor | None:
        terms = [m.aux_loss for m in self.moe_layers() if m.aux_loss is not None]
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    def __call__(self, ppg, prosody, lengths=None) -> Tensor:
        """Batched forward in normalised target space.

        ``ppg`` is ``[B, T, ppg_dim]`` (or ``[T, ppg_dim]``), ``prosody`` is
        ``[B, T, 2]``, ``lengths`` gives each sequence's valid frame count.
        Returns ``[B, T, 32]`` (or ``[T, 32]``).
        """
        cfg = self._cfg
        ppg = ppg if isinstance(ppg, Tensor) else Tensor(ppg, dtype=self.input_proj.weight.dtype)
        prosody = np.asarray(prosody.data if isinstance(prosody, Tensor) else prosody)
        single = ppg.ndim == 2
        if single:
            ppg = _unsqueeze(ppg)
            prosody = prosody[None]
        B, T, D = ppg.shape
        if D != cfg.ppg_dim:
            raise ShapeError(f"input feature width {D} does not match model ppg_dim {cfg.ppg_dim}")
        if prosody.shape != (B, T, cfg.prosody_dim):
            raise ShapeError(f"prosody shape {prosody.shape} does not match features {(B, T, cfg.prosody_dim)}")
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        dtype = ppg.dtype
        bias = key_padding_bias(lengths, T, dtype)
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(dtype)
        if not self._use_prosody:
            prosody = np.zeros_like(prosody)

        x = self.input_proj(ppg) + positional_encoding(T, cfg.d_model).astype(dtype)
        x = self.drop(x)
        for block in self.encoder:
            x = block(x, bias, mask)
        x = self.enc_norm(x)
        x = self.fuse(concat([x, Tensor(prosody.astype(dtype))], axis=-1))
        for block in self.decoder:
            x = block(x, bias, mask, cfg.importance_loss_weight)
        y = self.head(self.out_norm(x))
        if single:
            y = y[0]
        return y

    def prepare(self, fs: FeatureSequence, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
        """Resample to the animation rate (if needed) and normalise prosody."""
        if fs.frame_rate_hz != ANIMATION_FPS:
            fs = resample_features(fs, animation_length(len(fs), fs.frame_rate_hz, ANIMATION_FPS))
        if fs.dim != self._cfg.ppg_dim:
            raise ShapeError(f"feature width {fs.dim} does not match model ppg_dim {self._cfg.ppg_dim}")
        return fs.ppg, stats.prosody(fs)

    def predict(self, fs: FeatureSequence, stats: NormStats) -> AnimationSequence:
        """Denormalised, clamped blendshape curves at 60 fps."""
        ppg, prosody = self.prepare(fs, stats)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                z = self(ppg, prosody).data
        finally:
            self.train(was_training)
        return AnimationSequence(stats.denormalize_animation(z), utterance_id=fs.utterance_id)


def _unsqueeze(t: Tensor) -> Tensor:
    return reshape(t, (1,) + t.shape)


def count_parameters(cfg: ModelConfig, variant: str = "moe") -> int:
    return TransformerS2A(cfg, np.random.default_rng(0), variant).n_parameters()


def flops_per_frame(model: TransformerS2A) -> dict[str, int]:
    """Decoder feed-forward multiply-adds x2 per frame (active experts only)."""
    out = {}
    for i, block in enumerate(model.decoder):
        if isinstance(block.ffn, MoeLayer):
            out[f"decoder.{i}"] = block.ffn.top_k * block.ffn.experts[0].flops_per_frame()
        else:
            out[f"decoder.{i}"] = block.ffn.flops_per_frame()
    return out


def mean_predictor(stats: NormStats):
    """Baseline that always outputs the training-set mean pose."""

    def predict(fs: FeatureSequence) -> AnimationSequence:
        n = len(fs) if fs.frame_rate_hz == ANIMATION_FPS else animation_length(len(fs), fs.frame_rate_hz)
        values = np.repeat(np.clip(stats.anim_mean, 0, 1)[None].astype(np.float32), n, axis=0)
        return AnimationSequence(values, utterance_id=fs.utterance_id)

    return predict


__all__ = ["TransformerS2A", "count_parameters", "flops_per_frame", "mean_predictor", "variant_flags"]
