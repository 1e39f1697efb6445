"""Parameter containers and Transformer building blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ConfigError, ShapeError
from ..numerics import (
    Tensor,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax_lastdim,
    transpose,
    unfold_time,
)

LN_EPS = 1e-5


class Module:
    """Walks attributes in definition order to give every parameter a stable dotted name."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for m in value:
                    yield from m.modules()

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} vs model {p.shape}")
            p.data = value.astype(p.dtype, copy=True)


def param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


def _uniform(gen: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, gen: np.random.Generator):
        self.weight = param(_uniform(gen, d_in, (d_in, d_out)))
        self.bias = param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = param(np.ones(d))
        self.bias = param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, LN_EPS)


class Dropout(Module):
    def __init__(self, rate: float):
        self._rate = rate
        self._gen: np.random.Generator | None = None

    def seed(self, gen: np.random.Generator) -> None:
        self._gen = gen

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self._rate == 0.0:
            return x
        if self._gen is None:
            raise RuntimeError("dropout used in training mode without a seeded generator")
        keep = (self._gen.random(x.shape) >= self._rate) / (1.0 - self._rate)
        return mul(x, keep.astype(x.dtype))


def positional_encoding(T: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, wavelengths up to 10000*2pi."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    if T < 1:
        raise ConfigError(f"positional encoding needs T >= 1, got {T}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.zeros((T, d_model))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe


def key_padding_bias(lengths, T: int, dtype=np.float32) -> np.ndarray:
    """Additive attention bias [B, 1, 1, T]: 0 on valid keys, -inf on padding."""
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if np.any(lengths > T):
        raise ShapeError(f"valid length {int(lengths.max())} exceeds sequence length {T}")
    if np.any(lengths < 1):
        raise ShapeError("every sequence needs at least one valid frame")
    valid = np.arange(T)[None, :] < lengths[:, None]
    return np.where(valid, 0.0, -np.inf).astype(dtype)[:, None, None, :]


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the whole (non-causal) sequence."""

    def __init__(self, d_model: int, n_heads: int, gen: np.random.Generator):
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self._heads = n_heads
        self.q = Linear(d_model, d_model, gen)
        self.k = Linear(d_model, d_model, gen)
        self.v = Linear(d_model, d_model, gen)
        self.out = Linear(d_model, d_model, gen)
        self._last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, T, d = x.shape
        return transpose(reshape(x, (B, T, self._heads, d // self._heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        B, T, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self._heads))
        if bias is not None:
            scores = scores + bias.astype(x.dtype)
        weights = softmax_lastdim(scores)
        self._last_weights = weights.data
        ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (B, T, d))
        return self.out(ctx)


class FeedForward(Module):
    """Position-wise two-layer ReLU network used in the encoder blocks."""

    def __init__(self, d_model: int, hidden: int, gen: np.random.Generator):
        self.fc1 = Linear(d_model, hidden, gen)
        self.fc2 = Linear(hidden, d_model, gen)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class ExpertFFN(Module):
    """Stride-1 time convolution, ReLU, then a fully connected projection back to d_model."""

    def __init__(self, d_model: int, hidden: int, kernel: int, gen: np.random.Generator):
        if kernel % 2 == 0:
            raise ConfigError(f"expert kernel must be odd, got {kernel}")
        self._kernel = kernel
        self.conv_weight = param(_uniform(gen, kernel * d_model, (kernel, d_model, hidden)))
        self.conv_bias = param(np.zeros(hidden))
        self.fc_weight = param(_uniform(gen, hidden, (hidden, d_model)))
        self.fc_bias = param(np.zeros(d_model))

    @property
    def kernel(self) -> int:
        return self._kernel

    def on_windows(self, cols: Tensor) -> Tensor:
        """Apply to pre-unfolded windows ``[rows, K*d]`` (see ``unfold_time``)."""
        K, d, H = self.conv_weight.shape
        hidden = relu(matmul(cols, reshape(self.conv_weight, (K * d, H))) + self.conv_bias)
        return matmul(hidden, self.fc_weight) + self.fc_bias

    def __call__(self, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Full-sequence evaluation on ``[B, T, d]``; padded frames are zeroed before the convolution."""
        if mask is not None:
            h = mul(h, mask[..., None].astype(h.dtype))
        return self.on_windows(unfold_time(h, self._kernel))

    def flops_per_frame(self) -> int:
        K, d, H = self.conv_weight.shape
        return 2 * (K * d * H + H * d)
