"""Top-k gated mixture of convolutional experts with per-frame routing."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..numerics import (
    Tensor,
    concat,
    gather,
    mul,
    reshape,
    scatter_add,
    softmax_lastdim,
    sum as tsum,
    unfold_time,
)
from .layers import ExpertFFN, Linear, Module


def topk_selection(g: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries along the last axis; ties go to the lower index."""
    g = np.asarray(g)
    n = g.shape[-1]
    if not 1 <= k <= n:
        raise ConfigError(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-g, axis=-1, kind="stable")[..., :k]
    sel = np.zeros(g.shape, dtype=bool)
    np.put_along_axis(sel, order, True, axis=-1)
    return sel


def topk_scores(g, k: int) -> np.ndarray:
    """Keep the top-``k`` gate scores and set every other entry to ``-inf``."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ConfigError("gate scores must be finite")
    return np.where(topk_selection(g, k), g, -np.inf)


def routing_probs(g, k: int) -> np.ndarray:
    """Softmax over the top-k scores; non-selected experts get exactly 0."""
    s = topk_scores(g, k)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class MoeLayer(Module):
    """Per-frame top-k routing over ``n`` experts with sparse dispatch.

    Each frame ``t`` is scored by a linear gate; only the ``k`` selected
    experts run on it. An expert sees the frame's full convolution window
    from the (masked) input sequence, so the output equals evaluating every
    expert densely and weighting by the routing probabilities.
    """

    def __init__(self, d_model: int, n_experts: int, top_k: int, hidden: int, kernel: int,
                 gen: np.random.Generator):
        if not 1 <= top_k <= n_experts:
            raise ConfigError(f"top_k must lie in [1, {n_experts}], got {top_k}")
        self._k = top_k
        self._kernel = kernel
        self.gate = Linear(d_model, n_experts, gen)
        self.experts = [ExpertFFN(d_model, hidden, kernel, gen) for _ in range(n_experts)]
        self._last_probs: np.ndarray | None = None
        self._last_selection: np.ndarray | None = None
        self._aux_loss: Tensor | None = None

    @property
    def aux_loss(self) -> Tensor | None:
        """Importance (load-balancing) penalty from the last call, if requested."""
        return self._aux_loss

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def top_k(self) -> int:
        return self._k

    def __call__(self, h: Tensor, mask: np.ndarray | None = None, importance_weight: float = 0.0) -> Tensor:
        B, T, d = h.shape
        N, n = B * T, self.n_experts
        if mask is None:
            mask = np.ones((B, T), dtype=h.dtype)
        hm = mul(h, mask[..., None].astype(h.dtype))
        windows = reshape(unfold_time(hm, self._kernel), (N, self._kernel * d))

        logits = reshape(self.gate(h), (N, n))
        sel = topk_selection(logits.data, self._k)
        probs = softmax_lastdim(logits + np.where(sel, 0.0, -np.inf).astype(h.dtype))
        valid = mask.reshape(N) > 0
        self._last_probs = probs.data
        self._last_selection = sel

        outs, rows = [], []
        for i, expert in enumerate(self.experts):
            idx = np.flatnonzero(sel[:, i] & valid)
            if idx.size == 0:
                continue
            y = expert.on_windows(gather(windows, idx))
            outs.append(mul(y, gather(probs, (idx, slice(i, i + 1)))))
            rows.append(idx)
        if outs:
            out = scatter_add(concat(outs, axis=0), np.concatenate(rows), (N, d))
        else:
            out = Tensor(np.zeros((N, d), dtype=h.dtype))

        self._aux_loss = None
        if importance_weight > 0 and valid.any():
            # rows sum to 1, so the mean importance is a constant
            importance = tsum(gather(probs, valid), axis=0)
            mu = float(valid.sum()) / n
            centered = importance - mu
            cv2 = tsum(mul(centered, centered)) * (1.0 / (n * mu * mu))
            self._aux_loss = mul(cv2, importance_weight)
        return reshape(out, (B, T, d))
