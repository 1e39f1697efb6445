"""Bidirectional LSTM baseline, forward only, used for inference timing."""
from __future__ import annotations

import math

import numpy as np

from ..animation import AnimationSequence
from ..errors import ShapeError
from ..features import FeatureSequence, NormStats


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class BlstmBaseline:
    """Two LSTMs (forward and reversed time) feeding a linear head.

    Gate layout along the 4H axis is input, forget, cell, output. Frames are
    processed strictly one after another in each direction.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int = 32,
                 gen: np.random.Generator | None = None, dtype=np.float32):
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        H = hidden
        gen = gen if gen is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(H)

        def u(*shape):
            return gen.uniform(-bound, bound, size=shape).astype(dtype)

        self.params = {}
        for d in ("fw", "bw"):
            self.params[f"{d}.W"] = u(in_dim, 4 * H)
            self.params[f"{d}.U"] = u(H, 4 * H)
            self.params[f"{d}.b"] = np.zeros(4 * H, dtype=dtype)
        self.params["head.W"] = u(2 * H, out_dim)
        self.params["head.b"] = np.zeros(out_dim, dtype=dtype)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @staticmethod
    def parameter_count(in_dim: int, hidden: int, out_dim: int = 32) -> int:
        H = hidden
        return 2 * (4 * H * in_dim + 4 * H * H + 4 * H) + 2 * H * out_dim + out_dim

    @classmethod
    def matched(cls, target_params: int, in_dim: int, out_dim: int = 32,
                gen: np.random.Generator | None = None) -> BlstmBaseline:
        """Hidden size whose parameter count is closest to ``target_params``."""
        # 8H^2 + H(8*in + 8 + 2*out) + out = target
        a, b, c = 8.0, 8.0 * in_dim + 8 + 2 * out_dim, out_dim - target_params
        h = max(1, int(round((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a))))
        best = min((h - 1, h, h + 1), key=lambda H: abs(cls.parameter_count(in_dim, max(H, 1), out_dim) - target_params))
        return cls(in_dim, max(best, 1), out_dim, gen)

    def _direction(self, x: np.ndarray, prefix: str, reverse: bool) -> np.ndarray:
        W, U, b = self.params[f"{prefix}.W"], self.params[f"{prefix}.U"], self.params[f"{prefix}.b"]
        H = self.hidden
        T = x.shape[0]
        xw = x @ W + b
        h = np.zeros(H, dtype=x.dtype)
        c = np.zeros(H, dtype=x.dtype)
        out = np.empty((T, H), dtype=x.dtype)
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            z = xw[t] + h @ U
            i = _sigmoid(z[:H])
            f = _sigmoid(z[H:2 * H])
            g = np.tanh(z[2 * H:3 * H])
            o = _sigmoid(z[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out[t] = h
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.params["head.W"].dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"BLSTM expects [T, {self.in_dim}], got {x.shape}")
        hs = np.concatenate([self._direction(x, "fw", False), self._direction(x, "bw", True)], axis=1)
        return hs @ self.params["head.W"] + self.params["head.b"]

    def predict(self, fs: FeatureSequence, stats: NormStats) -> AnimationSequence:
        """Same input contract as the Transformer: features at 60 fps plus normalised prosody."""
        x = np.concatenate([fs.ppg, stats.prosody(fs)], axis=1)
        return AnimationSequence(stats.denormalize_animation(self(x)), utterance_id=fs.utterance_id)
