"""Independent reference implementations used by the model and acceptance tests."""
import numpy as np

from s2anim.model import MoeLayer


def brute_topk(g, k):
    """Indices of the k largest entries, ties to the lower index, by plain sorting."""
    return sorted(range(len(g)), key=lambda i: (-g[i], i))[:k]


def dense_moe_oracle(moe: MoeLayer, h: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Evaluate every expert on the whole masked sequence, weight by routing probabilities."""
    B, T, d = h.shape
    hm = h * mask[..., None]
    logits = h @ moe.gate.weight.data + moe.gate.bias.data
    out = np.zeros_like(h)
    K = moe.experts[0].kernel
    pad = (K - 1) // 2
    for b in range(B):
        for t in range(T):
            if mask[b, t] == 0:
                continue
            g = logits[b, t]
            chosen = brute_topk(list(g), moe.top_k)
            w = np.exp(g[chosen] - g[chosen].max())
            w /= w.sum()
            for weight, i in zip(w, chosen):
                e = moe.experts[i]
                acc = e.conv_bias.data.astype(np.float64).copy()
                for j in range(K):
                    s = t + j - pad
                    if 0 <= s < T:
                        acc += hm[b, s] @ e.conv_weight.data[j]
                out[b, t] += weight * (np.maximum(acc, 0) @ e.fc_weight.data + e.fc_bias.data)
    return out
