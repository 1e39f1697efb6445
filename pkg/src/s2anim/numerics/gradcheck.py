"""Central-difference gradient checking against the autodiff tape."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidInputError
from .tensor import Tensor

STEP = 1e-5
# Denominator floor for the relative error: entries whose true gradient is
# below this are compared in absolute terms.
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: int
    tol: float
    worst: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def _scalar(f: Callable[[], Tensor]) -> float:
    out = f()
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise InvalidInputError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(
    f: Callable[[], Tensor],
    inputs: Tensor | Sequence[Tensor],
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` takes no arguments and closes over ``inputs``; entries are perturbed
    in place by ``STEP``. Inputs should be float64 for meaningful results.
    With ``max_entries`` set, each tensor is probed on at most that many
    randomly chosen entries (deterministic under ``seed``).
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.zero_grad()
    out = f()
    if out.size != 1:
        raise InvalidInputError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()

    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, checked, worst = 0.0, 0.0, 0, ""
    per_tensor: dict[str, float] = {}
    for n, t in enumerate(tensors):
        label = t.name or f"input{n}"
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        tensor_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + STEP
            up = _scalar(f)
            flat[i] = orig - STEP
            down = _scalar(f)
            flat[i] = orig
            numeric = (up - down) / (2 * STEP)
            a = float(analytic.reshape(-1)[i])
            abs_err = abs(a - numeric)
            rel = abs_err / max(abs(a), abs(numeric), REL_FLOOR)
            checked += 1
            worst_abs = max(worst_abs, abs_err)
            tensor_worst = max(tensor_worst, rel)
            if rel > worst_rel:
                worst_rel, worst = rel, f"{label}[{int(i)}]"
        per_tensor[label] = tensor_worst
    return GradCheckReport(worst_rel, worst_abs, checked, tol, worst, per_tensor)
