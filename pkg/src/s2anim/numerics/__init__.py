from .gradcheck import GradCheckReport, grad_check
from .rng import ALGORITHM, RngState
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    concat,
    conv1d_same,
    gather,
    is_grad_enabled,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scatter_add,
    softmax_lastdim,
    sub,
    sum,
    transpose,
    unfold_time,
)

__all__ = [
    "ALGORITHM",
    "DEFAULT_DTYPE",
    "GradCheckReport",
    "RngState",
    "Tensor",
    "add",
    "concat",
    "conv1d_same",
    "gather",
    "grad_check",
    "is_grad_enabled",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scatter_add",
    "softmax_lastdim",
    "sub",
    "sum",
    "transpose",
    "unfold_time",
]
