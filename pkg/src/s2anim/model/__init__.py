from .blstm import BlstmBaseline
from .config import VARIANTS, ModelConfig
from .layers import ExpertFFN, Module, MultiHeadSelfAttention, key_padding_bias, positional_encoding
from .moe import MoeLayer, routing_probs, topk_scores, topk_selection
from .network import TransformerS2A, count_parameters, flops_per_frame, mean_predictor, variant_flags
from .checkpoint import ModelCheckpoint

__all__ = [
    "VARIANTS",
    "BlstmBaseline",
    "ExpertFFN",
    "ModelCheckpoint",
    "ModelConfig",
    "Module",
    "MoeLayer",
    "MultiHeadSelfAttention",
    "TransformerS2A",
    "count_parameters",
    "flops_per_frame",
    "key_padding_bias",
    "mean_predictor",
    "positional_encoding",
    "routing_probs",
    "topk_scores",
    "topk_selection",
    "variant_flags",
]
