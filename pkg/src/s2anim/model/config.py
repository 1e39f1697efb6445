from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

VARIANTS = ("moe", "dense", "no-prosody", "dense-features")


@dataclass
class ModelConfig:
    """Network hyperparameters.

    The defaults keep 48 experts with 16 active per frame; widths and depths
    are desk-scale. ``expert_hidden`` also sizes the encoder's dense FFN.
    """

    d_model: int = 64
    n_heads: int = 4
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    n_experts: int = 48
    top_k: int = 16
    expert_hidden: int = 128
    expert_kernel: int = 3
    dropout: float = 0.1
    ppg_dim: int = 64
    prosody_dim: int = 2
    out_dim: int = 32
    importance_loss_weight: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError(f"top_k must lie in [1, n_experts={self.n_experts}], got {self.top_k}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal encoding, got {self.d_model}")
        if self.expert_kernel % 2 == 0 or self.expert_kernel < 1:
            raise ConfigError(f"expert_kernel must be odd, got {self.expert_kernel}")
        if self.out_dim != 32:
            raise ConfigError(f"out_dim is fixed at 32 blendshape channels, got {self.out_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("d_model", "n_heads", "n_enc_blocks", "n_dec_blocks", "expert_hidden", "ppg_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.importance_loss_weight < 0:
            raise ConfigError("importance_loss_weight must be non-negative")

    @classmethod
    def tiny(cls, **overrides) -> ModelConfig:
        """The small configuration used for CPU training runs and gradient checks."""
        base = dict(d_model=16, n_heads=2, n_enc_blocks=2, n_dec_blocks=2, n_experts=4, top_k=2,
                    expert_hidden=32, dropout=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
