"""Model checkpoints: parameters, normalisation statistics and hyperparameters in one S2A1 file."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import container
from ..errors import ContainerError
from ..features import NormStats
from .config import ModelConfig
from .network import TransformerS2A

FORMAT = "s2anim-checkpoint"


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    variant: str
    params: dict[str, np.ndarray]
    stats: NormStats
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: TransformerS2A, stats: NormStats, **meta) -> ModelCheckpoint:
        return cls(model.config, model.variant, model.state_dict(), stats, dict(meta))

    def build(self) -> TransformerS2A:
        model = TransformerS2A(self.config, np.random.default_rng(0), self.variant)
        model.load_state_dict(self.params)
        return model.eval()

    def to_bytes(self) -> bytes:
        tensors = {f"param.{k}": v for k, v in self.params.items()}
        tensors.update(self.stats.to_arrays())
        meta = {"format": FORMAT, "config": self.config.to_dict(), "variant": self.variant,
                "training": self.meta}
        return container.encode(tensors, meta)

    @classmethod
    def from_bytes(cls, buf: bytes) -> ModelCheckpoint:
        tensors, meta = container.decode(buf)
        if meta.get("format") != FORMAT:
            raise ContainerError(f"not a model checkpoint (format={meta.get('format')!r})")
        params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
        stats = NormStats.from_arrays({k: v for k, v in tensors.items() if k.startswith("norm.")})
        return cls(ModelConfig.from_dict(meta["config"]), meta["variant"], params, stats,
                   meta.get("training", {}))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> ModelCheckpoint:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
