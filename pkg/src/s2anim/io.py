"""Feature and animation files in the S2A1 container."""
from __future__ import annotations

import numpy as np

from . import container
from .animation import AnimationSequence
from .errors import ContainerError
from .features import FeatureSequence


def save_features(path, fs: FeatureSequence, extra: dict | None = None) -> None:
    meta = {"type": "features", "utterance_id": fs.utterance_id, "frame_rate_hz": fs.frame_rate_hz,
            "kind": fs.kind}
    meta.update(extra or {})
    container.write(path, {"ppg": fs.ppg, "pitch": fs.pitch, "energy": fs.energy}, meta)


def load_features(path) -> FeatureSequence:
    tensors, meta = container.read(path)
    if meta.get("type") != "features":
        raise ContainerError(f"{path}: not a feature container (type={meta.get('type')!r})")
    return FeatureSequence(tensors["ppg"], tensors["pitch"], tensors["energy"],
                           float(meta["frame_rate_hz"]), meta.get("utterance_id", ""), meta.get("kind", "ppg"))


def save_animation(path, anim: AnimationSequence, extra: dict | None = None) -> None:
    meta = {"type": "animation", "utterance_id": anim.utterance_id, "frame_rate_hz": anim.frame_rate_hz,
            "channels": list(anim.channels)}
    meta.update(extra or {})
    container.write(path, {"animation": anim.values}, meta)


def load_animation(path) -> AnimationSequence:
    tensors, meta = container.read(path)
    if meta.get("type") != "animation":
        raise ContainerError(f"{path}: not an animation container (type={meta.get('type')!r})")
    return AnimationSequence(np.asarray(tensors["animation"]), tuple(meta["channels"]),
                             float(meta["frame_rate_hz"]), meta.get("utterance_id", ""),
                             {k: v for k, v in meta.items() if k not in ("type", "channels")})
