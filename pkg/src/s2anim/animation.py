"""Blendshape animation sequences and the 32 pronunciation channels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

# ARKit/Live Link Face names for the jaw, mouth, cheek and nose channels that
# move during speech. Order is the on-disk and CSV column order.
BLENDSHAPE_CHANNELS: tuple[str, ...] = (
    "jawOpen",
    "jawForward",
    "jawLeft",
    "jawRight",
    "mouthClose",
    "mouthFunnel",
    "mouthPucker",
    "mouthLeft",
    "mouthRight",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
    "cheekPuff",
    "cheekSquintLeft",
    "cheekSquintRight",
    "noseSneerLeft",
    "noseSneerRight",
)
N_CHANNELS = len(BLENDSHAPE_CHANNELS)
JAW_OPEN = BLENDSHAPE_CHANNELS.index("jawOpen")
MOUTH_CLOSE = BLENDSHAPE_CHANNELS.index("mouthClose")
CRUCIAL_CHANNELS: tuple[str, ...] = ("jawOpen", "mouthClose")

ANIMATION_FPS = 60.0


@dataclass
class AnimationSequence:
    values: np.ndarray
    channels: tuple[str, ...] = BLENDSHAPE_CHANNELS
    frame_rate_hz: float = ANIMATION_FPS
    utterance_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.channels = tuple(self.channels)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channels):
            raise ShapeError(
                f"animation values {self.values.shape} do not match {len(self.channels)} channels"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channels.index(name)]

    def to_csv(self) -> str:
        lines = ["frame," + ",".join(self.channels)]
        for t, row in enumerate(self.values):
            lines.append(f"{t}," + ",".join(f"{float(v):.6f}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, utterance_id: str = "") -> AnimationSequence:
        rows = [line.split(",") for line in text.strip().splitlines()]
        header, body = rows[0], rows[1:]
        if not header or header[0] != "frame":
            raise ValueError("animation CSV must start with a 'frame' column")
        values = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float32)
        values = values.reshape(len(body), len(header) - 1)
        return cls(values, tuple(header[1:]), utterance_id=utterance_id)
