"""Speech-to-animation: PPG + prosody in, 32 blendshape curves out."""

__version__ = "0.1.0"
