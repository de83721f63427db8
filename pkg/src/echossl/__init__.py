"""Self-supervised contrastive video pretraining for cardiac-output regression."""

from .core import (
    CLIP_CHANNELS,
    CLIP_FRAMES,
    CLIP_SIZE,
    Clip,
    Manifest,
    ManifestEntry,
    RawClip,
    RngStream,
    SplitSpec,
    split_manifest,
)
from .models import EncoderConfig
from .synthdata import SynthConfig
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "CLIP_CHANNELS",
    "CLIP_FRAMES",
    "CLIP_SIZE",
    "Clip",
    "EncoderConfig",
    "Manifest",
    "ManifestEntry",
    "RawClip",
    "RngStream",
    "SplitSpec",
    "SynthConfig",
    "TrainConfig",
    "split_manifest",
    "__version__",
]
