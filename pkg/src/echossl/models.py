"""Video transformer encoder, task heads, and checkpoint IO.

The encoder follows the factorized "tubelet" recipe: a 3D convolution
embeds non-overlapping spatiotemporal patches, a learned CLS token and
positional embeddings are added, and a stack of pre-norm transformer
blocks produces the clip-level feature (the CLS output after the final
LayerNorm).

Two named configurations are provided: ``full`` (the ~88M-parameter
model) and ``tiny`` (a CPU-friendly stand-in with the same interface,
used throughout the test suite and the synthetic-data experiments).
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import (
    CLIP_CHANNELS,
    CLIP_FRAMES,
    CLIP_SIZE,
    CheckpointError,
    ConfigError,
    ShapeError,
)
from .contrastive import PROJECTION_DIM, ProjectionHead

CHECKPOINT_MAGIC = "echossl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    """Shape and capacity of the video encoder.

    The clip geometry must tile exactly: frames divisible by tubelet_t,
    image size divisible by tubelet_hw, embed_dim divisible by num_heads.
    """

    frames: int = CLIP_FRAMES
    image_size: int = CLIP_SIZE
    in_channels: int = CLIP_CHANNELS
    tubelet_t: int = 2
    tubelet_hw: int = 16
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.frames % self.tubelet_t != 0:
            raise ConfigError(f"frames={self.frames} not divisible by tubelet_t={self.tubelet_t}")
        if self.image_size % self.tubelet_hw != 0:
            raise ConfigError(
                f"image_size={self.image_size} not divisible by tubelet_hw={self.tubelet_hw}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim={self.embed_dim} not divisible by num_heads={self.num_heads}")
        if min(self.frames, self.image_size, self.in_channels, self.tubelet_t,
               self.tubelet_hw, self.embed_dim, self.depth, self.num_heads) < 1:
            raise ConfigError("all encoder dimensions must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def num_patches(self) -> int:
        return (self.frames // self.tubelet_t) * (self.image_size // self.tubelet_hw) ** 2

    @property
    def num_tokens(self) -> int:
        # patches plus the CLS token
        return self.num_patches + 1

    @property
    def variant(self) -> str:
        """Name of the matching named config: "full", "tiny", or "custom"."""
        if self == EncoderConfig.full():
            return "full"
        if self == EncoderConfig.tiny():
            return "tiny"
        return "custom"

    @classmethod
    def full(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "EncoderConfig":
        """Small encoder for CPU runs: 8x32x32 tubelets, width 64, depth 2."""
        return cls(tubelet_t=8, tubelet_hw=32, embed_dim=64, depth=2, num_heads=4)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class TransformerBlock(nn.Module):
    """Pre-norm multi-head self-attention + MLP with residual connections."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x)
        attn_out, _ = self.attn(y, y, y, need_weights=False)
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x


class VideoEncoder(nn.Module):
    """Tubelet-embedding transformer producing one feature vector per clip."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c = config
        self.tubelet_embed = nn.Conv3d(
            c.in_channels, c.embed_dim,
            kernel_size=(c.tubelet_t, c.tubelet_hw, c.tubelet_hw),
            stride=(c.tubelet_t, c.tubelet_hw, c.tubelet_hw),
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, c.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, c.num_tokens, c.embed_dim))
        self.blocks = nn.ModuleList([
            TransformerBlock(c.embed_dim, c.num_heads, c.mlp_ratio, c.dropout)
            for _ in range(c.depth)
        ])
        self.norm = nn.LayerNorm(c.embed_dim)

        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    @property
    def feature_dim(self) -> int:
        return self.config.embed_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, T, H, W) clips -> (B, embed_dim) CLS features."""
        c = self.config
        if x.ndim != 5 or x.shape[1:] != (c.in_channels, c.frames, c.image_size, c.image_size):
            raise ShapeError(
                f"expected (B, {c.in_channels}, {c.frames}, {c.image_size}, {c.image_size}), "
                f"got {tuple(x.shape)}")
        x = self.tubelet_embed(x)            # (B, D, T', H', W')
        x = x.flatten(2).transpose(1, 2)     # (B, n_patches, D)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 0]


class RegressionHead(nn.Module):
    """Feature -> scalar MLP: Linear, ReLU, Dropout(0.3), Linear(., 1)."""

    def __init__(self, in_dim: int, hidden_dim: int = 256, dropout: float = 0.3):
        super().__init__()
        self.in_dim = in_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h).squeeze(-1)


class ContrastiveModel(nn.Module):
    """Encoder + projection head; outputs unit-normalized projections."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.encoder = VideoEncoder(config)
        self.head = ProjectionHead(config.embed_dim, out_dim=PROJECTION_DIM)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.head(self.encoder(x))
        return torch.nn.functional.normalize(z, dim=-1)


class CoPredictor(nn.Module):
    """Encoder + regression head; outputs one cardiac-output value per clip."""

    def __init__(self, config: EncoderConfig, hidden_dim: int = 256, dropout: float = 0.3):
        super().__init__()
        self.encoder = VideoEncoder(config)
        self.head = RegressionHead(config.embed_dim, hidden_dim=hidden_dim, dropout=dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))


def clips_to_tensor(clips: np.ndarray) -> torch.Tensor:
    """(B, T, H, W, C) float clip array -> (B, C, T, H, W) float32 tensor."""
    arr = np.asarray(clips)
    if arr.ndim == 4:
        arr = arr[np.newaxis]
    if arr.ndim != 5:
        raise ShapeError(f"expected (B, T, H, W, C) clips, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 4, 1, 2, 3))).float()


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters()
               if p.requires_grad or not trainable_only)


def parameter_checksum(module: nn.Module) -> str:
    """Order-stable SHA-256 over all parameter values (float64 bytes)."""
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype(np.float64).tobytes())
    return h.hexdigest()


def freeze_encoder(module: nn.Module) -> nn.Module:
    """Disable gradients for ``module.encoder`` and put it in eval mode."""
    encoder = module.encoder if hasattr(module, "encoder") else module
    for p in encoder.parameters():
        p.requires_grad_(False)
    encoder.eval()
    return module


def unfreeze_encoder(module: nn.Module) -> nn.Module:
    """Re-enable gradients for ``module.encoder`` and return it to train mode."""
    encoder = module.encoder if hasattr(module, "encoder") else module
    for p in encoder.parameters():
        p.requires_grad_(True)
    encoder.train()
    return module


# --------------------------------------------------------------------------
# checkpoint IO
# --------------------------------------------------------------------------

def save_checkpoint(path: str, *, kind: str, encoder_config: EncoderConfig,
                    payload: dict) -> None:
    """Atomically write a tagged checkpoint (tmp file + rename)."""
    record = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "encoder_config": encoder_config.to_dict(),
        "payload": payload,
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(record, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str, *, expected_kind: str | None = None,
                    expected_config: EncoderConfig | None = None) -> dict:
    """Load a checkpoint, verifying magic/version/kind/config tags.

    Returns the saved record; raises :class:`CheckpointError` on any
    mismatch so stale or foreign files cannot be silently resumed from.
    """
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        record = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # unreadable / truncated file
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    if not isinstance(record, dict) or record.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a recognized checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {record.get('version')} in {path}")
    if expected_kind is not None and record.get("kind") != expected_kind:
        raise CheckpointError(
            f"checkpoint kind {record.get('kind')!r} != expected {expected_kind!r}")
    if expected_config is not None:
        saved = record.get("encoder_config")
        if saved != expected_config.to_dict():
            raise CheckpointError(
                "checkpoint encoder config does not match the requested config: "
                f"{saved} vs {expected_config.to_dict()}")
    return record
