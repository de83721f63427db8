"""Domain types, dataset manifests, deterministic splitting, and RNG streams.

Everything downstream (preprocessing, augmentation, training, evaluation)
builds on the types in this module. All types are immutable after
construction and safe to share across workers; :class:`RngStream` is the
only source of randomness and is derived, never shared.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CLIP_FRAMES = 32
CLIP_SIZE = 224
CLIP_CHANNELS = 1


# --------------------------------------------------------------------------
# Errors
# --------------------------------------------------------------------------


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class ManifestIntegrityError(ValueError):
    """Manifest contains duplicate ids or otherwise inconsistent records."""


class InvalidParamsError(ValueError):
    """Augmentation parameters outside their admissible region."""


class InvalidTemperatureError(ValueError):
    """Contrastive temperature must be strictly positive."""


class InvalidPairingError(ValueError):
    """Positive-pair map is not a fixed-point-free involution."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (e.g. zero vector passed to normalize)."""


class DegenerateVarianceError(ValueError):
    """A correlation-style metric was asked of a zero-variance vector."""


class ShapeError(ValueError):
    """Tensor width/shape does not match the consuming layer."""


class ConfigError(ValueError):
    """Invalid or conflicting configuration."""


class CheckpointError(RuntimeError):
    """Checkpoint missing, corrupt, or incompatible with the requested config."""


class AggregationError(ValueError):
    """Per-seed reports with mixed keys cannot be aggregated."""


# --------------------------------------------------------------------------
# Small numeric helpers
# --------------------------------------------------------------------------


def round_half_up(x: float) -> int:
    """Round a non-negative real with ties going up (0.5 -> 1)."""
    if x < 0:
        raise InvalidInputError(f"round_half_up expects x >= 0, got {x}")
    return int(math.floor(x + 0.5))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def tensor_digest(arr: np.ndarray) -> str:
    """Content hash of an array (shape- and dtype-sensitive)."""
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------


def _stream_entropy(stream_id: str) -> list[int]:
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


@dataclass(frozen=True)
class RngStream:
    """A named, independently seeded random stream.

    Identical ``(seed, stream_id)`` always yields identical draw sequences,
    and distinct stream ids are statistically independent, so parallel
    workers can each derive their own stream (e.g.
    ``RngStream(40, "augment/clip-17/view-0")``) without coordination.
    """

    seed: int
    stream_id: str = "root"

    def child(self, *parts: object) -> "RngStream":
        suffix = "/".join(str(p) for p in parts)
        return replace(self, stream_id=f"{self.stream_id}/{suffix}")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            [self.seed % (1 << 64), *_stream_entropy(self.stream_id)]
        )

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def torch_seed(self) -> int:
        """A 63-bit seed for ``torch.manual_seed`` derived from this stream."""
        state = self.seed_sequence().generate_state(1, dtype=np.uint64)[0]
        return int(state) & 0x7FFF_FFFF_FFFF_FFFF


# --------------------------------------------------------------------------
# Clips
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RawClip:
    """An unprocessed video: ``frames`` is (n, H, W, 3) uint8, plus fps."""

    frames: np.ndarray
    fps: float
    source_id: str

    def __post_init__(self) -> None:
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 4 or f.shape[3] != 3:
            raise InvalidInputError(
                f"RawClip frames must be (n, H, W, 3), got {getattr(f, 'shape', None)}"
            )
        if f.shape[0] < 1 or f.shape[1] < 1 or f.shape[2] < 1:
            raise InvalidInputError(f"RawClip needs at least one non-empty frame, got {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            raise InvalidInputError(f"RawClip frames must be integer intensities, got {f.dtype}")
        if f.min() < 0 or f.max() > 255:
            raise InvalidInputError("RawClip intensities must lie in [0, 255]")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise InvalidInputError(f"fps must be a positive real, got {self.fps}")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps


@dataclass(frozen=True)
class Clip:
    """A preprocessed clip: tensor of shape (32, 224, 224, 1), float32."""

    tensor: np.ndarray
    source_id: str
    label: float | None = None

    def __post_init__(self) -> None:
        t = self.tensor
        expected = (CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE, CLIP_CHANNELS)
        if not isinstance(t, np.ndarray) or t.shape != expected:
            raise InvalidInputError(
                f"Clip tensor must have shape {expected}, got {getattr(t, 'shape', None)}"
            )
        if not np.issubdtype(t.dtype, np.floating):
            raise InvalidInputError(f"Clip tensor must be floating point, got {t.dtype}")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("Clip tensor contains non-finite values")
        if self.label is not None and not math.isfinite(self.label):
            raise InvalidInputError(f"Clip label must be finite, got {self.label}")


# --------------------------------------------------------------------------
# Manifests and splits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    source_id: str
    path: str
    fps: float
    frame_count: int
    label: float | None = None

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "path": self.path,
            "fps": self.fps,
            "frame_count": self.frame_count,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            source_id=str(d["source_id"]),
            path=str(d["path"]),
            fps=float(d["fps"]),
            frame_count=int(d["frame_count"]),
            label=None if d.get("label") is None else float(d["label"]),
        )


@dataclass(frozen=True)
class Manifest:
    """Ordered list of clip records; source ids are unique.

    Serialized as JSON with sorted keys and a fixed indent so that
    load -> save round-trips byte-exactly.
    """

    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestIntegrityError(f"duplicate source_ids in manifest: {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def source_ids(self) -> list[str]:
        return [e.source_id for e in self.entries]

    @property
    def labels(self) -> list[float | None]:
        return [e.label for e in self.entries]

    def require_labels(self) -> None:
        missing = [e.source_id for e in self.entries if e.label is None]
        if missing:
            raise InvalidInputError(f"entries without labels: {missing}")

    def subset(self, ids: set[str]) -> "Manifest":
        return Manifest(tuple(e for e in self.entries if e.source_id in ids))

    def to_json(self) -> str:
        doc = {"format": "echossl-manifest", "version": 1,
               "entries": [e.to_dict() for e in self.entries]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        if doc.get("format") != "echossl-manifest":
            raise ManifestIntegrityError("not a manifest file")
        return cls(tuple(ManifestEntry.from_dict(d) for d in doc["entries"]))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split recipe: fraction of entries for training plus a seed."""

    train_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )


def split_manifest(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest]:
    """Deterministically split a manifest into train and test parts.

    The split shuffles the stable-sorted source_id list with a seeded
    permutation and takes a prefix of ``round(train_fraction * n)`` ids
    (ties rounded up), so the result depends only on the id set and the
    seed, never on file-system ordering. Both halves keep the original
    manifest entry order.
    """
    n = len(manifest)
    if n == 0:
        raise InvalidInputError("cannot split an empty manifest")
    if n < 2:
        raise InvalidInputError("need at least 2 entries to form a non-empty split")
    ids = sorted(manifest.source_ids)
    rng = RngStream(spec.seed, "split").generator()
    perm = rng.permutation(n)
    n_train = round_half_up(spec.train_fraction * n)
    train_ids = {ids[i] for i in perm[:n_train]}
    test_ids = {ids[i] for i in perm[n_train:]}
    return manifest.subset(train_ids), manifest.subset(test_ids)
