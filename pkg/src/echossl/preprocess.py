"""Deterministic raw-video -> model-input preprocessing.

Recipe, applied in order:

1. temporal resampling to 24 FPS by nearest-frame index (no blending);
2. selection of the first 32 frames, center-padding shorter videos by
   duplicating the first and last frames (odd surplus goes to the back);
3. per frame: centered square crop of side min(H, W), bilinear resize to
   224x224, intensity scaling to [0, 1], per-channel normalization with
   the ImageNet statistics, then single-channel conversion by channel mean.

All operations are pure functions of their inputs; repeated invocation is
bitwise identical, which the content-hash index written by
:func:`preprocess_manifest` makes auditable.
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .core import (
    CLIP_FRAMES,
    CLIP_SIZE,
    Clip,
    InvalidInputError,
    Manifest,
    ManifestEntry,
    RawClip,
    round_half_up,
    tensor_digest,
)

TARGET_FPS = 24.0
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float64)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float64)


def resample_indices(frame_count: int, fps: float, target_fps: float) -> np.ndarray:
    """Source-frame index for each output frame of a nearest-index resample.

    Output length is round(duration * target_fps) with ties up, clamped to
    at least one frame; output frame j reads input frame
    round(j * fps / target_fps), clamped to the valid range.
    """
    if frame_count < 1:
        raise InvalidInputError("clip has zero frames")
    if fps <= 0 or target_fps <= 0:
        raise InvalidInputError("frame rates must be positive")
    duration = frame_count / fps
    out_count = max(round_half_up(duration * target_fps), 1)
    j = np.arange(out_count, dtype=np.float64)
    idx = np.floor(j * fps / target_fps + 0.5).astype(np.int64)
    return np.clip(idx, 0, frame_count - 1)


def resample_fps(clip: RawClip, target_fps: float = TARGET_FPS) -> RawClip:
    """Temporally resample a clip to ``target_fps`` by nearest-frame index."""
    idx = resample_indices(clip.frame_count, clip.fps, target_fps)
    if clip.fps == target_fps and len(idx) == clip.frame_count:
        frames = clip.frames  # identity at the target rate
    else:
        frames = clip.frames[idx]
    return RawClip(frames=frames, fps=target_fps, source_id=clip.source_id)


def select_indices(frame_count: int, target: int = CLIP_FRAMES) -> np.ndarray:
    """Frame indices realizing first-``target`` selection with center padding.

    Clips with >= target frames contribute their first ``target`` frames;
    shorter clips are centered, duplicating frame 0 at the front
    (floor((target - n) / 2) copies) and the last frame at the back.
    """
    if frame_count < 1:
        raise InvalidInputError("clip has zero frames")
    if frame_count >= target:
        return np.arange(target, dtype=np.int64)
    pad_front = (target - frame_count) // 2
    pad_back = target - frame_count - pad_front
    return np.concatenate(
        [
            np.zeros(pad_front, dtype=np.int64),
            np.arange(frame_count, dtype=np.int64),
            np.full(pad_back, frame_count - 1, dtype=np.int64),
        ]
    )


def select_32(clip: RawClip) -> RawClip:
    """Cut or center-pad a clip to exactly 32 frames."""
    idx = select_indices(clip.frame_count)
    return RawClip(frames=clip.frames[idx], fps=clip.fps, source_id=clip.source_id)


def spatial_pipeline(frame: np.ndarray) -> np.ndarray:
    """Crop, resize, normalize, and grayscale one frame.

    Steps: centered square crop of side min(H, W); bilinear resize to
    224x224; scale to [0, 1] and normalize per channel with ImageNet
    mean/std; collapse to one channel by unweighted channel mean.

    Args:
        frame: (H, W, 3) array of intensities in [0, 255].

    Returns:
        (224, 224, 1) float32 array.
    """
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidInputError(f"frame must be (H, W, 3), got {frame.shape}")
    h, w = frame.shape[:2]
    if h < 1 or w < 1:
        raise InvalidInputError("frame has an empty spatial dimension")
    frame = frame.astype(np.float32, copy=False)
    if not np.all(np.isfinite(frame)):
        raise InvalidInputError("frame contains non-finite pixel values")

    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    cropped = frame[y0 : y0 + side, x0 : x0 + side, :]
    if side != CLIP_SIZE:
        resized = cv2.resize(cropped, (CLIP_SIZE, CLIP_SIZE), interpolation=cv2.INTER_LINEAR)
    else:
        resized = cropped

    scaled = resized.astype(np.float64) / 255.0
    normalized = (scaled - IMAGENET_MEAN) / IMAGENET_STD
    gray = normalized.mean(axis=2, keepdims=True)
    return gray.astype(np.float32)


def preprocess_clip(clip: RawClip, label: float | None = None) -> Clip:
    """Full preprocessing: resample -> select 32 -> spatial pipeline per frame.

    Equivalent to ``spatial(select_32(resample_fps(clip)))`` but gathers the
    <= 32 needed source frames through composed index maps instead of
    materializing the intermediate resampled clip.
    """
    r_idx = resample_indices(clip.frame_count, clip.fps, TARGET_FPS)
    s_idx = select_indices(len(r_idx))
    src = r_idx[s_idx]
    tensor = np.stack([spatial_pipeline(clip.frames[i]) for i in src], axis=0)
    return Clip(tensor=tensor, source_id=clip.source_id, label=label)


# --------------------------------------------------------------------------
# Clip container I/O
# --------------------------------------------------------------------------


def save_raw_clip(clip: RawClip, path: str | Path) -> Path:
    """Write a raw clip as an .npz container (frames, fps, source_id)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, frames=clip.frames, fps=np.float64(clip.fps),
             source_id=np.str_(clip.source_id))
    return path


def load_raw_clip(path: str | Path) -> RawClip:
    with np.load(path, allow_pickle=False) as data:
        return RawClip(
            frames=data["frames"],
            fps=float(data["fps"]),
            source_id=str(data["source_id"]),
        )


def save_clip_tensor(clip: Clip, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, clip.tensor)
    return path


def load_clip_tensor(path: str | Path) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    return np.asarray(arr, dtype=np.float32)


class ClipStore:
    """Lookup of preprocessed clip tensors by source_id.

    Backed either by .npy files referenced from a manifest (paths resolved
    against ``root``) or by an in-memory mapping. Loaded tensors are cached;
    the store is read-only and safe to share.
    """

    def __init__(self, manifest: Manifest | None = None, root: str | Path | None = None,
                 tensors: dict[str, np.ndarray] | None = None):
        self._paths: dict[str, Path] = {}
        self._cache: dict[str, np.ndarray] = dict(tensors or {})
        if manifest is not None:
            root = Path(root) if root is not None else Path(".")
            for e in manifest:
                p = Path(e.path)
                self._paths[e.source_id] = p if p.is_absolute() else root / p

    @classmethod
    def in_memory(cls, tensors: dict[str, np.ndarray]) -> "ClipStore":
        return cls(tensors=tensors)

    def get(self, source_id: str) -> np.ndarray:
        if source_id not in self._cache:
            if source_id not in self._paths:
                raise KeyError(f"unknown clip {source_id!r}")
            self._cache[source_id] = load_clip_tensor(self._paths[source_id])
        return self._cache[source_id]

    def batch(self, source_ids: list[str]) -> np.ndarray:
        return np.stack([self.get(s) for s in source_ids], axis=0)


def preprocess_manifest(manifest: Manifest, root: str | Path,
                        out_dir: str | Path) -> tuple[Manifest, Path]:
    """Preprocess every raw clip in a manifest into per-clip tensor files.

    Writes ``<source_id>.npy`` per entry plus ``hashes.json`` (source_id ->
    sha256 of the tensor) for reproducibility audits, and a new manifest
    ``manifest.json`` pointing at the tensors. Returns (manifest, out_dir).
    """
    root = Path(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    hashes = {}
    for e in manifest:
        src = Path(e.path)
        raw = load_raw_clip(src if src.is_absolute() else root / src)
        clip = preprocess_clip(raw, label=e.label)
        rel = f"{e.source_id}.npy"
        save_clip_tensor(clip, out_dir / rel)
        hashes[e.source_id] = tensor_digest(clip.tensor)
        entries.append(ManifestEntry(
            source_id=e.source_id, path=rel, fps=TARGET_FPS,
            frame_count=CLIP_FRAMES, label=e.label,
        ))
    out_manifest = Manifest(tuple(entries))
    out_manifest.save(out_dir / "manifest.json")
    (out_dir / "hashes.json").write_text(
        json.dumps(hashes, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_manifest, out_dir
