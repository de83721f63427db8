"""Stochastic two-view augmentation for contrastive pretraining.

One :class:`ViewParams` draw is applied identically to every frame of a
view (temporal consistency), so motion cues survive augmentation. On
single-channel clips the color-jitter family reduces to brightness and
contrast; the grayscale-conversion flag is sampled for config parity but
is a no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .core import CLIP_SIZE, Clip, InvalidParamsError, RngStream, round_half_up


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges and probabilities for view generation."""

    crop_side_range: tuple[float, float] = (0.5, 1.0)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    jitter_factor_range: tuple[float, float] = (0.2, 1.8)
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    grayscale_prob: float = 0.2

    def __post_init__(self) -> None:
        # every sampled ViewParams must land inside its admissible region
        for name, rng, bounds in (
                ("crop_side_range", self.crop_side_range, ViewParams.SIDE_BOUNDS),
                ("jitter_factor_range", self.jitter_factor_range, ViewParams.FACTOR_BOUNDS),
                ("blur_sigma_range", self.blur_sigma_range, ViewParams.SIGMA_BOUNDS)):
            lo, hi = rng
            if not (bounds[0] <= lo <= hi <= bounds[1]):
                raise InvalidParamsError(f"{name} {rng} must lie within {bounds}")
        for name, p in (("flip_prob", self.flip_prob), ("jitter_prob", self.jitter_prob),
                        ("blur_prob", self.blur_prob),
                        ("grayscale_prob", self.grayscale_prob)):
            if not (0.0 <= p <= 1.0):
                raise InvalidParamsError(f"{name} must be a probability, got {p}")


@dataclass(frozen=True)
class ViewParams:
    """One sampled augmentation, shared by all 32 frames of a view.

    ``crop_box`` is (x, y, side) in normalized coordinates with the box
    fully inside the unit square.
    """

    crop_box: tuple[float, float, float]
    flip: bool
    brightness_factor: float
    contrast_factor: float
    blur_sigma: float | None
    apply_grayscale_jitter: bool

    # admissible regions; sampling configs must stay inside them
    SIDE_BOUNDS = (0.5, 1.0)
    FACTOR_BOUNDS = (0.2, 1.8)
    SIGMA_BOUNDS = (0.1, 2.0)

    def __post_init__(self) -> None:
        x, y, side = self.crop_box
        eps = 1e-9
        if x < -eps or y < -eps or x + side > 1 + eps or y + side > 1 + eps:
            raise InvalidParamsError(f"crop box {self.crop_box} outside the unit square")
        if not (self.SIDE_BOUNDS[0] <= side <= self.SIDE_BOUNDS[1] + eps):
            raise InvalidParamsError(
                f"crop side must lie in {self.SIDE_BOUNDS}, got {side}")
        for name, factor in (("brightness", self.brightness_factor),
                             ("contrast", self.contrast_factor)):
            if not (self.FACTOR_BOUNDS[0] <= factor <= self.FACTOR_BOUNDS[1]):
                raise InvalidParamsError(
                    f"{name} factor must lie in {self.FACTOR_BOUNDS}, got {factor}")
        if self.blur_sigma is not None and not (
                self.SIGMA_BOUNDS[0] <= self.blur_sigma <= self.SIGMA_BOUNDS[1]):
            raise InvalidParamsError(
                f"blur sigma must lie in {self.SIGMA_BOUNDS} when present, "
                f"got {self.blur_sigma}")


DEFAULT_AUGMENT = AugmentConfig()

# Gentler positives for small datasets / small encoders. With aggressive
# crops and jitter a tiny model trained for a few hundred steps never
# escapes the uniform-similarity plateau (loss pinned at log(2N-1)); easing
# the views lets it latch onto the motion statistics that carry the label.
MILD_AUGMENT = AugmentConfig(
    crop_side_range=(0.7, 1.0),
    jitter_factor_range=(0.6, 1.4),
    blur_prob=0.0,
)

IDENTITY_VIEW = ViewParams(
    crop_box=(0.0, 0.0, 1.0),
    flip=False,
    brightness_factor=1.0,
    contrast_factor=1.0,
    blur_sigma=None,
    apply_grayscale_jitter=False,
)


def sample_view_params(rng: RngStream, config: AugmentConfig = DEFAULT_AUGMENT) -> ViewParams:
    """Draw one augmentation configuration.

    With the default config: crop side uniform in [0.5, 1.0] (box position
    uniform inside the frame), flip with p=0.5, brightness/contrast jitter
    with p=0.8 and factors uniform in [0.2, 1.8], Gaussian blur with p=0.5
    and sigma uniform in [0.1, 2.0], grayscale-jitter flag with p=0.2.
    All values are drawn in a fixed order so the stream is stable.
    """
    g = rng.generator()
    side = float(g.uniform(*config.crop_side_range))
    x = float(g.uniform(0.0, 1.0 - side))
    y = float(g.uniform(0.0, 1.0 - side))
    flip = bool(g.uniform() < config.flip_prob)
    jitter = bool(g.uniform() < config.jitter_prob)
    brightness = float(g.uniform(*config.jitter_factor_range))
    contrast = float(g.uniform(*config.jitter_factor_range))
    if not jitter:
        brightness = 1.0
        contrast = 1.0
    blur = bool(g.uniform() < config.blur_prob)
    sigma = float(g.uniform(*config.blur_sigma_range))
    gray = bool(g.uniform() < config.grayscale_prob)
    return ViewParams(
        crop_box=(x, y, side),
        flip=flip,
        brightness_factor=brightness,
        contrast_factor=contrast,
        blur_sigma=sigma if blur else None,
        apply_grayscale_jitter=gray,
    )


def _crop_pixels(crop_box: tuple[float, float, float], size: int) -> tuple[int, int, int]:
    x, y, side = crop_box
    s = min(max(round_half_up(side * size), 1), size)
    x0 = min(round_half_up(x * size), size - s)
    y0 = min(round_half_up(y * size), size - s)
    return x0, y0, s


def apply_view(clip: Clip, params: ViewParams) -> Clip:
    """Apply one sampled view to a clip; pure function of (clip, params).

    Identity parameters return a bitwise-identical tensor. Operations, in
    order: crop + bilinear resize back to 224, horizontal flip, brightness
    scale, contrast scale about the clip mean, Gaussian blur.
    """
    x0, y0, s = _crop_pixels(params.crop_box, CLIP_SIZE)
    # frames-last layout (H, W, 32) lets one cv2 call transform all frames
    arr = np.ascontiguousarray(clip.tensor[:, :, :, 0].transpose(1, 2, 0))
    if s != CLIP_SIZE or x0 != 0 or y0 != 0:
        cropped = np.ascontiguousarray(arr[y0 : y0 + s, x0 : x0 + s, :])
        arr = cv2.resize(cropped, (CLIP_SIZE, CLIP_SIZE), interpolation=cv2.INTER_LINEAR)
    if params.flip:
        arr = arr[:, ::-1, :]
    if params.brightness_factor != 1.0:
        arr = arr * np.float32(params.brightness_factor)
    if params.contrast_factor != 1.0:
        mean = np.float32(arr.mean())
        arr = mean + (arr - mean) * np.float32(params.contrast_factor)
    if params.blur_sigma is not None:
        k = 2 * int(math.ceil(3.0 * params.blur_sigma)) + 1
        arr = cv2.GaussianBlur(np.ascontiguousarray(arr), (k, k), params.blur_sigma)
    tensor = np.ascontiguousarray(arr.transpose(2, 0, 1))[..., np.newaxis]
    return Clip(tensor=tensor.astype(np.float32, copy=False),
                source_id=clip.source_id, label=clip.label)


def make_positive_pair(clip: Clip, rng: RngStream,
                       config: AugmentConfig = DEFAULT_AUGMENT) -> tuple[Clip, Clip]:
    """Two independently augmented views of one clip (a positive pair)."""
    p0 = sample_view_params(rng.child("view-0"), config)
    p1 = sample_view_params(rng.child("view-1"), config)
    return apply_view(clip, p0), apply_view(clip, p1)
