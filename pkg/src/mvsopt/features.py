"""Deterministic multi-scale feature maps.

The hand-crafted extractor emits eight channels per level: intensity,
horizontal and vertical gradient, gradient magnitude and four directional
census-style comparison means. Maps computed elsewhere (for example VGG
activations) can be attached from PFC files instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import scene_io

ALLOWED_SCALES = (0.5, 0.25, 0.125, 0.0625)
DEFAULT_SCALES = (0.5, 0.25, 0.125)
BLUR_SIGMA = 1.0
VAR_FLOOR = 1e-8

# right, down-right, down, down-left as (dy, dx)
_CENSUS_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))


@dataclass
class FeaturePyramid:
    levels: list  # [(scale, (H, W, C) array)], scales strictly decreasing

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a pyramid needs at least one level")
        scales = [s for s, _ in self.levels]
        for s in scales:
            if not any(math.isclose(s, a) for a in ALLOWED_SCALES):
                raise ValueError(f"unsupported pyramid scale {s}")
        if any(b >= a for a, b in zip(scales, scales[1:])):
            raise ValueError(f"pyramid scales must be strictly decreasing, got {scales}")

    @property
    def scales(self):
        return [s for s, _ in self.levels]

    def level(self, scale):
        for s, grid in self.levels:
            if math.isclose(s, scale):
                return grid
        raise KeyError(scale)


def level_shape(base_shape, scale):
    H, W = base_shape[:2]
    return math.ceil(H * scale), math.ceil(W * scale)


def to_gray(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[2] not in (1, 3):
            raise ValueError(f"expected 1 or 3 channels, got {image.shape[2]}")
        return image.mean(axis=2)
    return image


def downsample(gray, octaves: int) -> np.ndarray:
    """Blur with sigma 1 and keep every second pixel, ``octaves`` times."""
    out = np.asarray(gray, dtype=np.float64)
    for _ in range(octaves):
        out = ndimage.gaussian_filter(out, BLUR_SIGMA, mode="nearest")[::2, ::2]
    return out


def raw_features(gray) -> np.ndarray:
    """Unnormalised 8-channel features of a single-channel image."""
    g = np.asarray(gray, dtype=np.float64)
    H, W = g.shape
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    if W > 1:
        gx = np.gradient(g, axis=1)
    if H > 1:
        gy = np.gradient(g, axis=0)
    mag = np.hypot(gx, gy)
    padded = np.pad(g, 1, mode="edge")
    chans = [g, gx, gy, mag]
    for dy, dx in _CENSUS_DIRECTIONS:
        fwd = padded[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        bwd = padded[1 - dy:1 - dy + H, 1 - dx:1 - dx + W]
        chans.append(0.5 * ((fwd > g).astype(np.float64) + (bwd > g).astype(np.float64)))
    return np.stack(chans, axis=-1)


def standardize(feat) -> np.ndarray:
    mean = feat.mean(axis=(0, 1))
    var = feat.var(axis=(0, 1))
    return (feat - mean) / np.sqrt(np.maximum(var, VAR_FLOOR))


def handcrafted_features(image, octaves: int = 0) -> np.ndarray:
    return standardize(raw_features(downsample(to_gray(image), octaves)))


def _octaves_for(scale) -> int:
    k = round(-math.log2(scale))
    if not math.isclose(2.0 ** -k, scale):
        raise ValueError(f"scale {scale} is not a power of two")
    return k


def build_handcrafted_pyramid(image, scales=DEFAULT_SCALES) -> FeaturePyramid:
    scales = list(scales)
    if not scales:
        raise ValueError("scale list is empty")
    gray = to_gray(image)
    levels = []
    current, done = gray, 0
    for s in sorted(scales, reverse=True):
        k = _octaves_for(s)
        current = downsample(current, k - done)
        done = k
        levels.append((s, standardize(raw_features(current))))
    return FeaturePyramid(levels)


def attach_external_pyramid(paths, scales, base_shape) -> FeaturePyramid:
    """Load precomputed feature maps and check them against ``base_shape``."""
    if len(paths) != len(scales):
        raise ValueError(f"{len(paths)} files for {len(scales)} scales")
    levels = []
    for path, s in sorted(zip(paths, scales), key=lambda ps: -ps[1]):
        grid = scene_io.load_feature_map(path)
        want = level_shape(base_shape, s)
        if grid.shape[:2] != want:
            raise ValueError(
                f"{path}: level {s} has size {grid.shape[1]}x{grid.shape[0]}, "
                f"expected {want[1]}x{want[0]}"
            )
        levels.append((s, grid))
    return FeaturePyramid(levels)


def save_pyramid(pyramid: FeaturePyramid, paths) -> None:
    for (_, grid), path in zip(pyramid.levels, paths):
        scene_io.save_feature_map(grid, path)
