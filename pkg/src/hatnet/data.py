"""Deterministic synthetic classification set: bright shapes on noise.

Every sample is a pure function of (seed, index): labels cycle through
the classes, and each image places one filled pattern (square, circle,
cross, ...) at a random position and scale over a dim noise background.
Position and scale vary enough that raw pixels are not linearly
separable; the classifier has to aggregate spatial structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hatnet.tensor import ConfigError, ContractError, Tensor

__all__ = ["SyntheticSample", "gen_synthetic", "synth_batch", "NUM_PATTERNS"]

NUM_PATTERNS = 10


def _pattern_mask(label: int, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    ys = np.arange(size, dtype=np.float64)[:, None]
    xs = np.arange(size, dtype=np.float64)[None, :]
    dy = ys - cy
    dx = xs - cx
    ax, ay = np.abs(dx), np.abs(dy)
    if label == 0:  # filled square
        return (ax <= 0.8 * r) & (ay <= 0.8 * r)
    if label == 1:  # filled circle
        return dx * dx + dy * dy <= r * r
    if label == 2:  # upright cross
        return ((ax <= 0.33 * r) & (ay <= r)) | ((ay <= 0.33 * r) & (ax <= r))
    if label == 3:  # diamond
        return ax + ay <= r
    if label == 4:  # ring
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if label == 5:  # horizontal bar
        return (ay <= 0.35 * r) & (ax <= r)
    if label == 6:  # vertical bar
        return (ax <= 0.35 * r) & (ay <= r)
    if label == 7:  # triangle, apex up
        t = dy + r  # 0 at apex, 2r at base
        return (t >= 0) & (t <= 2 * r) & (ax <= t / 2)
    if label == 8:  # diagonal cross
        return (np.abs(ax - ay) <= 0.33 * r) & (np.maximum(ax, ay) <= r)
    # label == 9: checkerboard patch
    cell = np.floor(dx / (r / 2)).astype(int) + np.floor(dy / (r / 2)).astype(int)
    return (ax <= r) & (ay <= r) & (cell % 2 == 0)


@dataclass(frozen=True)
class SyntheticSample:
    image: Tensor  # [H,W,3], values in [0,1]
    label: int


def gen_synthetic(seed: int, index: int, num_classes: int, size: int = 32) -> SyntheticSample:
    """Sample `index` of the deterministic stream for `seed`."""
    if not 2 <= num_classes <= NUM_PATTERNS:
        raise ConfigError(f"num_classes must be in [2, {NUM_PATTERNS}], got {num_classes}")
    if seed < 0 or index < 0:
        raise ContractError(f"seed and index must be non-negative, got {seed}, {index}")
    if size < 16:
        raise ConfigError(f"image size must be >= 16, got {size}")
    rng = np.random.default_rng([seed, index])
    label = index % num_classes

    r = rng.uniform(0.15 * size, 0.28 * size)
    cx = rng.uniform(r + 1.0, size - r - 1.0)
    cy = rng.uniform(r + 1.0, size - r - 1.0)
    background = rng.uniform(0.0, 0.3, (size, size, 3))
    color = rng.uniform(0.7, 1.0, 3)
    shade = rng.uniform(0.85, 1.0, (size, size))

    mask = _pattern_mask(label, size, cx, cy, r)
    image = background
    image[mask] = color[None, :] * shade[mask][:, None]
    return SyntheticSample(image=Tensor(np.clip(image, 0.0, 1.0)), label=label)


def synth_batch(seed: int, start_index: int, batch: int, num_classes: int, size: int = 32):
    """Samples start_index .. start_index+batch-1 stacked into one tensor."""
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    images = np.empty((batch, size, size, 3), dtype=np.float32)
    labels = np.empty(batch, dtype=np.int64)
    for i in range(batch):
        s = gen_synthetic(seed, start_index + i, num_classes, size)
        images[i] = s.image.data
        labels[i] = s.label
    return Tensor(images), labels
