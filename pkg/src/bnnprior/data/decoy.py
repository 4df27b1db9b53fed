"""Decoy-patch image classification data.

A small square patch is stamped into a random image corner. On the training
split its shade is a deterministic function of the label; on the test split
the shade is drawn independently of the label. The patch pixels are the
background features an input-gradient penalty should ignore.

Images come either from procedurally rendered seven-segment glyphs or from
MNIST IDX files.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidConfig
from .idx import load_idx

# segments: a=top, b=top-right, c=bottom-right, d=bottom, e=bottom-left, f=top-left, g=middle
_DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}
JITTER = 2


@dataclass(frozen=True)
class DecoyConfig:
    image_side: int = 28
    patch_side: int = 4
    source: str = "synthetic_glyphs"
    idx_images: str | None = None
    idx_labels: str | None = None
    segment_dropout: float = 0.1
    pixel_noise: float = 0.15

    def __post_init__(self):
        if self.source not in ("synthetic_glyphs", "idx_files"):
            raise InvalidConfig(f"unknown decoy source {self.source!r}")
        if self.patch_side < 1 or self.image_side < 2 * self.patch_side + 2 * JITTER + 8:
            raise InvalidConfig("patch does not fit beside the glyph area")
        if self.source == "idx_files" and not (self.idx_images and self.idx_labels):
            raise InvalidConfig("idx_files source needs idx_images and idx_labels paths")

    def to_dict(self) -> dict:
        return asdict(self)


def train_shade(y) -> np.ndarray:
    return (255.0 - 25.0 * np.asarray(y, dtype=np.float64)) / 255.0


def glyph_box(config: DecoyConfig):
    """(row0, row1, col0, col1) inclusive bounds any glyph pixel can occupy."""
    s, p = config.image_side, config.patch_side
    return 2, s - 3, p + 1, s - p - 2


def render_glyphs(labels, config: DecoyConfig, rng) -> np.ndarray:
    """Seven-segment digit glyphs with shift, thickness, dropout and noise jitter."""
    s = config.image_side
    r0, r1, c0, c1 = glyph_box(config)
    # unshifted box, shrunk by the jitter margin
    top, bottom = r0 + JITTER, r1 - JITTER
    left, right = c0 + JITTER, c1 - JITTER
    mid = (top + bottom) // 2
    out = np.zeros((len(labels), s, s))
    for n, y in enumerate(np.asarray(labels, dtype=int)):
        img = out[n]
        dy, dx = rng.integers(-JITTER, JITTER + 1, size=2)
        t = int(rng.integers(2, 4))
        segs = [c for c in _DIGIT_SEGMENTS[int(y)] if rng.random() >= config.segment_dropout]
        T, B, L, R, M = top + dy, bottom + dy, left + dx, right + dx, mid + dy
        for c in segs:
            if c == "a":
                img[T:T + t, L:R + 1] = 1.0
            elif c == "d":
                img[B - t + 1:B + 1, L:R + 1] = 1.0
            elif c == "g":
                img[M - t // 2:M - t // 2 + t, L:R + 1] = 1.0
            elif c == "f":
                img[T:M + 1, L:L + t] = 1.0
            elif c == "b":
                img[T:M + 1, R - t + 1:R + 1] = 1.0
            elif c == "e":
                img[M:B + 1, L:L + t] = 1.0
            elif c == "c":
                img[M:B + 1, R - t + 1:R + 1] = 1.0
        region = img[r0:r1 + 1, c0:c1 + 1]
        region += config.pixel_noise * rng.standard_normal(region.shape) * (region > 0)
        region *= rng.uniform(0.7, 1.0)
        np.clip(region, 0.0, 1.0, out=region)
    return out


def stamp_patches(images, shades, config: DecoyConfig, rng):
    """Stamp one patch per image in a random corner; returns (images, masks)."""
    imgs = np.array(images, dtype=np.float64, copy=True)
    n, s, _ = imgs.shape
    p = config.patch_side
    corners = rng.integers(0, 4, size=n)
    masks = np.zeros((n, s, s), dtype=bool)
    for i, (k, shade) in enumerate(zip(corners, shades)):
        r = 0 if k in (0, 1) else s - p
        c = 0 if k in (0, 2) else s - p
        imgs[i, r:r + p, c:c + p] = shade
        masks[i, r:r + p, c:c + p] = True
    return imgs, masks


@dataclass
class DecoySplit:
    images: np.ndarray   # (N, side*side) in [0, 1]
    labels: np.ndarray   # (N,) ints 0..9
    masks: np.ndarray    # (N, side*side) bool, patch pixels
    shades: np.ndarray = field(default=None)


def _base_images(n, config, rng, offset=0):
    if config.source == "synthetic_glyphs":
        labels = rng.integers(0, 10, size=n)
        return render_glyphs(labels, config, rng), labels
    images = load_idx(config.idx_images)
    labels = load_idx(config.idx_labels).astype(int)
    if images.shape[1:] != (config.image_side, config.image_side):
        raise InvalidConfig(f"IDX images are {images.shape[1:]}, config says side {config.image_side}")
    idx = np.arange(offset, offset + n) % len(labels)
    return images[idx], labels[idx]


def decoy_dataset(config: DecoyConfig, n_train: int, n_test: int, rng):
    """Return ``(train, test)`` :class:`DecoySplit` objects."""
    if n_train < 1 or n_test < 1:
        raise InvalidConfig("split sizes must be positive")
    splits = []
    for n, is_train, offset in ((n_train, True, 0), (n_test, False, n_train)):
        base, labels = _base_images(n, config, rng, offset)
        if is_train:
            shades = train_shade(labels)
        else:
            shades = train_shade(rng.integers(0, 10, size=n))
        imgs, masks = stamp_patches(base, shades, config, rng)
        splits.append(DecoySplit(imgs.reshape(n, -1), labels.astype(np.int64), masks.reshape(n, -1), shades))
    return tuple(splits)
