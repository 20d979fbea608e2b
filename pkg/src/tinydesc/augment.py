"""Online patch augmentation.

For each patch the role's transform list is shuffled and the transform at
shuffled position ``i`` is applied with probability ``p0 * decay**i``
(0.95 and 0.85 by default), which keeps most patches lightly distorted.
Anchors and positives draw from the tolerant list; negatives additionally
get morphology, grids and highlights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import gaussian_blur, resize, to_uint8

PATCH = 32


def brightness(patch, rng):
    """Monotonic intensity remap: gamma curve or clipped linear gain/offset."""
    x = patch.astype(np.float64)
    if rng.random() < 0.5:
        gamma = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        return to_uint8(255.0 * (x / 255.0) ** gamma)
    gain = rng.uniform(0.6, 1.4)
    offset = rng.uniform(-40, 40)
    return to_uint8(gain * (x - 127.5) + 127.5 + offset)


def blur(patch, rng, sigma=None):
    if sigma is None:
        sigma = rng.uniform(0.3, 1.2)
    return to_uint8(gaussian_blur(patch, sigma))


def additive_noise(patch, rng, sigma=None):
    if sigma is None:
        sigma = rng.uniform(1.0, 8.0)
    if sigma == 0:
        return patch.copy()
    return to_uint8(patch + rng.normal(0.0, sigma, size=patch.shape))


def crop_and_rescale(patch, rng, min_size=26):
    h, w = patch.shape
    ch = int(rng.integers(min_size, h + 1))
    cw = int(rng.integers(min_size, w + 1))
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    return to_uint8(resize(patch[y:y + ch, x:x + cw], (h, w)))


def motion_kernel(length, angle):
    k = np.zeros((length, length))
    c = (length - 1) / 2
    s = np.linspace(-c, c, 4 * length)
    k[np.rint(c + s * np.sin(angle)).astype(int), np.rint(c + s * np.cos(angle)).astype(int)] = 1.0
    return k / k.sum()


def motion_blur(patch, rng):
    length = int(rng.choice([3, 5, 7]))
    kernel = motion_kernel(length, rng.uniform(0, np.pi))
    return to_uint8(ndimage.convolve(patch.astype(np.float64), kernel, mode="nearest"))


def morphology_open(patch, rng=None):
    return ndimage.grey_opening(patch, size=(3, 3), mode="nearest")


def morphology_close(patch, rng=None):
    return ndimage.grey_closing(patch, size=(3, 3), mode="nearest")


def grid_overlay(patch, rng):
    pitch = int(rng.integers(4, 11))
    phase_y, phase_x = rng.integers(0, pitch, size=2)
    darkness = rng.uniform(0.3, 0.7)
    x = patch.astype(np.float64)
    mask = np.zeros(patch.shape, dtype=bool)
    mask[phase_y::pitch, :] = True
    mask[:, phase_x::pitch] = True
    x[mask] *= darkness
    return to_uint8(x)


def highlight_blob(patch, rng):
    h, w = patch.shape
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    s = rng.uniform(2.0, 6.0)
    amp = rng.uniform(80, 200)
    yy, xx = np.mgrid[0:h, 0:w]
    blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return to_uint8(patch + blob)


TRANSFORMS = {
    "brightness": brightness,
    "blur": blur,
    "additive_noise": additive_noise,
    "crop_and_rescale": crop_and_rescale,
    "motion_blur": motion_blur,
    "morphology_open": morphology_open,
    "morphology_close": morphology_close,
    "grid_overlay": grid_overlay,
    "highlight_blob": highlight_blob,
}

ANCHOR_TRANSFORMS = ("brightness", "blur", "additive_noise", "crop_and_rescale", "motion_blur")
NEGATIVE_TRANSFORMS = ANCHOR_TRANSFORMS + ("morphology_open", "morphology_close", "grid_overlay", "highlight_blob")


@dataclass(frozen=True)
class AugmentSchedule:
    p0: float = 0.95
    decay: float = 0.85
    anchor_transforms: tuple = ANCHOR_TRANSFORMS
    negative_transforms: tuple = NEGATIVE_TRANSFORMS

    def __post_init__(self):
        if not set(self.anchor_transforms) <= set(self.negative_transforms):
            raise ValueError("negative transforms must include every anchor transform")
        unknown = set(self.negative_transforms) - set(TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms: {sorted(unknown)}")

    def probability(self, i):
        return self.p0 * self.decay ** i

    def transforms_for(self, role):
        if role == "anchor_positive":
            return self.anchor_transforms
        if role == "negative":
            return self.negative_transforms
        raise ValueError(f"unknown role {role!r}")


def plan_augmentation(names, schedule, rng):
    """Shuffle ``names`` and decide, position by position, what gets applied.

    Returns ``[(name, applied), ...]`` in shuffled order.
    """
    names = list(names)
    order = rng.permutation(len(names)) if names else []
    return [(names[k], bool(rng.random() < schedule.probability(i))) for i, k in enumerate(order)]


def apply_augmentation(patch, role, schedule, rng):
    patch = np.asarray(patch, dtype=np.uint8)
    for name, applied in plan_augmentation(schedule.transforms_for(role), schedule, rng):
        if applied:
            patch = TRANSFORMS[name](patch, rng)
    return patch


def augment_many(patches, role, schedule, rng):
    return np.stack([apply_augmentation(p, role, schedule, rng) for p in patches]) if len(patches) else np.asarray(patches)
