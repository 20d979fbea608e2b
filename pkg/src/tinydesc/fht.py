"""Dyadic Fast Hough Transform.

A mostly-vertical line through an N x N image (N = 2**k) is described by its
column ``x`` at the top row and its total horizontal drift ``t`` in
``[0, N)`` across the N rows.  Its dyadic approximation is defined
recursively: split the rows into a top and bottom half, write
``t = 2 t' + r``; the top half follows drift ``t'`` from ``x`` and the bottom
half follows drift ``t'`` from ``x + t' + r``.  Columns wrap around.

The fast transform builds these sums bottom-up by merging pairs of strips,
N**2 additions per level and log2(N) levels.
"""
from __future__ import annotations

import numpy as np


def _check_square_pow2(image):
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"FHT needs a square image, got shape {image.shape}")
    n = image.shape[0]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FHT needs a power-of-two side, got {n}")
    return image


def fht_vertical(image, count_adds=False):
    """Hough image ``H[t, x]`` over mostly-vertical dyadic lines.

    With ``count_adds`` returns ``(H, additions)``.
    """
    image = _check_square_pow2(image)
    n = image.shape[0]
    dtype = np.result_type(image.dtype, np.int64) if np.issubdtype(image.dtype, np.integer) else np.float64
    # strips[s, t, x]: strip s of the current height, drift t, start column x
    strips = image.astype(dtype)[:, None, :]
    adds = 0
    height = 1
    while height < n:
        top, bottom = strips[0::2], strips[1::2]
        merged = np.empty((top.shape[0], 2 * height, n), dtype=dtype)
        for t in range(2 * height):
            half, r = t >> 1, t & 1
            merged[:, t, :] = top[:, half, :] + np.roll(bottom[:, half, :], -(half + r), axis=-1)
        adds += merged.size
        strips = merged
        height *= 2
    out = strips[0]
    return (out, adds) if count_adds else out


def fht(image, direction="vertical"):
    """Fast Hough transform of a 2**k square image.

    ``direction`` is ``"vertical"``, ``"horizontal"`` (transform of the
    transposed image) or ``"both"`` (the two stacked along axis 0).
    """
    if direction == "vertical":
        return fht_vertical(image)
    if direction == "horizontal":
        return fht_vertical(np.asarray(image).T)
    if direction == "both":
        return np.stack([fht_vertical(image), fht_vertical(np.asarray(image).T)])
    raise ValueError(f"unknown direction {direction!r}")


def dyadic_line_offsets(n, t):
    """Per-row column offsets of the dyadic line with drift ``t`` over ``n`` rows."""
    if n == 1:
        return [0]
    half, r = t >> 1, t & 1
    sub = dyadic_line_offsets(n // 2, half)
    return sub + [half + r + o for o in sub]
