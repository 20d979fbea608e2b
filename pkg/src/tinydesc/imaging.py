"""Small grayscale image helpers shared by the generators, the miner and the
evaluation harness."""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy import ndimage


def gaussian_kernel1d(sigma):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3 * sigma))
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-d * d / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian blur, radius ceil(3 sigma), clamp-to-edge borders."""
    img = np.asarray(image, dtype=np.float64)
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


@functools.lru_cache(maxsize=1024)
def resample_matrix(n_in, n_out):
    """Linear operator resizing a 1-D signal from n_in to n_out samples.

    Downscaling averages over pixel footprints (area resampling); upscaling
    interpolates linearly between pixel centres.  Rows sum to one, so
    constant signals are preserved exactly.
    """
    m = np.zeros((n_out, n_in))
    if n_out <= n_in:
        scale = n_in / n_out
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            for j in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
                m[i, j] = min(hi, j + 1) - max(lo, j)
    else:
        centres = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        centres = np.clip(centres, 0, n_in - 1)
        lo = np.floor(centres).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = centres - lo
        m[np.arange(n_out), lo] += 1 - frac
        m[np.arange(n_out), hi] += frac
    m /= m.sum(axis=1, keepdims=True)
    m.flags.writeable = False
    return m


def resize(image, shape):
    rows = resample_matrix(image.shape[0], shape[0])
    cols = resample_matrix(image.shape[1], shape[1])
    return rows @ np.asarray(image, dtype=np.float64) @ cols.T


def to_uint8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def rescale_to_uint8(img):
    """Linear min-max stretch onto 0..255; a flat image maps to 255."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return np.full(img.shape, 255, dtype=np.uint8)
    return to_uint8(255.0 * (img - lo) / (hi - lo))


def write_pgm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM output needs a 2-D uint8 image")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def _pgm_tokens(data):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) 8-bit PGM into a (height, width) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _pgm_tokens(data)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raw = data[offset:offset + w * h]
    if len(raw) != w * h:
        raise ValueError(f"{path}: pixel data truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
