"""Dense tensor primitives: valid convolution, fully connected layers,
the symmetric clamp activation, their gradients and Glorot init.

Tensors are numpy arrays laid out as (height, width, channels), or
(batch, height, width, channels) for batched calls.  Every function here
keeps the floating dtype of its inputs, so the same code serves the 32-bit
runtime and the 64-bit finite-difference harness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes violate a layer's preconditions."""


@dataclass
class ConvLayerParams:
    kernel: np.ndarray  # (kh, kw, in_channels, out_channels)
    bias: np.ndarray  # (out_channels,)
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-D, got shape {self.kernel.shape}")
        kh, kw, _, cout = self.kernel.shape
        sh, sw = self.stride
        if min(kh, kw, sh, sw, cout) < 1:
            raise ShapeError("kernel sizes, strides and out_channels must be >= 1")
        if self.bias.shape != (cout,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({cout},)")

    @property
    def geometry(self):
        kh, kw, cin, cout = self.kernel.shape
        return kh, kw, cin, cout, self.stride[0], self.stride[1]

    def output_shape(self, height, width):
        kh, kw, _, cout, sh, sw = self.geometry
        return (height - kh) // sh + 1, (width - kw) // sw + 1, cout


@dataclass
class FcLayerParams:
    weights: np.ndarray  # (inputs, outputs)
    bias: np.ndarray  # (outputs,)

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weights.shape[1]},)")


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "symrelu"  # "symrelu" | "identity"
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ("symrelu", "identity"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "symrelu" and not self.a > 0:
            raise ValueError("symrelu clamp bound must be positive")

    def __call__(self, x):
        return symrelu(x, self.a) if self.kind == "symrelu" else x

    def grad(self, x):
        if self.kind == "identity":
            return np.ones_like(x)
        return symrelu_grad(x, self.a)


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (H, W, C) or (N, H, W, C) input, got shape {x.shape}")


def _common_dtype(*arrays):
    dtype = np.result_type(*arrays)
    return dtype if np.issubdtype(dtype, np.floating) else np.dtype(np.float64)


def _check_conv(x, params):
    kh, kw, cin, _, _, _ = params.geometry
    _, h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, kernel expects {cin}")
    if h < kh or w < kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")


def conv2d_valid(x, params: ConvLayerParams):
    """Strided convolution without padding (cross-correlation, as in CNNs).

    Output spatial size is ``floor((in - k) / s) + 1`` on each axis.  The
    kernel taps are accumulated in row-major (kh, kw) order.
    """
    xb, squeeze = _as_batch(x)
    _check_conv(xb, params)
    kh, kw, _, cout, sh, sw = params.geometry
    oh, ow, _ = params.output_shape(xb.shape[1], xb.shape[2])
    dtype = _common_dtype(xb, params.kernel)
    xb = xb.astype(dtype, copy=False)
    kernel = params.kernel.astype(dtype, copy=False)

    out = np.zeros((xb.shape[0], oh, ow, cout), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            window = xb[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :]
            out += window @ kernel[i, j]
    out += params.bias.astype(dtype, copy=False)
    return out[0] if squeeze else out


def conv2d_backward(x, params: ConvLayerParams, upstream_grad):
    """Gradients of a scalar loss w.r.t. input, kernel and bias.

    Returns ``(input_grad, weight_grad, bias_grad)``; weight and bias
    gradients are summed over the batch axis.
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(upstream_grad)
    _check_conv(xb, params)
    kh, kw, cin, cout, sh, sw = params.geometry
    oh, ow, _ = params.output_shape(xb.shape[1], xb.shape[2])
    if gb.shape != (xb.shape[0], oh, ow, cout):
        raise ShapeError(f"upstream gradient shape {gb.shape} != {(xb.shape[0], oh, ow, cout)}")
    dtype = _common_dtype(xb, params.kernel, gb)
    xb = xb.astype(dtype, copy=False)
    gb = gb.astype(dtype, copy=False)
    kernel = params.kernel.astype(dtype, copy=False)

    n = xb.shape[0]
    g_flat = gb.reshape(-1, cout)
    dx = np.zeros_like(xb)
    dw = np.empty((kh, kw, cin, cout), dtype=dtype)
    for i in range(kh):
        hs = slice(i, i + sh * (oh - 1) + 1, sh)
        for j in range(kw):
            ws = slice(j, j + sw * (ow - 1) + 1, sw)
            window = xb[:, hs, ws, :].reshape(-1, cin)
            dw[i, j] = window.T @ g_flat
            dx[:, hs, ws, :] += (g_flat @ kernel[i, j].T).reshape(n, oh, ow, cin)
    db = g_flat.sum(axis=0)
    return (dx[0] if squeeze else dx), dw, db


def fully_connected(x, params: FcLayerParams):
    """``out_j = sum_i x_i W_ij + b_j`` for a vector or a (batch, inputs) matrix."""
    x = np.asarray(x)
    if x.shape[-1] != params.weights.shape[0]:
        raise ShapeError(f"input length {x.shape[-1]} != weight rows {params.weights.shape[0]}")
    dtype = _common_dtype(x, params.weights)
    return x.astype(dtype, copy=False) @ params.weights.astype(dtype, copy=False) + params.bias.astype(dtype, copy=False)


def fully_connected_backward(x, params: FcLayerParams, upstream_grad):
    x = np.asarray(x)
    g = np.asarray(upstream_grad)
    if x.shape[-1] != params.weights.shape[0]:
        raise ShapeError(f"input length {x.shape[-1]} != weight rows {params.weights.shape[0]}")
    if g.shape[-1] != params.weights.shape[1] or g.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"upstream gradient shape {g.shape} does not match output")
    dtype = _common_dtype(x, params.weights, g)
    x = x.astype(dtype, copy=False)
    g = g.astype(dtype, copy=False)
    dx = g @ params.weights.astype(dtype, copy=False).T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return dx, x2.T @ g2, g2.sum(axis=0)


def symrelu(x, a=1.0):
    """Symmetric clamp ``max(-a, min(a, x))``."""
    if not a > 0:
        raise ValueError("a must be positive")
    if np.isscalar(x):
        return max(-a, min(a, x))
    return np.clip(x, -a, a)


def symrelu_grad(x, a=1.0):
    """1 strictly inside (-a, a), 0 on and beyond the clamp boundary."""
    if not a > 0:
        raise ValueError("a must be positive")
    if np.isscalar(x):
        return 1.0 if abs(x) < a else 0.0
    x = np.asarray(x)
    return (np.abs(x) < a).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def xavier_bound(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(fan_in, fan_out, rng, shape=None, dtype=np.float32):
    """Glorot-uniform weights on ``[-sqrt(6/(fan_in+fan_out)), +...]``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    if shape is None:
        shape = (fan_in, fan_out)
    bound = xavier_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
