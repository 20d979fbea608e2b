"""The 16-dimensional tiny CNN descriptor.

Ten layers, 32x32x1 input::

    conv  8 @ 4x4 s2  -> 15x15x8
    conv  8 @ 3x1 s1  -> 13x15x8
    conv  8 @ 1x2 s1  -> 13x14x8
    conv 20 @ 3x3 s2  ->  6x6x20
    conv 16 @ 1x1     ->  6x6x16
    conv 12 @ 1x1     ->  6x6x12
    conv 20 @ 2x2 s1  ->  5x5x20
    conv 48 @ 3x3 s2  ->  2x2x48
    fc  192 -> 128
    fc  128 -> 16     (no activation)

Every layer except the last is followed by ``symrelu[1]``, which makes the
output range of each descriptor component provably bounded.
"""
from __future__ import annotations

import copy
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ActivationSpec,
    ConvLayerParams,
    FcLayerParams,
    ShapeError,
    conv2d_backward,
    conv2d_valid,
    fully_connected,
    fully_connected_backward,
    xavier_init,
)

PATCH_SIZE = 32
DESCRIPTOR_SIZE = 16

# (out_channels, kh, kw, sh, sw) per conv layer, then fc output sizes.
DESCRIPTOR_CONV_LAYERS = [
    (8, 4, 4, 2, 2),
    (8, 3, 1, 1, 1),
    (8, 1, 2, 1, 1),
    (20, 3, 3, 2, 2),
    (16, 1, 1, 1, 1),
    (12, 1, 1, 1, 1),
    (20, 2, 2, 1, 1),
    (48, 3, 3, 2, 2),
]
DESCRIPTOR_FC_LAYERS = [128, 16]


@dataclass
class Layer:
    kind: str  # "conv" | "fc"
    params: ConvLayerParams | FcLayerParams
    activation: ActivationSpec = field(default_factory=ActivationSpec)

    def weight_arrays(self):
        if self.kind == "conv":
            return [self.params.kernel, self.params.bias]
        return [self.params.weights, self.params.bias]


class DescriptorNet:
    """Ordered conv/fc layers mapping a 32x32 grayscale patch to a 16-vector."""

    input_shape = (PATCH_SIZE, PATCH_SIZE, 1)

    def __init__(self, layers):
        self.layers = list(layers)
        self.layer_shapes()  # validates the chain

    def layer_shapes(self):
        """Output shape of every layer, starting from a 32x32x1 input."""
        shape = self.input_shape
        shapes = []
        for k, layer in enumerate(self.layers):
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {k + 1}: conv after fc is not supported")
                kh, kw, cin, _, _, _ = layer.params.geometry
                if shape[2] != cin or shape[0] < kh or shape[1] < kw:
                    raise ShapeError(f"layer {k + 1}: input {shape} incompatible with kernel {layer.params.kernel.shape}")
                shape = layer.params.output_shape(shape[0], shape[1])
            elif layer.kind == "fc":
                n_in = int(np.prod(shape))
                if layer.params.weights.shape[0] != n_in:
                    raise ShapeError(f"layer {k + 1}: fc expects {layer.params.weights.shape[0]} inputs, got {n_in}")
                shape = (layer.params.weights.shape[1],)
            else:
                raise ShapeError(f"layer {k + 1}: unknown kind {layer.kind!r}")
            shapes.append(shape)
        return shapes

    @property
    def output_size(self):
        return self.layer_shapes()[-1][0]

    @property
    def dtype(self):
        return self.layers[0].params.bias.dtype

    def parameters(self):
        return [arr for layer in self.layers for arr in layer.weight_arrays()]

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        net = self.copy()
        for layer in net.layers:
            p = layer.params
            if layer.kind == "conv":
                p.kernel = p.kernel.astype(dtype)
            else:
                p.weights = p.weights.astype(dtype)
            p.bias = p.bias.astype(dtype)
        return net

    def forward_float(self, x, keep_cache=False):
        """Run normalized input of shape (N, 32, 32) or (N, 32, 32, 1).

        With ``keep_cache`` also returns the per-layer (input, pre-activation)
        pairs that :meth:`backward` needs.
        """
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected patches of shape {self.input_shape}, got {x.shape[1:]}")
        x = x.astype(self.dtype, copy=False)
        cache = []
        for layer in self.layers:
            if layer.kind == "conv":
                z = conv2d_valid(x, layer.params)
            else:
                if x.ndim > 2:
                    x = x.reshape(x.shape[0], -1)
                z = fully_connected(x, layer.params)
            if keep_cache:
                cache.append((x, z))
            x = layer.activation(z)
        return (x, cache) if keep_cache else x

    def backward(self, cache, grad_out):
        """Backpropagate ``d loss / d output``; returns gradients aligned with :meth:`parameters`."""
        grads = [None] * (2 * len(self.layers))
        g = grad_out
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            x, z = cache[k]
            g = g * layer.activation.grad(z)
            if layer.kind == "conv":
                g, dw, db = conv2d_backward(x, layer.params, g)
            else:
                g, dw, db = fully_connected_backward(x, layer.params, g)
                if k > 0 and self.layers[k - 1].kind == "conv":
                    g = g.reshape(cache[k - 1][1].shape)
            grads[2 * k] = dw
            grads[2 * k + 1] = db
        return grads

    def describe(self, patches, chunk=4096):
        """Descriptors for uint8 patches of shape (N, 32, 32); returns (N, 16)."""
        patches = np.asarray(patches)
        if patches.ndim != 3 or patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
            raise ShapeError(f"expected (N, 32, 32) patches, got {patches.shape}")
        out = [self.forward_float(normalize_patches(patches[i:i + chunk], self.dtype))
               for i in range(0, len(patches), chunk)]
        if not out:
            return np.zeros((0, self.output_size), dtype=self.dtype)
        return np.concatenate(out)

    def __call__(self, patch):
        return forward(self, patch)


def normalize_patches(patches, dtype=np.float32):
    """Map 8-bit intensities onto [-1, 1]."""
    return ((np.asarray(patches, dtype=np.float64) - 127.5) / 127.5).astype(dtype)


def build_net(conv_layers, fc_layers, rng, activation_a=1.0, dtype=np.float32):
    layers = []
    h, w, c = DescriptorNet.input_shape
    for cout, kh, kw, sh, sw in conv_layers:
        kernel = xavier_init(kh * kw * c, kh * kw * cout, rng, shape=(kh, kw, c, cout), dtype=dtype)
        layers.append(Layer("conv", ConvLayerParams(kernel, np.zeros(cout, dtype), (sh, sw)),
                            ActivationSpec("symrelu", activation_a)))
        h, w, c = (h - kh) // sh + 1, (w - kw) // sw + 1, cout
    n_in = h * w * c
    for k, n_out in enumerate(fc_layers):
        last = k == len(fc_layers) - 1
        weights = xavier_init(n_in, n_out, rng, dtype=dtype)
        act = ActivationSpec("identity") if last else ActivationSpec("symrelu", activation_a)
        layers.append(Layer("fc", FcLayerParams(weights, np.zeros(n_out, dtype)), act))
        n_in = n_out
    return DescriptorNet(layers)


def build_descriptor_net(rng=None, dtype=np.float32):
    """The ten-layer descriptor, Glorot-uniform initialized, zero biases."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return build_net(DESCRIPTOR_CONV_LAYERS, DESCRIPTOR_FC_LAYERS, rng, dtype=dtype)


def forward(net, patch):
    """Descriptor of a single 32x32 8-bit patch (raw, not L2-normalized)."""
    patch = np.asarray(patch)
    if patch.ndim == 3 and patch.shape[-1] == 1:
        patch = patch[..., 0]
    if patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ShapeError(f"expected a 32x32 single-channel patch, got shape {patch.shape}")
    return net.forward_float(normalize_patches(patch[None], net.dtype))[0]


def count_parameters(net):
    return int(sum(arr.size for arr in net.parameters()))


def count_operations(net):
    """(multiplications, summations) for one forward pass.

    Each output element of a layer costs ``kernel_volume`` multiplications
    and ``kernel_volume - 1`` accumulation adds plus one bias add.
    """
    mults = 0
    for layer, shape in zip(net.layers, net.layer_shapes()):
        if layer.kind == "conv":
            kh, kw, cin, _, _, _ = layer.params.geometry
            mults += int(np.prod(shape)) * kh * kw * cin
        else:
            mults += layer.params.weights.size
    return mults, mults


@dataclass
class DescriptorBounds:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def key(self):
        """CRC-32 of the bound values, identifying which (L, U) a code refers to."""
        payload = np.concatenate([self.lower, self.upper]).astype("<f8").tobytes()
        return zlib.crc32(payload)

    def contains(self, descriptors, slack=0.0):
        d = np.asarray(descriptors)
        return bool(np.all((d >= self.lower - slack) & (d <= self.upper + slack)))


def output_bounds(net):
    """Per-component range of the descriptor.

    The penultimate clamp keeps every input of the last layer inside
    ``[-a, a]``, so ``L_j = b_j - a * sum_i |W_ij|`` and
    ``U_j = b_j + a * sum_i |W_ij|``.
    """
    last = net.layers[-1]
    if last.kind != "fc" or len(net.layers) < 2:
        raise ValueError("output bounds need a final fully connected layer")
    act = net.layers[-2].activation
    if act.kind != "symrelu":
        raise ValueError("penultimate activation does not bound its output; bounds are undefined")
    w = last.params.weights.astype(np.float64)
    b = last.params.bias.astype(np.float64)
    spread = act.a * np.abs(w).sum(axis=0)
    return DescriptorBounds(b - spread, b + spread)


@dataclass
class QuantizedDescriptor:
    codes: np.ndarray  # uint8, (..., 16)
    bounds: DescriptorBounds

    @property
    def bounds_key(self):
        return self.bounds.key


def quantize(descriptor, bounds):
    x = np.asarray(descriptor, dtype=np.float64)
    span = bounds.upper - bounds.lower
    safe = np.where(span > 0, span, 1.0)
    codes = np.rint(255.0 * (x - bounds.lower) / safe)
    codes = np.where(span > 0, codes, 0.0)
    return QuantizedDescriptor(np.clip(codes, 0, 255).astype(np.uint8), bounds)


def dequantize(q):
    b = q.bounds
    return b.lower + q.codes.astype(np.float64) * (b.upper - b.lower) / 255.0


# ---------------------------------------------------------------------------
# model files

MODEL_MAGIC = b"TDSC"
MODEL_VERSION = 1
_KIND_TAGS = {"conv": 0, "fc": 1}
_ACT_TAGS = {"identity": 0, "symrelu": 1}


class ModelFormatError(ValueError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class CorruptFileError(ModelFormatError):
    pass


class ShapeTableError(ModelFormatError):
    pass


def model_to_bytes(net):
    head = bytearray(MODEL_MAGIC)
    head += struct.pack("<BI", MODEL_VERSION, len(net.layers))
    payload = bytearray()
    for layer in net.layers:
        head += struct.pack("<B", _KIND_TAGS[layer.kind])
        if layer.kind == "conv":
            head += struct.pack("<6I", *layer.params.geometry)
        else:
            head += struct.pack("<2I", *layer.params.weights.shape)
        head += struct.pack("<Bf", _ACT_TAGS[layer.activation.kind], layer.activation.a)
        for arr in layer.weight_arrays():
            payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    body = bytes(head + payload)
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(data):
    if len(data) < 13 or data[:4] != MODEL_MAGIC:
        raise CorruptFileError("not a descriptor model file (bad magic or truncated)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    version = data[4]
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"model format version {version}, expected {MODEL_VERSION}")
    if zlib.crc32(body) != crc:
        raise CorruptFileError("model checksum mismatch")

    pos = 5
    (n_layers,) = struct.unpack_from("<I", body, pos)
    pos += 4
    specs = []
    try:
        for _ in range(n_layers):
            (kind_tag,) = struct.unpack_from("<B", body, pos)
            pos += 1
            if kind_tag == 0:
                geom = struct.unpack_from("<6I", body, pos)
                pos += 24
                kind = "conv"
            elif kind_tag == 1:
                geom = struct.unpack_from("<2I", body, pos)
                pos += 8
                kind = "fc"
            else:
                raise ShapeTableError(f"unknown layer kind tag {kind_tag}")
            act_tag, a = struct.unpack_from("<Bf", body, pos)
            pos += 5
            act_kind = {v: k for k, v in _ACT_TAGS.items()}.get(act_tag)
            if act_kind is None:
                raise ShapeTableError(f"unknown activation tag {act_tag}")
            specs.append((kind, geom, ActivationSpec(act_kind, float(a))))
    except struct.error as exc:
        raise CorruptFileError("truncated layer table") from exc

    layers = []
    for kind, geom, act in specs:
        if kind == "conv":
            kh, kw, cin, cout, sh, sw = geom
            shapes = [(kh, kw, cin, cout), (cout,)]
        else:
            shapes = [tuple(geom), (geom[1],)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            if pos + 4 * n > len(body):
                raise ShapeTableError("weight payload shorter than the layer table requires")
            arrays.append(np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32))
            pos += 4 * n
        try:
            if kind == "conv":
                params = ConvLayerParams(arrays[0], arrays[1], (geom[4], geom[5]))
            else:
                params = FcLayerParams(arrays[0], arrays[1])
        except (ShapeError, ValueError) as exc:
            raise ShapeTableError(str(exc)) from exc
        layers.append(Layer(kind, params, act))
    if pos != len(body):
        raise ShapeTableError("weight payload longer than the layer table declares")
    try:
        return DescriptorNet(layers)
    except ShapeError as exc:
        raise ShapeTableError(str(exc)) from exc


def save_model(net, path):
    data = model_to_bytes(net)
    with open(path, "wb") as fh:
        fh.write(data)
    return zlib.crc32(data)


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_checksum(net):
    return zlib.crc32(model_to_bytes(net))
