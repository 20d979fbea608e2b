import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydesc.net import (
    CorruptFileError,
    DescriptorBounds,
    ShapeTableError,
    VersionMismatchError,
    build_net,
    build_descriptor_net,
    count_operations,
    count_parameters,
    dequantize,
    forward,
    load_model,
    model_from_bytes,
    model_to_bytes,
    output_bounds,
    quantize,
    save_model,
)
from tinydesc.tensor import ShapeError

# Per-layer tally with the built geometry: conv layers kh*kw*cin*cout + cout,
# fc layers in*out + out.
EXPECTED_PARAMS_BY_LAYER = [136, 200, 136, 1460, 336, 204, 980, 8688, 24704, 2064]
# Output elements x kernel volume (conv), in x out (fc).
EXPECTED_MULTS_BY_LAYER = [28800, 37440, 23296, 51840, 11520, 6912, 24000, 34560, 24576, 2048]


def test_layer_shapes():
    shapes = build_descriptor_net(0).layer_shapes()
    assert shapes == [(15, 15, 8), (13, 15, 8), (13, 14, 8), (6, 6, 20), (6, 6, 16), (6, 6, 12),
                      (5, 5, 20), (2, 2, 48), (128,), (16,)]


def test_activations():
    net = build_descriptor_net(0)
    assert [l.activation.kind for l in net.layers] == ["symrelu"] * 9 + ["identity"]
    assert all(l.activation.a == 1.0 for l in net.layers[:9])


def test_parameter_tally():
    net = build_descriptor_net(0)
    assert [sum(a.size for a in l.weight_arrays()) for l in net.layers] == EXPECTED_PARAMS_BY_LAYER
    assert count_parameters(net) == sum(EXPECTED_PARAMS_BY_LAYER) == 38908


def test_operation_tally():
    mults, sums = count_operations(build_descriptor_net(0))
    assert mults == sum(EXPECTED_MULTS_BY_LAYER) == 244992
    assert sums == mults


def test_single_fc_operation_count():
    net = build_net([], [3], np.random.default_rng(0))
    net.input_shape = (2, 1, 1)
    net.layers[0].params.weights = np.zeros((2, 3), np.float32)
    assert count_operations(net)[0] == 6


def test_forward_shape_and_zero_net():
    net = build_descriptor_net(1)
    patch = np.random.default_rng(0).integers(0, 256, (32, 32)).astype(np.uint8)
    assert forward(net, patch).shape == (16,)
    for arr in net.parameters():
        arr[...] = 0
    assert not forward(net, patch).any()


def test_forward_wrong_size():
    with pytest.raises(ShapeError):
        forward(build_descriptor_net(0), np.zeros((31, 32), np.uint8))


def test_forward_golden_64bit():
    """32-bit forward agrees with a 64-bit run of the same weights."""
    net = build_descriptor_net(42)
    patch = (np.add.outer(np.arange(32), 3 * np.arange(32)) * 7 % 256).astype(np.uint8)
    d32 = forward(net, patch)
    d64 = forward(net.astype(np.float64), patch)
    assert d32.dtype == np.float32 and d64.dtype == np.float64
    np.testing.assert_allclose(d32, d64, atol=1e-4)


def test_forward_deterministic():
    net = build_descriptor_net(5)
    patch = np.random.default_rng(1).integers(0, 256, (32, 32)).astype(np.uint8)
    assert forward(net, patch).tobytes() == forward(net, patch).tobytes()


def test_bounds_hand_example():
    net = build_net([], [2, 1], np.random.default_rng(0))
    net.input_shape = (1, 1, 1)
    last = net.layers[-1].params
    last.weights = np.array([[0.5], [-0.5]], np.float32)
    last.bias = np.array([0.1], np.float32)
    b = output_bounds(net)
    np.testing.assert_allclose(b.lower, [-0.9], atol=1e-7)
    np.testing.assert_allclose(b.upper, [1.1], atol=1e-7)


def test_bounds_zero_weights():
    net = build_descriptor_net(0)
    net.layers[-1].params.weights[...] = 0
    net.layers[-1].params.bias[...] = 0.25
    b = output_bounds(net)
    np.testing.assert_array_equal(b.lower, b.upper)
    np.testing.assert_allclose(b.lower, 0.25)


def test_bounds_require_clamped_penultimate():
    net = build_descriptor_net(0)
    net.layers[-2].activation = type(net.layers[-2].activation)("identity")
    with pytest.raises(ValueError):
        output_bounds(net)


def test_bounds_invariants():
    net = build_descriptor_net(3)
    net.layers[-1].params.bias[...] = np.random.default_rng(0).normal(size=16)
    b = output_bounds(net)
    assert np.all(b.lower <= b.upper)
    np.testing.assert_allclose(b.lower + b.upper, 2 * net.layers[-1].params.bias, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 20))
def test_descriptor_inside_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    net = build_descriptor_net(rng)
    for arr in net.parameters():
        arr *= scale
    patches = rng.integers(0, 256, (8, 32, 32)).astype(np.uint8)
    assert output_bounds(net).contains(net.describe(patches), slack=1e-4 * scale * 200)


def _bounds():
    return DescriptorBounds(np.array([-2.0, 0.0, 1.0]), np.array([2.0, 0.5, 1.0]))


def test_quantize_endpoints_and_degenerate():
    b = _bounds()
    q = quantize(np.array([-2.0, 0.5, 1.0]), b)
    np.testing.assert_array_equal(q.codes, [0, 255, 0])
    q = quantize(np.array([2.0, 0.0, 1.0]), b)
    np.testing.assert_array_equal(q.codes, [255, 0, 0])
    np.testing.assert_array_equal(dequantize(q), [2.0, 0.0, 1.0])
    assert q.bounds_key == b.key


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_quantize_roundtrip_error(fracs):
    b = _bounds()
    x = b.lower + np.array(fracs) * (b.upper - b.lower)
    q = quantize(x, b)
    err = np.abs(dequantize(q) - x)
    assert np.all(err <= (b.upper - b.lower) / 510 + 1e-12)
    # idempotent on dequantized values
    np.testing.assert_array_equal(quantize(dequantize(q), b).codes, q.codes)


def test_model_roundtrip(tmp_path):
    net = build_descriptor_net(7)
    path = tmp_path / "m.tdsc"
    save_model(net, path)
    loaded = load_model(path)
    assert count_parameters(loaded) == count_parameters(net)
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert a.tobytes() == b.tobytes()
    patch = np.random.default_rng(0).integers(0, 256, (32, 32)).astype(np.uint8)
    assert forward(net, patch).tobytes() == forward(loaded, patch).tobytes()
    assert model_to_bytes(loaded) == path.read_bytes()


def test_model_layout(tmp_path):
    data = model_to_bytes(build_descriptor_net(0))
    assert data[:4] == b"TDSC" and data[4] == 1
    # header 9 bytes, 8 conv entries (1+24+5), 2 fc entries (1+8+5), float32 payload, crc
    assert len(data) == 9 + 8 * 30 + 2 * 14 + 4 * 38908 + 4


def test_model_truncated(tmp_path):
    data = model_to_bytes(build_descriptor_net(0))
    for cut in (3, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(CorruptFileError):
            model_from_bytes(data[:cut])


def test_model_bitflip_and_version():
    data = bytearray(model_to_bytes(build_descriptor_net(0)))
    flipped = bytearray(data)
    flipped[500] ^= 0x10
    with pytest.raises(CorruptFileError):
        model_from_bytes(bytes(flipped))
    data[4] = 2
    with pytest.raises(VersionMismatchError):
        model_from_bytes(bytes(data))


def test_model_inconsistent_shape_table():
    import struct
    import zlib

    body = bytearray(model_to_bytes(build_descriptor_net(0))[:-4])
    # second conv layer: claim 4 input channels instead of 8 (geometry starts at byte 9+30+1)
    struct.pack_into("<I", body, 9 + 30 + 1 + 8, 4)
    data = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(ShapeTableError):
        model_from_bytes(data)
