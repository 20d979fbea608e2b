"""Store descriptors as 16 bytes instead of 16 floats."""
import numpy as np

from tinydesc.net import build_descriptor_net, dequantize, output_bounds, quantize

net = build_descriptor_net(3)
rng = np.random.default_rng(0)
patches = rng.integers(0, 256, (1000, 32, 32)).astype(np.uint8)

d = net.describe(patches)
bounds = output_bounds(net)
q = quantize(d, bounds)
back = dequantize(q)

print("codes", q.codes.dtype, q.codes.shape, "bounds key %08x" % q.bounds_key)
print("max error", np.abs(back - d).max(), "allowed", ((bounds.upper - bounds.lower) / 510).max())

# how often do the two versions disagree about which of two pairs is closer?
i, j = rng.integers(0, 1000, (2, 5000))
k, m = rng.integers(0, 1000, (2, 5000))
full = np.linalg.norm(d[i] - d[j], axis=1) < np.linalg.norm(d[k] - d[m], axis=1)
small = np.linalg.norm(back[i] - back[j], axis=1) < np.linalg.norm(back[k] - back[m], axis=1)
print("pair comparisons that agree:", (full == small).mean())

# the bounds are loose: real descriptors use a small part of the range
used = (d.max(0) - d.min(0)) / (bounds.upper - bounds.lower)
print("fraction of [L, U] actually used per component:", np.round(used, 3))
