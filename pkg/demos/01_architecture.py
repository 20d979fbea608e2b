"""Walk through the descriptor network: layer shapes, sizes and the cost of one patch."""
import numpy as np

from tinydesc.net import build_descriptor_net, count_operations, count_parameters, forward, output_bounds

net = build_descriptor_net(0)

# each layer with its output shape and weight count
for layer, shape in zip(net.layers, net.layer_shapes()):
    n = sum(a.size for a in layer.weight_arrays())
    print(f"{layer.kind:4s} {str(shape):14s} {n:6d} weights  act={layer.activation.kind}")

mults, sums = count_operations(net)
print("parameters:", count_parameters(net))
print("multiplications per patch:", mults, " summations:", sums)

# a 32x32 patch in, 16 floats out
patch = (np.add.outer(np.arange(32), np.arange(32)) * 4 % 256).astype(np.uint8)
d = forward(net, patch)
print("descriptor:", np.round(d, 3))

# the clamped penultimate layer bounds every output component
b = output_bounds(net)
print("component 0 lies in", (round(float(b.lower[0]), 3), round(float(b.upper[0]), 3)))
