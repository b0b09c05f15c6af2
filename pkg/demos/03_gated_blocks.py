"""Inside the gated blocks: the multiplicative gate, the dynamic-kernel
mixer, and what swapping the mixer costs in parameters."""

import numpy as np

from gatemri.blocks import (Backbone, BackboneConfig, BlockConfig, GatedBlock, LsConv,
                            LsConvConfig, count_parameters, simple_gate)
from gatemri.tensor import Tensor

rng = np.random.default_rng(0)

print("=== the gate: no activation functions, just a product of halves ===")
z = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
stacked = np.concatenate([z, np.ones_like(z)], axis=1)
print("SG([Z, ones]) == Z:", np.array_equal(simple_gate(Tensor(stacked)).data, z))

print("\n=== dynamic kernels: see large, focus small ===")
cfg = LsConvConfig(k_large=7, k_small=3, groups=4)
mixer = LsConv(8, cfg, rng)
x = Tensor(rng.standard_normal((1, 8, 16, 16)).astype(np.float32))
weights = mixer.dynamic_weights(x)
print(f"input (1, 8, 16, 16) -> per-position kernels {weights.data.shape} "
      f"(= groups x k_small^2 channels)")
corner = weights.data[0, :9, 0, 0].reshape(3, 3)
center = weights.data[0, :9, 8, 8].reshape(3, 3)
print("group-0 kernel at (0,0) vs (8,8) -- position-dependent:")
print(np.round(corner, 3))
print(np.round(center, 3))

print("\n=== parameter cost of the large-field mixer ===")
for c in (16, 32, 64):
    naf = GatedBlock(BlockConfig(c, "local_dw3"), np.random.default_rng(1))
    lsg = GatedBlock(BlockConfig(c, "lsconv"), np.random.default_rng(1), LsConvConfig())
    n, l = count_parameters(naf), count_parameters(lsg)
    print(f"  C={c:3d}: local block {n:7d} params, dynamic block {l:7d} (+{l - n})")

print("\n=== the backbone is the identity until training moves it ===")
net = Backbone(BackboneConfig(width=16, in_channels=1, out_channels=1), seed=2)
img = Tensor(rng.standard_normal((1, 1, 64, 64)).astype(np.float32))
out = net(img)
print(f"zero-initialized final projection: max|out - in| = "
      f"{np.abs(out.data - img.data).max():.1e}")
print(f"backbone parameters: {count_parameters(net)}")
