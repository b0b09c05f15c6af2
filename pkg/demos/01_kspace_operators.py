"""Tour of the k-space operator toolkit.

Shows the centered orthonormal FFT conventions, Cartesian undersampling
masks, synthetic coil sensitivities, and the adjoint identities that make
the whole chain differentiable.
"""

import numpy as np

from gatemri import mri
from gatemri.tensor import Tensor

rng = np.random.default_rng(0)

print("=== centered orthonormal FFT ===")
delta = np.zeros((4, 4), np.complex128)
delta[2, 2] = 1.0  # DC belongs at (H//2, W//2)
k = mri.fft2c(Tensor(mri.to_pairs(delta, np.float64))).data
print("fft2c(center delta) real part:\n", k[..., 0])
print("-> a constant 1/sqrt(16) = 0.25, i.e. unit-norm in both domains\n")

x = rng.standard_normal((8, 8, 2))
k = mri.fft2c(Tensor(x))
back = mri.ifft2c(k).data
print(f"round trip |ifft2c(fft2c(x)) - x| = {np.abs(back - x).max():.2e}")
print(f"Parseval:  ||x|| = {np.linalg.norm(x):.6f}   ||k|| = {np.linalg.norm(k.data):.6f}\n")

print("=== Cartesian column masks ===")
mask = mri.generate_mask(width=320, acceleration=4, center_fraction=0.08, seed=7)
start, stop = mri.center_band(320, 0.08)
print(f"320 columns at 4x acceleration, 8% center: {mask.kept.sum()} kept, "
      f"center band [{start}, {stop}) is {stop - start} columns")
print("mask prefix:", "".join("#" if kept else "." for kept in mask.kept[:64]), "...\n")

print("=== coil sensitivities ===")
coils = mri.make_coil_maps(4, 32, 32, seed=3)
sos = (np.abs(coils.maps) ** 2).sum(axis=0)
print(f"4 synthetic coils, sum-of-squares in [{sos.min():.6f}, {sos.max():.6f}]")

print("\n=== adjoint identities (the gradients of the cascade) ===")
for name, fwd, adj in [
    ("fft2c/ifft2c", lambda t: mri.fft2c(t), lambda t: mri.ifft2c(t)),
    ("expand/reduce", lambda t: mri.expand(t, coils), lambda t: mri.reduce(t, coils)),
]:
    a = rng.standard_normal((32, 32, 2))
    b_shape = (32, 32, 2) if name.startswith("fft") else (4, 32, 32, 2)
    b = rng.standard_normal(b_shape)
    lhs = np.vdot(mri.from_pairs(fwd(Tensor(a)).data).ravel(), mri.from_pairs(b).ravel())
    rhs = np.vdot(mri.from_pairs(a).ravel(), mri.from_pairs(adj(Tensor(b)).data).ravel())
    print(f"  <A x, y> vs <x, A* y> for {name:13s}: |diff| = {abs(lhs - rhs):.2e}")
print("(apply_mask is its own adjoint: dropped columns stay dropped)")
