"""Complex-valued MRI operators with registered adjoint rules.

Complex data is carried inside real :class:`~gatemri.tensor.Tensor` values
with a trailing extent of 2 (interleaved re/im).  All operators here are
complex-linear, so their reverse-mode rule is the adjoint operator applied
to the output gradient pair.

FFT convention: ifftshift -> 2D DFT -> fftshift with orthonormal scaling,
placing the DC component at index (H//2, W//2).

All operators are pure functions and the mask/coil generators are
deterministic given their seed, so everything here is safe to call
concurrently on distinct outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, record


def to_pairs(z: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Complex array -> real array with a trailing re/im extent of 2."""
    return np.stack([z.real, z.imag], axis=-1).astype(dtype)


def from_pairs(x: np.ndarray) -> np.ndarray:
    """Real (..., 2) array -> complex array."""
    if x.shape[-1] != 2:
        raise ValueError(f"expected trailing extent 2, got shape {x.shape}")
    ctype = np.complex128 if x.dtype == np.float64 else np.complex64
    return (x[..., 0] + 1j * x[..., 1]).astype(ctype)


def fft2c_array(z: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    shifted = np.fft.ifftshift(z, axes=axes)
    k = np.fft.fft2(shifted, axes=axes, norm="ortho")
    return np.fft.fftshift(k, axes=axes).astype(z.dtype)


def ifft2c_array(k: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    shifted = np.fft.ifftshift(k, axes=axes)
    z = np.fft.ifft2(shifted, axes=axes, norm="ortho")
    return np.fft.fftshift(z, axes=axes).astype(k.dtype)


def _complex_op(name, x: Tensor, fwd, adj) -> Tensor:
    dtype = x.data.dtype
    data = to_pairs(fwd(from_pairs(x.data)), dtype)
    return record(name, data, (x,), lambda g: (to_pairs(adj(from_pairs(g)), dtype),))


def fft2c(x: Tensor) -> Tensor:
    """Centered orthonormal 2D FFT over the (..., H, W, 2) pair layout."""
    return _complex_op("fft2c", x, fft2c_array, ifft2c_array)


def ifft2c(k: Tensor) -> Tensor:
    """Exact inverse of :func:`fft2c` (same shift and scaling conventions)."""
    return _complex_op("ifft2c", k, ifft2c_array, fft2c_array)


@dataclass
class SamplingMask:
    """Column mask over k-space: the central band is always fully sampled."""

    width: int
    kept: np.ndarray  # bool, shape (width,)
    acceleration: int
    center_fraction: float

    def as_floats(self, dtype=np.float32) -> np.ndarray:
        return self.kept.astype(dtype)


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def center_band(width: int, center_fraction: float):
    """Start/stop of the fully sampled central column band."""
    n_center = _round_half_up(center_fraction * width)
    pad = (width - n_center + 1) // 2
    return pad, pad + n_center


def generate_mask(width: int, acceleration: int, center_fraction: float, seed: int) -> SamplingMask:
    """Random column mask: full central band, Bernoulli columns elsewhere.

    The Bernoulli probability p = (width/acceleration - n_center) /
    (width - n_center) makes the expected kept count width/acceleration;
    p is clamped to [0, 1].
    """
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if not 0.0 < center_fraction < 1.0:
        raise ValueError(f"center_fraction must lie in (0, 1), got {center_fraction}")
    start, stop = center_band(width, center_fraction)
    n_center = stop - start
    kept = np.zeros(width, dtype=bool)
    kept[start:stop] = True
    if width > n_center:
        p = (width / acceleration - n_center) / (width - n_center)
        p = min(max(p, 0.0), 1.0)
        rng = np.random.default_rng([seed, width, acceleration])
        outside = rng.uniform(size=width) < p
        outside[start:stop] = False
        kept |= outside
    return SamplingMask(width, kept, acceleration, center_fraction)


def mask_from_floats(values: np.ndarray, acceleration: int = 0, center_fraction: float = 0.0) -> SamplingMask:
    kept = np.asarray(values).reshape(-1) > 0.5
    return SamplingMask(kept.size, kept, acceleration, center_fraction)


def apply_mask(k: Tensor, mask: SamplingMask) -> Tensor:
    """Zero the dropped k-space columns; kept columns pass unchanged."""
    if k.data.shape[-2] != mask.width:
        raise ValueError(f"mask width {mask.width} does not match k-space width {k.data.shape[-2]}")
    factor = mask.kept.astype(k.data.dtype)[:, None]
    data = k.data * factor
    return record("apply_mask", data, (k,), lambda g: (g * factor,))


@dataclass
class CoilSensitivities:
    """Per-coil complex sensitivity maps, sum-of-squares normalized."""

    maps: np.ndarray  # complex, shape (C, H, W)

    @property
    def num_coils(self) -> int:
        return self.maps.shape[0]


def expand(x: Tensor, coils: CoilSensitivities) -> Tensor:
    """Image (H, W, 2) -> coil images (C, H, W, 2), multiplying by each map."""
    maps = coils.maps
    z = from_pairs(x.data)
    if z.shape != maps.shape[1:]:
        raise ValueError(f"image shape {z.shape} does not match coil maps {maps.shape[1:]}")
    dtype = x.data.dtype
    data = to_pairs(maps * z[None], dtype)

    def backward_fn(g):
        gc = from_pairs(g)
        return (to_pairs((np.conj(maps) * gc).sum(axis=0), dtype),)

    return record("coil_expand", data, (x,), backward_fn)


def reduce(y: Tensor, coils: CoilSensitivities) -> Tensor:
    """Coil images (C, H, W, 2) -> image (H, W, 2) via conjugate-weighted sum."""
    maps = coils.maps
    z = from_pairs(y.data)
    if z.shape != maps.shape:
        raise ValueError(f"coil data shape {z.shape} does not match maps {maps.shape}")
    dtype = y.data.dtype
    data = to_pairs((np.conj(maps) * z).sum(axis=0), dtype)

    def backward_fn(g):
        gi = from_pairs(g)
        return (to_pairs(maps * gi[None], dtype),)

    return record("coil_reduce", data, (y,), backward_fn)


def make_coil_maps(num_coils: int, height: int, width: int, seed: int) -> CoilSensitivities:
    """Synthetic smooth coil maps: Gaussian lobes on a circle with smooth
    random phase, normalized so the pixelwise sum of squares is 1."""
    if num_coils < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng([seed, num_coils, height, width])
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    radius = 0.6 * min(height, width) / 2.0
    sigma = 0.5 * min(height, width)
    maps = np.empty((num_coils, height, width), dtype=np.complex128)
    for c in range(num_coils):
        angle = 2.0 * np.pi * c / num_coils
        oy, ox = cy + radius * np.sin(angle), cx + radius * np.cos(angle)
        mag = np.exp(-((yy - oy) ** 2 + (xx - ox) ** 2) / (2.0 * sigma ** 2))
        phase = np.zeros((height, width))
        for _ in range(3):
            fy, fx = rng.integers(-2, 3, size=2)
            amp, shift = rng.uniform(0.0, 1.5), rng.uniform(0.0, 2.0 * np.pi)
            phase += amp * np.cos(2.0 * np.pi * (fy * yy / height + fx * xx / width) + shift)
        maps[c] = mag * np.exp(1j * phase)
    sos = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    maps /= sos[None]
    return CoilSensitivities(maps)


def uniform_coil(height: int, width: int) -> CoilSensitivities:
    """Single uniform coil (expand and reduce become the identity)."""
    return CoilSensitivities(np.ones((1, height, width), dtype=np.complex128))


def complex_abs(x: Tensor) -> Tensor:
    """Pointwise magnitude of a pair tensor; subgradient 0 where |z| = 0."""
    re, im = x.data[..., 0], x.data[..., 1]
    mag = np.sqrt(re * re + im * im)

    def backward_fn(g):
        safe = np.where(mag > 0, mag, 1.0)
        scale = g / safe * (mag > 0)
        return (np.stack([re * scale, im * scale], axis=-1),)

    return record("complex_abs", mag, (x,), backward_fn)


def pairs_to_nchw(x: Tensor) -> Tensor:
    """(H, W, 2) -> (1, 2, H, W): expose re/im as network channels."""
    if x.data.ndim != 3 or x.data.shape[-1] != 2:
        raise ValueError(f"expected (H, W, 2), got {x.data.shape}")
    data = np.ascontiguousarray(np.moveaxis(x.data, -1, 0)[None])
    return record("pairs_to_nchw", data, (x,),
                  lambda g: (np.ascontiguousarray(np.moveaxis(g[0], 0, -1)),))


def nchw_to_pairs(x: Tensor) -> Tensor:
    """(1, 2, H, W) -> (H, W, 2): inverse of :func:`pairs_to_nchw`."""
    if x.data.ndim != 4 or x.data.shape[0] != 1 or x.data.shape[1] != 2:
        raise ValueError(f"expected (1, 2, H, W), got {x.data.shape}")
    data = np.ascontiguousarray(np.moveaxis(x.data[0], 0, -1))
    return record("nchw_to_pairs", data, (x,),
                  lambda g: (np.ascontiguousarray(np.moveaxis(g, -1, 0)[None]),))
