"""Synthetic ground truth and the three task degradation models.

Tasks: ``recon`` (undersampled multi-coil k-space), ``sr`` (central k-space
block retained, rest zero-filled) and ``denoise`` (spatially heteroscedastic
noise whose scale grows where effective sensitivity drops).

Dataset directory layout written by :func:`generate_dataset`::

    <root>/<task>/<split>/<index>.mrt        clean image
    <root>/<task>/<split>/<index>.deg.mrt    degraded observation
    <root>/<task>/<split>/<index>.aux.mrt    mask / g-field when applicable
    <root>/<task>/manifest.txt               one line of parameters per sample
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio, mri

TASKS = ("recon", "sr", "denoise")


@dataclass
class PhantomSpec:
    size: tuple
    n_ellipses: int
    seed: int
    intensity_range: tuple = (0.0, 1.0)


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Sum of random ellipses on a dark background, clipped to the intensity
    range and lightly smoothed with a 3x3 box so edges are not pure steps."""
    h, w = spec.size
    if h < 16 or w < 16:
        raise ValueError(f"phantom size must be at least 16x16, got {h}x{w}")
    rng = np.random.default_rng([spec.seed, h, w, spec.n_ellipses])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w), dtype=np.float64)
    for _ in range(spec.n_ellipses):
        cy = rng.uniform(0.2 * h, 0.8 * h)
        cx = rng.uniform(0.2 * w, 0.8 * w)
        ay = rng.uniform(0.08, 0.35) * h
        ax = rng.uniform(0.08, 0.35) * w
        theta = rng.uniform(0.0, np.pi)
        value = rng.uniform(0.2, 1.0)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        img += value * ((u / ax) ** 2 + (v / ay) ** 2 <= 1.0)
    img = np.clip(img, *spec.intensity_range)
    return _box3(img)


def _box3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out / 9.0


def degrade_recon(x: np.ndarray, coils: mri.CoilSensitivities, mask: mri.SamplingMask,
                  noise_sigma: float, seed: int) -> np.ndarray:
    """Undersampled multi-coil k-space of a complex image (H, W).

    Returns complex (C, H, W).  Complex Gaussian noise with per-component
    std ``noise_sigma`` is added on kept columns only; dropped columns carry
    no measurement.
    """
    z = np.asarray(x, dtype=np.complex128)
    coil_images = coils.maps * z[None]
    k = mri.fft2c_array(coil_images)
    kept = mask.kept.astype(np.float64)
    k = k * kept[None, None, :]
    if noise_sigma > 0:
        rng = np.random.default_rng([seed, 7])
        noise = noise_sigma * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
        k = k + noise * kept[None, None, :]
    return k


def sr_block_bounds(height: int, width: int, keep_fraction: float):
    """Row/column bounds of the retained central k-space block.

    The block side is ``sqrt(keep_fraction)`` of each dimension so the
    retained area fraction equals ``keep_fraction``.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    side = np.sqrt(keep_fraction)
    n_rows = int(np.floor(side * height + 0.5))
    n_cols = int(np.floor(side * width + 0.5))
    if n_rows < 1 or n_cols < 1:
        raise ValueError(f"keep_fraction {keep_fraction} retains an empty block")
    r0 = (height - n_rows + 1) // 2
    c0 = (width - n_cols + 1) // 2
    return (r0, r0 + n_rows), (c0, c0 + n_cols)


def degrade_sr(x: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Ideal low-pass degradation: keep the central k-space block, zero the
    rest, and transform back.  Linear and idempotent."""
    z = np.asarray(x, dtype=np.complex128)
    h, w = z.shape[-2:]
    (r0, r1), (c0, c1) = sr_block_bounds(h, w, keep_fraction)
    k = mri.fft2c_array(z)
    block = np.zeros_like(k)
    block[..., r0:r1, c0:c1] = k[..., r0:r1, c0:c1]
    return mri.ifft2c_array(block)


@dataclass
class SensitivityLossField:
    """Smooth field g(r) in (0, 1] modelling lost coil sensitivity; the
    noise scale sigma(r) = sigma0 * (1 + alpha * (1 - g(r))) grows as g drops."""

    g: np.ndarray
    sigma0: float
    alpha: float
    anchor: tuple = field(default=(0, 0))

    def sigma(self) -> np.ndarray:
        return self.sigma0 * (1.0 + self.alpha * (1.0 - self.g))


def make_g_field(height: int, width: int, seed: int, sigma0: float = 0.05,
                 alpha: float = 3.0, g_min: float = 0.3) -> SensitivityLossField:
    """Anchored Gaussian falloff: g = g_min + (1-g_min) * exp(-d^2 / (2 tau^2))
    with d the distance to a random border pixel and tau = 0.4 * min(H, W)."""
    rng = np.random.default_rng([seed, 11])
    side = int(rng.integers(0, 4))
    if side == 0:
        anchor = (0, int(rng.integers(0, width)))
    elif side == 1:
        anchor = (height - 1, int(rng.integers(0, width)))
    elif side == 2:
        anchor = (int(rng.integers(0, height)), 0)
    else:
        anchor = (int(rng.integers(0, height)), width - 1)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    d2 = (yy - anchor[0]) ** 2 + (xx - anchor[1]) ** 2
    tau = 0.4 * min(height, width)
    g = g_min + (1.0 - g_min) * np.exp(-d2 / (2.0 * tau ** 2))
    return SensitivityLossField(g, sigma0, alpha, anchor)


def degrade_denoise(x: np.ndarray, lossfield: SensitivityLossField, seed: int) -> np.ndarray:
    """y(r) = g(r) x(r) + sigma(r) n(r) with i.i.d. standard Gaussian n."""
    rng = np.random.default_rng([seed, 13])
    noise = rng.standard_normal(x.shape)
    return lossfield.g * np.asarray(x, dtype=np.float64) + lossfield.sigma() * noise


@dataclass
class TaskSample:
    """One degraded/clean pair.  ``clean`` and ``degraded`` share spatial
    extents; for recon ``clean`` is a complex image and ``degraded`` the
    undersampled k-space."""

    index: int
    task: str
    clean: np.ndarray
    degraded: np.ndarray
    mask: mri.SamplingMask | None = None
    coils: mri.CoilSensitivities | None = None
    g: np.ndarray | None = None


@dataclass
class DatasetParams:
    task: str
    size: int
    seed: int
    n_ellipses: int = 8
    acceleration: int = 4
    center_fraction: float = 0.08
    noise_sigma: float = 0.0
    coils: int = 1
    keep_fraction: float = 0.0625
    sigma0: float = 0.05
    alpha: float = 3.0


def _sample_seed(base_seed: int, split: str, index: int) -> int:
    split_tag = {"train": 1, "val": 2, "test": 3}[split]
    return (int(base_seed) * 1000003 + split_tag * 7919 + index) % (2 ** 63)


def generate_dataset(root, params: DatasetParams, n_train: int, n_val: int, n_test: int) -> Path:
    """Write the dataset tree and manifest; byte-identical for equal inputs."""
    if params.task not in TASKS:
        raise ValueError(f"unknown task {params.task!r}")
    root = Path(root)
    task_dir = root / params.task
    task_dir.mkdir(parents=True, exist_ok=True)
    manifest = [
        f"task={params.task} h={params.size} w={params.size} seed={params.seed} "
        f"n_ellipses={params.n_ellipses} accel={params.acceleration} "
        f"center_frac={params.center_fraction} noise_sigma={params.noise_sigma} "
        f"coils={params.coils} keep_frac={params.keep_fraction} "
        f"sigma0={params.sigma0} alpha={params.alpha}"
    ]
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        split_dir = task_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for index in range(count):
            seed = _sample_seed(params.seed, split, index)
            _write_sample(split_dir, index, seed, params)
            manifest.append(f"split={split} index={index} seed={seed}")
    (task_dir / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return task_dir


def _write_sample(split_dir: Path, index: int, seed: int, params: DatasetParams) -> None:
    h = w = params.size
    phantom = make_phantom(PhantomSpec((h, w), params.n_ellipses, seed))
    if params.task == "recon":
        mask = mri.generate_mask(w, params.acceleration, params.center_fraction, seed)
        coils = (mri.make_coil_maps(params.coils, h, w, seed) if params.coils > 1
                 else mri.uniform_coil(h, w))
        kspace = degrade_recon(phantom.astype(np.complex128), coils, mask,
                               params.noise_sigma, seed)
        fileio.write_tensor(split_dir / f"{index}.mrt", phantom.astype(np.complex64))
        fileio.write_tensor(split_dir / f"{index}.deg.mrt", kspace.astype(np.complex64))
        fileio.write_tensor(split_dir / f"{index}.aux.mrt", mask.as_floats())
    elif params.task == "sr":
        low = np.abs(degrade_sr(phantom, params.keep_fraction))
        fileio.write_tensor(split_dir / f"{index}.mrt", phantom.astype(np.float32))
        fileio.write_tensor(split_dir / f"{index}.deg.mrt", low.astype(np.float32))
    else:
        lossfield = make_g_field(h, w, seed, params.sigma0, params.alpha)
        noisy = degrade_denoise(phantom, lossfield, seed)
        fileio.write_tensor(split_dir / f"{index}.mrt", phantom.astype(np.float32))
        fileio.write_tensor(split_dir / f"{index}.deg.mrt", noisy.astype(np.float32))
        fileio.write_tensor(split_dir / f"{index}.aux.mrt", lossfield.g.astype(np.float32))


def read_manifest(task_dir) -> dict:
    lines = (Path(task_dir) / "manifest.txt").read_text(encoding="utf-8").splitlines()
    header = {}
    for token in lines[0].split():
        key, _, value = token.partition("=")
        header[key] = value
    return header


def load_split(root, task: str, split: str) -> list:
    """Load every sample of a split, ordered by index."""
    split_dir = Path(root) / task / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"missing dataset split directory: {split_dir}")
    header = read_manifest(Path(root) / task)
    indices = sorted(int(p.name.split(".")[0]) for p in split_dir.glob("*.mrt")
                     if p.name.count(".") == 1)
    samples = []
    for index in indices:
        clean = fileio.read_tensor(split_dir / f"{index}.mrt")
        degraded = fileio.read_tensor(split_dir / f"{index}.deg.mrt")
        sample = TaskSample(index=index, task=task, clean=clean, degraded=degraded)
        if task == "recon":
            aux = fileio.read_tensor(split_dir / f"{index}.aux.mrt")
            sample.mask = mri.mask_from_floats(aux, int(header["accel"]),
                                               float(header["center_frac"]))
            n_coils = int(header["coils"])
            h, w = clean.shape[-2:]
            if n_coils > 1:
                seed = _sample_seed(int(header["seed"]), split, index)
                sample.coils = mri.make_coil_maps(n_coils, h, w, seed)
            else:
                sample.coils = mri.uniform_coil(h, w)
        elif task == "denoise":
            sample.g = fileio.read_tensor(split_dir / f"{index}.aux.mrt")
        samples.append(sample)
    return samples
