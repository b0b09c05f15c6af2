"""Image quality metrics: PSNR, NMSE, RMSE and SSIM under two aggregation
protocols.

Slice-wise SSIM scores every slice against its own maximum and averages the
slices; volumetric SSIM scores all windows of the whole volume under a
single shared data range (the volume maximum).  Windows are 7x7 uniform 2D
windows by default; full 3D windows are available as an option and reports
record which was used.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 7


def psnr(estimate: np.ndarray, reference: np.ndarray, peak: float) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    err = np.asarray(estimate, np.float64) - np.asarray(reference, np.float64)
    mse = float(np.mean(err * err))
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def nmse(estimate: np.ndarray, reference: np.ndarray) -> float:
    ref = np.asarray(reference, np.float64)
    denom = float(np.sum(ref * ref))
    if denom == 0.0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    err = np.asarray(estimate, np.float64) - ref
    return float(np.sum(err * err) / denom)


def rmse(estimate: np.ndarray, reference: np.ndarray) -> float:
    err = np.asarray(estimate, np.float64) - np.asarray(reference, np.float64)
    return float(np.sqrt(np.mean(err * err)))


def _window_ssim(wa: np.ndarray, wb: np.ndarray, data_range: float) -> np.ndarray:
    """SSIM per window; wa/wb are (..., n_window_values) float64 stacks.

    Uses unbiased (n-1) covariance normalization, the public-benchmark
    convention.
    """
    n = wa.shape[-1]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = wa.mean(axis=-1)
    mu_b = wb.mean(axis=-1)
    da = wa - mu_a[..., None]
    db = wb - mu_b[..., None]
    cov_norm = 1.0 / (n - 1)
    va = (da * da).sum(axis=-1) * cov_norm
    vb = (db * db).sum(axis=-1) * cov_norm
    vab = (da * db).sum(axis=-1) * cov_norm
    return ((2 * mu_a * mu_b + c1) * (2 * vab + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))


def _windows_2d(img: np.ndarray, win: int) -> np.ndarray:
    v = sliding_window_view(img, (win, win))
    return v.reshape(v.shape[0], v.shape[1], win * win)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM of a 2D pair over valid uniform windows."""
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} smaller than {win}x{win} window")
    values = _window_ssim(_windows_2d(a, win), _windows_2d(b, win), data_range)
    return float(values.mean())


def ssim_volume_windows(ref: np.ndarray, est: np.ndarray, data_range: float,
                        win: int = SSIM_WINDOW, windows: str = "2d") -> float:
    """Mean SSIM over all windows of an (S, H, W) volume under one shared
    data range.  ``windows='2d'`` slides per slice; ``'3d'`` slides a cubic
    window through the volume."""
    ref = np.asarray(ref, np.float64)
    est = np.asarray(est, np.float64)
    if windows == "2d":
        per_slice = [
            _window_ssim(_windows_2d(ref[s], win), _windows_2d(est[s], win), data_range)
            for s in range(ref.shape[0])]
        return float(np.concatenate([v.reshape(-1) for v in per_slice]).mean())
    if windows == "3d":
        if ref.shape[0] < win:
            raise ValueError(f"volume depth {ref.shape[0]} smaller than {win} for 3d windows")
        wa = sliding_window_view(ref, (win, win, win)).reshape(-1, win ** 3)
        wb = sliding_window_view(est, (win, win, win)).reshape(-1, win ** 3)
        return float(_window_ssim(wa, wb, data_range).mean())
    raise ValueError(f"unknown window mode {windows!r}")


@dataclass
class VolumePair:
    """Reference and estimate stacks (S, H, W) for one volume."""

    volume_id: str
    reference: np.ndarray
    estimate: np.ndarray

    def __post_init__(self):
        if self.reference.shape != self.estimate.shape:
            raise ValueError(
                f"volume {self.volume_id}: shapes differ "
                f"{self.reference.shape} vs {self.estimate.shape}")
        if self.reference.ndim != 3 or self.reference.shape[0] < 1:
            raise ValueError(f"volume {self.volume_id}: expected (S, H, W) stack")


def ssim_slice_wise(pair: VolumePair, win: int = SSIM_WINDOW):
    """Per-slice SSIM with each slice's own max as data range, averaged.

    Slices whose reference maximum is zero are skipped; returns
    (value, skipped_count).
    """
    values = []
    skipped = 0
    for s in range(pair.reference.shape[0]):
        peak = float(pair.reference[s].max())
        if peak <= 0:
            skipped += 1
            continue
        values.append(ssim(pair.estimate[s], pair.reference[s], peak, win))
    if not values:
        raise ValueError(f"volume {pair.volume_id}: every slice has a zero maximum")
    return float(np.mean(values)), skipped


def ssim_volumetric(pair: VolumePair, win: int = SSIM_WINDOW, windows: str = "2d") -> float:
    """SSIM of the whole volume under a single data range (the volume max)."""
    peak = float(pair.reference.max())
    if peak <= 0:
        raise ValueError(f"volume {pair.volume_id}: zero volume maximum")
    return ssim_volume_windows(pair.reference, pair.estimate, peak, win, windows)


@dataclass
class VolumeMetrics:
    volume_id: str
    psnr: float
    ssim_slice: float
    ssim_vol: float
    nmse: float
    rmse: float


@dataclass
class MetricsReport:
    """Per-volume metrics plus their cross-volume arithmetic means."""

    volumes: list
    ssim_windows: str = "2d"
    skipped_slices: int = 0
    input_digest: str = ""
    method: str = ""

    METRIC_NAMES = ("psnr", "ssim_slice", "ssim_vol", "nmse", "rmse")

    def average(self, name: str) -> float:
        return float(np.mean([getattr(v, name) for v in self.volumes]))

    def averages(self) -> dict:
        return {name: self.average(name) for name in self.METRIC_NAMES}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("volume",) + self.METRIC_NAMES)
            for v in self.volumes:
                writer.writerow([v.volume_id] + [repr(getattr(v, m)) for m in self.METRIC_NAMES])
            writer.writerow(["AVERAGE"] + [repr(self.average(m)) for m in self.METRIC_NAMES])


def read_metrics_csv(path):
    """Read a metrics CSV; returns (volume rows, average row) as dicts."""
    rows = []
    average = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            parsed = {"volume": row["volume"]}
            for name in MetricsReport.METRIC_NAMES:
                parsed[name] = float(row[name])
            if row["volume"] == "AVERAGE":
                average = parsed
            else:
                rows.append(parsed)
    if average is None:
        raise ValueError(f"metrics CSV {path} has no AVERAGE row")
    return rows, average


def volume_metrics(pair: VolumePair, peak: float | None = None,
                   windows: str = "2d"):
    """All metrics for one volume; PSNR peak defaults to the reference max."""
    if peak is None:
        peak = float(pair.reference.max())
    slice_value, skipped = ssim_slice_wise(pair)
    return VolumeMetrics(
        volume_id=pair.volume_id,
        psnr=psnr(pair.estimate, pair.reference, peak),
        ssim_slice=slice_value,
        ssim_vol=ssim_volumetric(pair, windows=windows),
        nmse=nmse(pair.estimate, pair.reference),
        rmse=rmse(pair.estimate, pair.reference),
    ), skipped


def build_report(pairs, windows: str = "2d", method: str = "", input_digest: str = "") -> MetricsReport:
    volumes = []
    skipped = 0
    for pair in pairs:
        vm, sk = volume_metrics(pair, windows=windows)
        volumes.append(vm)
        skipped += sk
    return MetricsReport(volumes, ssim_windows=windows, skipped_slices=skipped,
                         input_digest=input_digest, method=method)
