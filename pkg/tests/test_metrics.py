import math

import numpy as np
import pytest

from gatemri import metrics
from gatemri.metrics import (MetricsReport, VolumePair, build_report, nmse, psnr,
                             read_metrics_csv, rmse, ssim, ssim_slice_wise,
                             ssim_volumetric)
from gatemri.reference import (naive_ssim, naive_ssim_slice_wise,
                               naive_ssim_volumetric)


def test_psnr_examples():
    x = np.zeros((8, 8))
    assert psnr(x, x, peak=1.0) == math.inf
    assert psnr(np.full((8, 8), 0.1), x, peak=1.0) == pytest.approx(20.0, abs=1e-12)
    # halving the error adds 20*log10(2) dB
    e1 = psnr(np.full((8, 8), 0.1), x, peak=1.0)
    e2 = psnr(np.full((8, 8), 0.05), x, peak=1.0)
    assert e2 - e1 == pytest.approx(20.0 * math.log10(2.0), abs=1e-9)
    with pytest.raises(ValueError):
        psnr(x, x, peak=0.0)


def test_nmse_examples():
    rng = np.random.default_rng(0)
    x = rng.random((6, 6)) + 0.1
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros_like(x), x) == pytest.approx(1.0)
    assert nmse(2.0 * x, x) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nmse(x, np.zeros_like(x))


def test_nmse_scale_invariance_and_rmse():
    rng = np.random.default_rng(1)
    ref = rng.random((6, 6)) + 0.5
    est = ref + 0.1 * rng.standard_normal((6, 6))
    assert nmse(3.0 * est, 3.0 * ref) == pytest.approx(nmse(est, ref))
    assert rmse(est, ref) == pytest.approx(np.sqrt(np.mean((est - ref) ** 2)))
    assert rmse(ref, ref) == 0.0


def test_psnr_joint_scale_invariance_with_max_peak():
    rng = np.random.default_rng(2)
    ref = rng.random((6, 6)) + 0.5
    est = ref + 0.05 * rng.standard_normal((6, 6))
    a = psnr(est, ref, peak=ref.max())
    b = psnr(4.0 * est, 4.0 * ref, peak=(4.0 * ref).max())
    assert a == pytest.approx(b, abs=1e-9)


def test_ssim_identical_is_one():
    rng = np.random.default_rng(3)
    a = rng.random((9, 9))
    assert ssim(a, a, data_range=1.0) == pytest.approx(1.0)


def test_ssim_constant_patch_closed_form():
    c, delta = 0.4, 0.2
    a = np.full((9, 9), c)
    b = np.full((9, 9), c + delta)
    c1 = (0.01 * 1.0) ** 2
    expected = (2 * c * (c + delta) + c1) / (c ** 2 + (c + delta) ** 2 + c1)
    assert ssim(a, b, data_range=1.0) == pytest.approx(expected, abs=1e-12)


def test_ssim_matches_brute_force_windows():
    rng = np.random.default_rng(4)
    a = rng.random((9, 9))
    b = rng.random((9, 9))
    assert abs(ssim(a, b, 1.0) - naive_ssim(a, b, 1.0)) < 1e-9


def test_ssim_symmetry_with_fixed_range():
    rng = np.random.default_rng(5)
    a, b = rng.random((9, 9)), rng.random((9, 9))
    assert ssim(a, b, 1.0) == pytest.approx(ssim(b, a, 1.0), abs=1e-12)


def test_ssim_rejects_small_images_and_bad_range():
    with pytest.raises(ValueError):
        ssim(np.ones((5, 5)), np.ones((5, 5)), 1.0)
    with pytest.raises(ValueError):
        ssim(np.ones((9, 9)), np.ones((9, 9)), 0.0)


def make_two_slice_pair(noise=0.05):
    rng = np.random.default_rng(6)
    ref = np.stack([rng.random((9, 9)) * 0.5, rng.random((9, 9))])
    ref[0, 0, 0] = 0.5  # pin the slice maxima to 0.5 and 1.0
    ref[1, 0, 0] = 1.0
    est = ref + noise * rng.standard_normal(ref.shape)
    return VolumePair("v0", ref, est)


def test_slice_wise_two_slice_hand_average():
    pair = make_two_slice_pair()
    value, skipped = ssim_slice_wise(pair)
    by_hand = 0.5 * (naive_ssim(pair.estimate[0], pair.reference[0], 0.5) +
                     naive_ssim(pair.estimate[1], pair.reference[1], 1.0))
    assert skipped == 0
    assert value == pytest.approx(by_hand, abs=1e-9)


def test_dual_protocols_differ_and_match_oracles():
    pair = make_two_slice_pair()
    slice_value, _ = ssim_slice_wise(pair)
    vol_value = ssim_volumetric(pair)
    assert abs(slice_value - naive_ssim_slice_wise(pair.reference, pair.estimate)) < 1e-9
    assert abs(vol_value - naive_ssim_volumetric(pair.reference, pair.estimate)) < 1e-9
    assert abs(slice_value - vol_value) > 1e-6


def test_protocols_agree_for_single_slice_volume():
    rng = np.random.default_rng(7)
    ref = rng.random((1, 9, 9))
    est = ref + 0.02 * rng.standard_normal(ref.shape)
    pair = VolumePair("v", ref, est)
    slice_value, _ = ssim_slice_wise(pair)
    assert slice_value == pytest.approx(ssim_volumetric(pair), abs=1e-12)


def test_protocols_agree_when_slice_maxima_equal_volume_max():
    rng = np.random.default_rng(8)
    ref = rng.random((3, 9, 9))
    ref[:, 0, 0] = 1.0  # same maximum in every slice
    est = ref + 0.03 * rng.standard_normal(ref.shape)
    pair = VolumePair("v", ref, est)
    slice_value, _ = ssim_slice_wise(pair)
    assert slice_value == pytest.approx(ssim_volumetric(pair), abs=1e-12)


def test_identical_volume_ideal_values():
    rng = np.random.default_rng(9)
    ref = rng.random((2, 9, 9))
    pair = VolumePair("v", ref, ref.copy())
    slice_value, _ = ssim_slice_wise(pair)
    assert slice_value == pytest.approx(1.0)
    assert ssim_volumetric(pair) == pytest.approx(1.0)
    vm, _ = metrics.volume_metrics(pair)
    assert vm.psnr == math.inf and vm.nmse == 0.0 and vm.rmse == 0.0


def test_zero_slices_skipped_with_count():
    rng = np.random.default_rng(10)
    ref = np.concatenate([np.zeros((1, 9, 9)), rng.random((2, 9, 9))])
    est = ref + 0.01
    value, skipped = ssim_slice_wise(VolumePair("v", ref, est))
    assert skipped == 1 and 0.0 < value <= 1.0
    with pytest.raises(ValueError):
        ssim_slice_wise(VolumePair("v", np.zeros((2, 9, 9)), est[:2]))
    with pytest.raises(ValueError):
        ssim_volumetric(VolumePair("v", np.zeros((2, 9, 9)), est[:2]))


def test_volumetric_3d_windows():
    rng = np.random.default_rng(11)
    ref = rng.random((7, 8, 8))
    est = ref + 0.04 * rng.standard_normal(ref.shape)
    pair = VolumePair("v", ref, ref.copy())
    assert ssim_volumetric(pair, windows="3d") == pytest.approx(1.0)

    value = ssim_volumetric(VolumePair("v", ref, est), windows="3d")
    # brute-force 3D window oracle
    peak = ref.max()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(ref.shape[0] - 6):
        for j in range(ref.shape[1] - 6):
            for k in range(ref.shape[2] - 6):
                wa = ref[i:i + 7, j:j + 7, k:k + 7].reshape(-1)
                wb = est[i:i + 7, j:j + 7, k:k + 7].reshape(-1)
                mu_a, mu_b = wa.mean(), wb.mean()
                va, vb = np.var(wa, ddof=1), np.var(wb, ddof=1)
                vab = ((wa - mu_a) * (wb - mu_b)).sum() / (wa.size - 1)
                vals.append((2 * mu_a * mu_b + c1) * (2 * vab + c2) /
                            ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    assert value == pytest.approx(np.mean(vals), abs=1e-9)


def test_report_average_is_mean_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    pairs = []
    for v in range(3):
        ref = rng.random((2, 9, 9))
        est = ref + 0.05 * rng.standard_normal(ref.shape)
        pairs.append(VolumePair(f"vol{v:03d}", ref, est))
    report = build_report(pairs)
    for name in MetricsReport.METRIC_NAMES:
        per_volume = [getattr(v, name) for v in report.volumes]
        assert report.average(name) == pytest.approx(np.mean(per_volume))

    path = tmp_path / "metrics.csv"
    report.write_csv(path)
    rows, average = read_metrics_csv(path)
    assert [r["volume"] for r in rows] == ["vol000", "vol001", "vol002"]
    for name in MetricsReport.METRIC_NAMES:
        assert average[name] == report.average(name)  # repr round-trips exactly
