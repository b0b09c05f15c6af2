"""End-to-end acceptance suite.

Each criterion is one test that prints a single pass/fail line.  The
desk-scale experiments (criteria 7-9) run the full pipeline twice with
identical seeds inside a session fixture; the second pass only feeds the
determinism criterion.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from gatemri import cli, degrade, metrics, mri
from gatemri.blocks import (BackboneConfig, BlockConfig, GatedBlock, LsConvConfig,
                            lsconv_aggregate)
from gatemri.reference import (fd_gradient, naive_lsconv_aggregate, naive_ssim_slice_wise,
                               naive_ssim_volumetric, rel_err)
from gatemri.tensor import (Tensor, absolute, add, backward, conv2d, layer_norm, mul,
                            softmax, split_channels, tsum)
from gatemri.training import ExperimentConfig, evaluate_split, load_model, train
from gatemri.unrolled import UnrolledConfig, UnrolledModel, dc_step, unroll_forward


def report(criterion: int, passed: bool, detail: str):
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def pair_rand(rng, shape):
    return rng.standard_normal(shape + (2,))


def cinner(a, b):
    return np.vdot(mri.from_pairs(a).reshape(-1), mri.from_pairs(b).reshape(-1))


def test_criterion_1_operator_adjoints():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    worst = 0.0
    for trial in range(100):
        x = pair_rand(rng, (8, 8))
        y = pair_rand(rng, (8, 8))
        lhs = cinner(mri.fft2c(Tensor(x)).data, y)
        rhs = cinner(x, mri.ifft2c(Tensor(y)).data)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))

        mask = mri.generate_mask(8, 2, 0.25, trial)
        lhs = cinner(mri.apply_mask(Tensor(x), mask).data, y)
        rhs = cinner(x, mri.apply_mask(Tensor(y), mask).data)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))

        coils = mri.make_coil_maps(3, 8, 8, trial)
        yc = pair_rand(rng, (3, 8, 8))
        lhs = cinner(mri.expand(Tensor(x), coils).data, yc)
        rhs = cinner(x, mri.reduce(Tensor(yc), coils).data)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-5 and elapsed < 10.0,
           f"adjoints over 100 trials, max rel err {worst:.2e}, {elapsed:.1f}s")


def _fd_check_params(module_like, forward, names=None, h=1e-4):
    params = module_like.param_map()
    names = sorted(params) if names is None else names
    worst = 0.0
    for name in names:
        p = params[name]

        def loss_at(values, p=p):
            saved = p.data.copy()
            p.data = values.reshape(p.data.shape)
            out = forward()
            p.data = saved
            return float((out.data ** 2).sum())

        module_like.zero_grad()
        out = forward()
        backward(tsum(mul(out, out)))
        fd = fd_gradient(loss_at, p.data.copy(), h)
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, rel_err(grad, fd))
    return worst


def test_criterion_2_autodiff_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    worst = 0.0

    # every differentiable primitive on random real64 inputs
    x = rng.standard_normal((2, 4, 6, 6))
    other = rng.standard_normal((2, 4, 6, 6))
    w_full = rng.standard_normal((4, 4, 3, 3))
    w_dw = rng.standard_normal((4, 1, 3, 3))
    gamma, beta = rng.standard_normal(4), rng.standard_normal(4)
    primitives = {
        "add": lambda t: add(t, Tensor(other)),
        "mul": lambda t: mul(t, Tensor(other)),
        "conv2d": lambda t: conv2d(t, Tensor(w_full)),
        "conv2d_grouped": lambda t: conv2d(t, Tensor(w_dw), groups=4),
        "layer_norm": lambda t: layer_norm(t, Tensor(gamma), Tensor(beta)),
        "split": lambda t: split_channels(t)[1],
        "abs": lambda t: absolute(t),
        "softmax": lambda t: softmax(t, 1),
        "fft2c": lambda t: mri.fft2c(t),
    }
    for name, op in primitives.items():
        arg = x if name != "fft2c" else rng.standard_normal((6, 6, 2))

        def loss_at(values, op=op):
            return float((op(Tensor(values)).data ** 2).sum())

        t = Tensor(arg, requires_grad=True)
        backward(tsum(mul(op(t), op(t))))
        fd = fd_gradient(loss_at, arg.copy())
        worst = max(worst, rel_err(t.grad, fd))

    # full gated blocks, both mixers, every parameter
    for mixer in ("local_dw3", "lsconv"):
        block = GatedBlock(BlockConfig(4, mixer), np.random.default_rng(201),
                           LsConvConfig(groups=2), dtype=np.float64)
        xin = Tensor(rng.standard_normal((1, 4, 6, 6)), dtype=np.float64)
        worst = max(worst, _fd_check_params(block, lambda: block(xin)))

    # T=2 unrolled cascade, spot-checked parameters plus mu
    bb = BackboneConfig(width=2, enc_blocks=(1,), middle_blocks=1, dec_blocks=(1,),
                        in_channels=2, out_channels=2)
    model = UnrolledModel(UnrolledConfig(T=2, backbone=bb), seed=202, dtype=np.float64)
    params = model.param_map()
    for name in sorted(params):
        p = params[name]
        p.data = p.data + 0.2 * rng.standard_normal(p.data.shape)
    mask = mri.generate_mask(8, 2, 0.25, 203)
    coils = mri.uniform_coil(8, 8)
    k_meas = Tensor(pair_rand(rng, (1, 8, 8)), dtype=np.float64)
    k0 = Tensor(pair_rand(rng, (1, 8, 8)), dtype=np.float64)
    cascade_names = sorted(params)[::11] + ["backbones.1.ending.weight", "mus.0"]
    worst = max(worst, _fd_check_params(
        model, lambda: unroll_forward(k0, k_meas, mask, coils, model),
        names=cascade_names))

    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-3 and elapsed < 120.0,
           f"finite differences on primitives, blocks and cascade, "
           f"max rel err {worst:.2e}, {elapsed:.0f}s")


def test_criterion_3_data_consistency_semantics():
    rng = np.random.default_rng(300)
    # one dc step with mu = 1 pins sampled columns to the measurements
    k = pair_rand(rng, (1, 8, 8))
    k_meas = pair_rand(rng, (1, 8, 8))
    mask = mri.generate_mask(8, 2, 0.25, 301)
    out = dc_step(Tensor(k), Tensor(k_meas), mask, Tensor(np.float64(1.0))).data
    dc_exact = np.abs(out[:, :, mask.kept] - k_meas[:, :, mask.kept]).max() == 0.0

    # full mask, zero noise, zeroed correction: exact recovery
    phantom = degrade.make_phantom(degrade.PhantomSpec((16, 16), 5, 302))
    coils = mri.uniform_coil(16, 16)
    full = mri.SamplingMask(16, np.ones(16, bool), 1, 0.5)
    k_full = degrade.degrade_recon(phantom.astype(np.complex128), coils, full, 0.0, 0)
    bb = BackboneConfig(width=2, enc_blocks=(1,), middle_blocks=1, dec_blocks=(1,),
                        in_channels=2, out_channels=2)
    model = UnrolledModel(UnrolledConfig(T=4, backbone=bb), seed=303, dtype=np.float64)
    image = unroll_forward(None, Tensor(mri.to_pairs(k_full, np.float64)), full,
                           coils, model).data
    err = rel_err(image, mri.to_pairs(phantom.astype(np.complex128), np.float64))
    report(3, dc_exact and err < 1e-6,
           f"sampled columns exact, full-mask recovery rel err {err:.2e}")


def test_criterion_4_dynamic_aggregation_oracle():
    worst = 0.0
    for n in (1, 2):
        for c in (2, 4, 8):
            for groups in (1, 2, 4):
                if c % groups:
                    continue
                rng = np.random.default_rng([400, n, c, groups])
                for h, w in ((5, 6), (6, 6)):
                    x = rng.standard_normal((n, c, h, w))
                    dyn = rng.standard_normal((n, groups * 9, h, w))
                    fast = lsconv_aggregate(Tensor(x), Tensor(dyn),
                                            LsConvConfig(groups=groups)).data
                    worst = max(worst, rel_err(fast, naive_lsconv_aggregate(x, dyn, groups, 3)))
    # delta kernels reproduce the input exactly
    rng = np.random.default_rng(401)
    x = rng.standard_normal((2, 8, 6, 6))
    delta = np.zeros((2, 4 * 9, 6, 6))
    for g in range(4):
        delta[:, g * 9 + 4] = 1.0
    out = lsconv_aggregate(Tensor(x), Tensor(delta), LsConvConfig(groups=4)).data
    exact = np.array_equal(out, x)
    report(4, worst < 1e-6 and exact,
           f"loop-oracle sweep max rel err {worst:.2e}, delta identity exact={exact}")


def test_criterion_5_sr_degradation():
    rng = np.random.default_rng(500)
    x = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    z = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    once = degrade.degrade_sr(x, 0.0625)
    idem = rel_err(mri.to_pairs(degrade.degrade_sr(once, 0.0625), np.float64),
                   mri.to_pairs(once, np.float64))
    lin = rel_err(
        mri.to_pairs(degrade.degrade_sr(2.0 * x + z, 0.0625), np.float64),
        mri.to_pairs(2.0 * degrade.degrade_sr(x, 0.0625) + degrade.degrade_sr(z, 0.0625),
                     np.float64))
    (r0, r1), (c0, c1) = degrade.sr_block_bounds(320, 320, 0.0625)
    block_ok = (r1 - r0, c1 - c0) == (80, 80)
    report(5, idem < 1e-6 and lin < 1e-6 and block_ok,
           f"idempotence {idem:.2e}, linearity {lin:.2e}, 320^2 block "
           f"{(r1 - r0)}x{(c1 - c0)}")


def test_criterion_6_ssim_protocols():
    rng = np.random.default_rng(600)
    ref = np.stack([rng.random((12, 12)) * 0.5, rng.random((12, 12))])
    ref[0, 0, 0] = 0.5
    ref[1, 0, 0] = 1.0
    est = ref + 0.05 * rng.standard_normal(ref.shape)
    pair = metrics.VolumePair("v0", ref, est)
    slice_value, _ = metrics.ssim_slice_wise(pair)
    vol_value = metrics.ssim_volumetric(pair)
    err_s = abs(slice_value - naive_ssim_slice_wise(ref, est))
    err_v = abs(vol_value - naive_ssim_volumetric(ref, est))
    differ = abs(slice_value - vol_value) > 1e-6
    report(6, err_s < 1e-9 and err_v < 1e-9 and differ,
           f"slice-wise err {err_s:.1e}, volumetric err {err_v:.1e}, "
           f"protocols differ by {abs(slice_value - vol_value):.2e}")


# ---------------------------------------------------------------------------
# desk-scale experiments (criteria 7-9)

RECON_CFG = dict(task="recon", model="naf", width=16, enc_blocks=(1, 1),
                 middle_blocks=1, dec_blocks=(1, 1), unroll_T=8, epochs=5,
                 batch_size=2, seed=5)
SR_CFG = dict(task="sr", width=16, enc_blocks=(1, 1), middle_blocks=1,
              dec_blocks=(1, 1), epochs=8, batch_size=4, seed=5)
DENOISE_CFG = dict(task="denoise", width=16, enc_blocks=(1, 1), middle_blocks=1,
                   dec_blocks=(1, 1), epochs=5, batch_size=4, seed=5)


def run_desk_pass(root: Path) -> dict:
    out = {"wall": {}, "train": {}, "eval_csv": {}, "logs": {}}
    datasets = {
        "recon": degrade.DatasetParams(task="recon", size=64, seed=11,
                                       acceleration=4, center_fraction=0.08),
        "sr": degrade.DatasetParams(task="sr", size=64, seed=11, keep_fraction=0.0625),
        "denoise": degrade.DatasetParams(task="denoise", size=64, seed=11),
    }
    n_train = {"recon": 48, "sr": 64, "denoise": 48}
    for task, params in datasets.items():
        degrade.generate_dataset(root / "data", params, n_train[task], 64, 0)

    jobs = [("recon-naf", dict(RECON_CFG)),
            ("sr-naf", dict(SR_CFG, model="naf")),
            ("sr-lsg", dict(SR_CFG, model="lsg")),
            ("denoise-naf", dict(DENOISE_CFG, model="naf")),
            ("denoise-lsg", dict(DENOISE_CFG, model="lsg"))]
    for name, overrides in jobs:
        cfg = ExperimentConfig(data_root=str(root / "data"), **overrides)
        t0 = time.perf_counter()
        result = train(cfg, root / name)
        out["wall"][name] = time.perf_counter() - t0
        out["train"][name] = result
        out["logs"][name] = [",".join(r.split(",")[:3]) for r in result.log_rows]
        model, loaded_cfg = load_model(result.best_path)
        csv_path = root / f"{name}.csv"
        evaluate_split(model, loaded_cfg, "val", method=name).write_csv(csv_path)
        out["eval_csv"][name] = csv_path

    for task in ("sr", "denoise"):
        cfg = ExperimentConfig(data_root=str(root / "data"),
                               **(SR_CFG if task == "sr" else DENOISE_CFG))
        csv_path = root / f"{task}-baseline.csv"
        evaluate_split(None, cfg, "val", method="input").write_csv(csv_path)
        out["eval_csv"][f"{task}-baseline"] = csv_path
    return out


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    root_a = tmp_path_factory.mktemp("desk_a")
    root_b = tmp_path_factory.mktemp("desk_b")
    first = run_desk_pass(root_a)
    second = run_desk_pass(root_b)
    return {"a": first, "b": second, "roots": (root_a, root_b)}


def test_criterion_7_desk_reconstruction(desk):
    result = desk["a"]["train"]["recon-naf"]
    wall = desk["a"]["wall"]["recon-naf"]
    gain = result.best_val_psnr - result.input_val_psnr
    n_val = len(degrade.load_split(result.best_path.parent.parent / "data", "recon", "val"))
    report(7, gain >= 3.0 and wall < 1800.0 and n_val >= 64,
           f"unrolled T=8 gain over zero-filled {gain:+.2f} dB on {n_val} "
           f"held-out slices in {wall:.0f}s")


def test_criterion_8_desk_sr_and_denoise(desk, tmp_path):
    details = []
    ok = True
    for name in ("sr-naf", "sr-lsg", "denoise-naf", "denoise-lsg"):
        result = desk["a"]["train"][name]
        wall = desk["a"]["wall"][name]
        gain = result.best_val_psnr - result.input_val_psnr
        ok &= gain >= 1.0 and wall < 1800.0 and not result.flagged_failed
        details.append(f"{name} {gain:+.2f} dB/{wall:.0f}s")

    for task in ("sr", "denoise"):
        out_dir = tmp_path / f"cmp_{task}"
        rc = cli.main(["compare",
                       "--runs", str(desk["a"]["eval_csv"][f"{task}-baseline"]),
                       str(desk["a"]["eval_csv"][f"{task}-naf"]),
                       str(desk["a"]["eval_csv"][f"{task}-lsg"]),
                       "--out", str(out_dir)])
        ok &= rc == 0
        ok &= (out_dir / "comparison.csv").exists()
        ET.parse(out_dir / "comparison.svg")  # raises if the SVG is malformed
        details.append(f"{task} compare ok")
    report(8, ok, "; ".join(details))


def test_criterion_9_determinism(desk):
    a, b = desk["a"], desk["b"]
    identical = True
    details = []
    for name in a["train"]:
        same_logs = a["logs"][name] == b["logs"][name]
        same_best = (repr(a["train"][name].best_val_psnr)
                     == repr(b["train"][name].best_val_psnr))
        identical &= same_logs and same_best
        details.append(f"{name}: logs={'=' if same_logs else '!'} "
                       f"best={'=' if same_best else '!'}")
    for name in a["eval_csv"]:
        same_csv = (Path(a["eval_csv"][name]).read_bytes()
                    == Path(b["eval_csv"][name]).read_bytes())
        identical &= same_csv
        if not same_csv:
            details.append(f"{name}: csv differs")
    report(9, identical, "bit-identical metrics across repeated runs; " + "; ".join(details))
