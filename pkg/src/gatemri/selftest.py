"""Built-in invariant suite behind the ``selftest`` command.

Each check returns (name, passed, detail).  The suite covers operator
adjoints, finite-difference gradient checks, the gate and dynamic-kernel
identities, the data-consistency fixed point, low-pass idempotence, and the
two SSIM protocols against the per-window reference.
"""

from __future__ import annotations

import numpy as np

from . import degrade, metrics, mri, reference
from .blocks import BackboneConfig, BlockConfig, GatedBlock, LsConvConfig, lsconv_aggregate
from .tensor import Tensor, backward, concat_channels, mul, split_channels, tsum
from .unrolled import UnrolledConfig, UnrolledModel, dc_step, unroll_forward


def _pair_rand(rng, shape):
    return rng.standard_normal(shape + (2,))


def _inner(a, b):
    za, zb = mri.from_pairs(a), mri.from_pairs(b)
    return np.vdot(za.reshape(-1), zb.reshape(-1))


def check_adjoints(seed: int = 0, trials: int = 25, size: int = 8) -> list:
    """<A x, y> == <x, A* y> for every linear operator pair."""
    rng = np.random.default_rng([seed, 1])
    results = []
    worst = {"fft2c": 0.0, "apply_mask": 0.0, "expand/reduce": 0.0}
    for _ in range(trials):
        x = _pair_rand(rng, (size, size))
        y = _pair_rand(rng, (size, size))
        lhs = _inner(mri.fft2c(Tensor(x)).data, y)
        rhs = _inner(x, mri.ifft2c(Tensor(y)).data)
        worst["fft2c"] = max(worst["fft2c"], abs(lhs - rhs) / max(abs(lhs), 1e-30))

        mask = mri.generate_mask(size, 2, 0.25, int(rng.integers(1 << 31)))
        lhs = _inner(mri.apply_mask(Tensor(x), mask).data, y)
        rhs = _inner(x, mri.apply_mask(Tensor(y), mask).data)
        worst["apply_mask"] = max(worst["apply_mask"], abs(lhs - rhs) / max(abs(lhs), 1e-30))

        coils = mri.make_coil_maps(3, size, size, int(rng.integers(1 << 31)))
        yc = _pair_rand(rng, (3, size, size))
        lhs = _inner(mri.expand(Tensor(x), coils).data, yc)
        rhs = _inner(x, mri.reduce(Tensor(yc), coils).data)
        worst["expand/reduce"] = max(worst["expand/reduce"], abs(lhs - rhs) / max(abs(lhs), 1e-30))
    for name, err in worst.items():
        results.append((f"adjoint {name}", err < 1e-5, f"max rel err {err:.3e}"))
    return results


def _grad_check_block(mixer: str, seed: int) -> float:
    rng = np.random.default_rng([seed, 2])
    cfg = BlockConfig(channels=4, mixer=mixer)
    block = GatedBlock(cfg, np.random.default_rng([seed, 3]),
                       LsConvConfig(groups=2), dtype=np.float64)
    x = rng.standard_normal((1, 4, 6, 6))
    worst = 0.0
    params = block.param_map()
    for name in sorted(params):
        p = params[name]

        def loss_at(values, p=p):
            saved = p.data.copy()
            p.data = values.reshape(p.data.shape)
            out = block(Tensor(x, dtype=np.float64))
            p.data = saved
            return float((out.data ** 2).sum())

        block.zero_grad()
        out = block(Tensor(x, dtype=np.float64))
        backward(_sum_sq(out))
        fd = reference.fd_gradient(loss_at, p.data.copy())
        worst = max(worst, reference.rel_err(p.grad, fd))
    return worst


def _sum_sq(t: Tensor) -> Tensor:
    return tsum(mul(t, t))


def check_gradients(seed: int = 0) -> list:
    results = []
    for mixer in ("local_dw3", "lsconv"):
        err = _grad_check_block(mixer, seed)
        results.append((f"gradient check {mixer} block", err < 1e-3, f"max rel err {err:.3e}"))
    err = _grad_check_cascade(seed)
    results.append(("gradient check unrolled cascade", err < 1e-3, f"max rel err {err:.3e}"))
    return results


def _grad_check_cascade(seed: int) -> float:
    rng = np.random.default_rng([seed, 4])
    bb = BackboneConfig(width=2, enc_blocks=(1,), middle_blocks=1, dec_blocks=(1,),
                        in_channels=2, out_channels=2)
    cfg = UnrolledConfig(T=2, backbone=bb)
    model = UnrolledModel(cfg, seed=[seed, 5], dtype=np.float64)
    size = 8
    mask = mri.generate_mask(size, 2, 0.25, seed)
    coils = mri.uniform_coil(size, size)
    k_meas = _pair_rand(rng, (1, size, size))
    k0 = _pair_rand(rng, (1, size, size))  # distinct start so mu carries gradient
    params = model.param_map()
    for name in sorted(params):  # perturb everything, incl. the zero-init endings
        p = params[name]
        p.data = p.data + 0.2 * rng.standard_normal(p.data.shape)
    names = sorted(params)[::7] + ["backbones.1.ending.weight", "mus.0", "mus.1"]
    worst = 0.0
    for name in names:
        p = params[name]

        def loss_at(values, p=p):
            saved = p.data.copy()
            p.data = values.reshape(p.data.shape)
            out = unroll_forward(Tensor(k0, dtype=np.float64),
                                 Tensor(k_meas, dtype=np.float64), mask, coils, model)
            p.data = saved
            return float((out.data ** 2).sum())

        model.zero_grad()
        out = unroll_forward(Tensor(k0, dtype=np.float64),
                             Tensor(k_meas, dtype=np.float64), mask, coils, model)
        backward(_sum_sq(out))
        fd = reference.fd_gradient(loss_at, p.data.copy())
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, reference.rel_err(grad, fd))
    return worst


def check_gate_identities(seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 6])
    z = Tensor(rng.standard_normal((2, 3, 4, 4)))
    ones = Tensor(np.ones_like(z.data))
    gated = mul(*split_channels(concat_channels([z, ones])))
    exact = np.array_equal(gated.data, z.data)
    results = [("simple gate SG([Z, 1]) == Z", exact, "exact equality")]

    x = rng.standard_normal((1, 4, 5, 5))
    cfg = LsConvConfig(k_small=3, groups=2)
    weights = np.zeros((1, 2 * 9, 5, 5))
    weights[:, 4] = 1.0  # center tap of group 0
    weights[:, 9 + 4] = 1.0
    out = lsconv_aggregate(Tensor(x), Tensor(weights), cfg)
    results.append(("lsconv delta kernels are identity",
                    np.array_equal(out.data, x), "exact equality"))

    wdyn = rng.standard_normal((1, 2 * 9, 5, 5))
    fast = lsconv_aggregate(Tensor(x), Tensor(wdyn), cfg).data
    slow = reference.naive_lsconv_aggregate(x, wdyn, 2, 3)
    err = reference.rel_err(fast, slow)
    results.append(("lsconv matches loop reference", err < 1e-6, f"rel err {err:.3e}"))
    return results


def check_dc_fixed_point(seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 8])
    size = 8
    mask = mri.generate_mask(size, 2, 0.25, seed)
    k = Tensor(_pair_rand(rng, (1, size, size)))
    k_meas = Tensor(_pair_rand(rng, (1, size, size)))
    out = dc_step(k, k_meas, mask, Tensor(np.float64(1.0)))
    kept = mask.kept
    ok_sampled = np.array_equal(out.data[:, :, kept], k_meas.data[:, :, kept])
    ok_rest = np.array_equal(out.data[:, :, ~kept], k.data[:, :, ~kept])
    return [("data consistency: sampled columns replaced at mu=1",
             ok_sampled and ok_rest, "exact column check")]


def check_sr_idempotence(seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 9])
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    once = degrade.degrade_sr(x, 0.25)
    twice = degrade.degrade_sr(once, 0.25)
    err = reference.rel_err(mri.to_pairs(once, np.float64), mri.to_pairs(twice, np.float64))
    return [("low-pass degradation idempotent", err < 1e-6, f"rel err {err:.3e}")]


def check_ssim_protocols(seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 10])
    ref = np.stack([rng.random((9, 9)) * 0.5, rng.random((9, 9))])
    ref[0, 0, 0] = 0.5
    ref[1, 0, 0] = 1.0
    est = ref + 0.05 * rng.standard_normal(ref.shape)
    pair = metrics.VolumePair("v", ref, est)
    slice_value, _ = metrics.ssim_slice_wise(pair)
    vol_value = metrics.ssim_volumetric(pair)
    err_s = abs(slice_value - reference.naive_ssim_slice_wise(ref, est))
    err_v = abs(vol_value - reference.naive_ssim_volumetric(ref, est))
    return [
        ("slice-wise SSIM matches reference", err_s < 1e-9, f"abs err {err_s:.2e}"),
        ("volumetric SSIM matches reference", err_v < 1e-9, f"abs err {err_v:.2e}"),
        ("protocols disagree when slice maxima differ",
         abs(slice_value - vol_value) > 1e-6, f"difference {abs(slice_value - vol_value):.3e}"),
    ]


def run_all(seed: int = 0) -> list:
    checks = []
    checks += check_adjoints(seed)
    checks += check_gradients(seed)
    checks += check_gate_identities(seed)
    checks += check_dc_fixed_point(seed)
    checks += check_sr_idempotence(seed)
    checks += check_ssim_protocols(seed)
    return checks
