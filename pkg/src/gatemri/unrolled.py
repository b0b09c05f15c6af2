"""T-step unrolled reconstruction alternating data consistency with a
learned image-domain correction.

Per iteration the k-space estimate is updated as

    k_next = k - mu * M (k - k_meas) + F E correction(R F^-1 k)

where M keeps the sampled columns, E/R are the coil expand/reduce pair and
the correction is produced by a gated-CNN backbone on the 2-channel re/im
image.  ``reg_mode`` selects what the backbone contributes: ``correction``
uses backbone(x) - x (zero at initialization, so the cascade starts as pure
data consistency), ``full`` injects backbone(x) itself, identity included.
The final image is R F^-1 of the last k-space estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import mri
from .blocks import Backbone, BackboneConfig, Module
from .tensor import Parameter, Tensor, sub

REG_MODES = ("correction", "full")


class DivergenceError(RuntimeError):
    """Raised when the cascade state stops being finite."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite k-space state at iteration {iteration}")
        self.iteration = iteration


@dataclass
class UnrolledConfig:
    T: int = 8
    mu_init: float = 1.0
    share_weights: bool = False
    learn_mu: bool = True
    reg_mode: str = "correction"
    backbone: BackboneConfig = dataclass_field(
        default_factory=lambda: BackboneConfig(in_channels=2, out_channels=2))


def dc_step(k: Tensor, k_meas: Tensor, mask: mri.SamplingMask, mu: Tensor) -> Tensor:
    """k - mu * M (k - k_meas); unsampled columns pass through unchanged.

    Evaluated as k - mu*M k + mu*M k_meas so that mu = 1 replaces sampled
    columns with the measurements exactly (bitwise) and mu = 0 is an exact
    no-op.
    """
    pulled = mu * mri.apply_mask(k, mask)
    injected = mu * mri.apply_mask(k_meas, mask)
    return sub(k, pulled) + injected


def reg_step(k: Tensor, coils: mri.CoilSensitivities, backbone: Backbone,
             reg_mode: str = "correction") -> Tensor:
    """Learned k-space correction term: reduce to the image, run the
    backbone on re/im channels, re-encode to coils and transform forward."""
    if reg_mode not in REG_MODES:
        raise ValueError(f"unknown reg_mode {reg_mode!r}")
    image = mri.reduce(mri.ifft2c(k), coils)
    net_in = mri.pairs_to_nchw(image)
    net_out = backbone(net_in)
    if reg_mode == "correction":
        net_out = sub(net_out, net_in)
    corrected = mri.nchw_to_pairs(net_out)
    return mri.fft2c(mri.expand(corrected, coils))


class UnrolledModel(Module):
    """Cascade parameters: one backbone and one mu per iteration (or shared)."""

    def __init__(self, cfg: UnrolledConfig, seed=0, dtype=np.float32):
        if cfg.T < 1:
            raise ValueError(f"need T >= 1, got {cfg.T}")
        self.cfg = cfg
        base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
        n_backbones = 1 if cfg.share_weights else cfg.T
        self.backbones = [Backbone(cfg.backbone, seed=base + [t], dtype=dtype)
                          for t in range(n_backbones)]
        self.mus = [Parameter(np.full((), cfg.mu_init, dtype)) for _ in range(cfg.T)]

    def backbone_at(self, t: int) -> Backbone:
        return self.backbones[0 if self.cfg.share_weights else t]

    def mu_at(self, t: int) -> Tensor:
        if self.cfg.learn_mu:
            return self.mus[t].tensor
        return Tensor(self.mus[t].data.copy())

    def named_parameters(self, prefix: str = ""):
        for name, p in super().named_parameters(prefix):
            if name.startswith(f"{prefix}mus.") and not self.cfg.learn_mu:
                continue
            yield name, p


def unroll_forward(k0: Tensor | None, k_meas: Tensor, mask: mri.SamplingMask,
                   coils: mri.CoilSensitivities, model: UnrolledModel,
                   steps: int | None = None) -> Tensor:
    """Run the cascade for ``steps`` iterations (default: the configured T)
    and return the image (H, W, 2).  ``k0`` defaults to the measurements
    (zero-filled initialization)."""
    cfg = model.cfg
    total = cfg.T if steps is None else steps
    if not 0 <= total <= cfg.T:
        raise ValueError(f"steps must lie in [0, {cfg.T}], got {total}")
    k = k_meas if k0 is None else k0
    for t in range(total):
        correction = reg_step(k, coils, model.backbone_at(t), cfg.reg_mode)
        k = dc_step(k, k_meas, mask, model.mu_at(t)) + correction
        if not np.isfinite(k.data).all():
            raise DivergenceError(t)
    return mri.reduce(mri.ifft2c(k), coils)
