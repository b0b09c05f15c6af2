"""Gated convolutional blocks and the U-shaped restoration backbone.

Two block flavours share one structure and differ only in the spatial
mixer: a local depthwise convolution, or LSConv, where a large-kernel
perception chain predicts per-position small kernels that aggregate each
location's neighborhood ("see large, focus small").
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .tensor import (Parameter, Tensor, conv2d, depth_to_space, layer_norm, mul,
                     record, reshape, softmax, space_to_depth, split_channels)


def _walk(name, value):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


class Module:
    """Tiny module tree: parameters discovered by attribute walk, named by path."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}", value)

    def param_map(self) -> dict:
        out = {}
        for name, p in self.named_parameters():
            if name in out:
                raise ValueError(f"duplicate parameter name {name}")
            out[name] = p
        return out

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, arrays: dict) -> None:
        params = self.param_map()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing[:4]}...")
        for name, p in params.items():
            src = arrays[name]
            if tuple(src.shape) != tuple(p.data.shape):
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def count_parameters(module: Module) -> int:
    return sum(p.data.size for _, p in module.named_parameters())


class Conv2d(Module):
    """Same-padded convolution layer; uniform +-sqrt(1/fan_in) weights, zero bias."""

    def __init__(self, c_in, c_out, kernel, groups=1, rng=None, dtype=np.float32,
                 zero_init=False):
        self.groups = groups
        fan_in = (c_in // groups) * kernel * kernel
        shape = (c_out, c_in // groups, kernel, kernel)
        if zero_init or rng is None:
            w = np.zeros(shape, dtype)
        else:
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor, groups=self.groups)


class ChannelNorm(Module):
    """Layer normalization over the channel axis with learned affine."""

    def __init__(self, channels, dtype=np.float32, eps=1e-6):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype))
        self.beta = Parameter(np.zeros(channels, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)


def simple_gate(z: Tensor) -> Tensor:
    """Multiplicative gate: elementwise product of the two channel halves."""
    a, b = split_channels(z)
    return mul(a, b)


@dataclass
class LsConvConfig:
    k_large: int = 7
    k_small: int = 3
    groups: int = 8
    normalize_kernels: bool = False


@dataclass
class BlockConfig:
    channels: int
    mixer: str = "local_dw3"  # or "lsconv"
    dw_kernel: int = 3
    expansion: int = 2


def lsconv_aggregate(x: Tensor, weights: Tensor, cfg: LsConvConfig) -> Tensor:
    """Aggregate each location's k_small neighborhood with that location's
    per-group dynamic kernel (zero padding at borders).

    x: (N, C, H, W); weights: (N, G*k_small^2, H, W) with tap j of group g at
    channel g*k_small^2 + j, taps in row-major order.  Channel c uses group
    g = c // (C/G).  With ``normalize_kernels`` the taps pass through a
    per-position softmax first.
    """
    k = cfg.k_small
    g_count = cfg.groups
    n, c, h, w = x.data.shape
    if c % g_count:
        raise ValueError(f"channels {c} not divisible by groups {g_count}")
    if weights.data.shape != (n, g_count * k * k, h, w):
        raise ValueError(
            f"dynamic weights shape {weights.data.shape} does not match "
            f"(N, G*k^2, H, W) = {(n, g_count * k * k, h, w)}")
    if cfg.normalize_kernels:
        taps = reshape(weights, (n, g_count, k * k, h, w))
        weights = reshape(softmax(taps, axis=2), (n, g_count * k * k, h, w))
    return _aggregate(x, weights, g_count, k)


def _aggregate(x: Tensor, weights: Tensor, g_count: int, k: int) -> Tensor:
    xd, wd = x.data, weights.data
    n, c, h, w = xd.shape
    cg = c // g_count
    pad = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    xg = xp.reshape(n, g_count, cg, h + 2 * pad, w + 2 * pad)
    kern = wd.reshape(n, g_count, k, k, h, w)
    out = np.zeros((n, g_count, cg, h, w), xd.dtype)
    for u in range(k):
        for v in range(k):
            out += xg[:, :, :, u:u + h, v:v + w] * kern[:, :, u, v][:, :, None]

    def backward_fn(g):
        gg = g.reshape(n, g_count, cg, h, w)
        gxp = np.zeros_like(xg)
        gk = np.empty_like(kern)
        for u in range(k):
            for v in range(k):
                gxp[:, :, :, u:u + h, v:v + w] += gg * kern[:, :, u, v][:, :, None]
                gk[:, :, u, v] = (xg[:, :, :, u:u + h, v:v + w] * gg).sum(axis=2)
        gx = gxp.reshape(n, c, h + 2 * pad, w + 2 * pad)[:, :, pad:pad + h, pad:pad + w]
        return gx, gk.reshape(n, g_count * k * k, h, w)

    return record("lsconv_aggregate", out.reshape(n, c, h, w), (x, weights), backward_fn)


class LsConv(Module):
    """Dynamic-convolution mixer: pointwise -> large depthwise -> pointwise
    predicts position-aware kernels, then grouped dynamic aggregation."""

    def __init__(self, channels, cfg: LsConvConfig, rng, dtype=np.float32):
        if channels % cfg.groups:
            raise ValueError(f"channels {channels} not divisible by groups {cfg.groups}")
        if cfg.k_large % 2 == 0 or cfg.k_small % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        self.cfg = cfg
        self.pw_in = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.dw = Conv2d(channels, channels, cfg.k_large, groups=channels, rng=rng, dtype=dtype)
        self.pw_out = Conv2d(channels, cfg.groups * cfg.k_small ** 2, 1, rng=rng, dtype=dtype)

    def dynamic_weights(self, x: Tensor) -> Tensor:
        return self.pw_out(self.dw(self.pw_in(x)))

    def forward(self, x: Tensor) -> Tensor:
        return lsconv_aggregate(x, self.dynamic_weights(x), self.cfg)


class GatedBlock(Module):
    """Normalized, gated residual block; spatial mixing on the expanded
    channels between the pointwise expansion and the gate.

    Sub-block 1: LN -> PW(C -> eC) -> mixer -> gate -> PW(eC/2 -> C) -> +x
    Sub-block 2: LN -> PW(C -> eC) -> gate -> PW(eC/2 -> C) -> +x
    """

    def __init__(self, cfg: BlockConfig, rng, lsconv_cfg: LsConvConfig | None = None,
                 dtype=np.float32):
        c = cfg.channels
        if c % 2:
            raise ValueError(f"gated block needs even channels, got {c}")
        m = c * cfg.expansion
        self.norm1 = ChannelNorm(c, dtype)
        self.expand1 = Conv2d(c, m, 1, rng=rng, dtype=dtype)
        if cfg.mixer == "local_dw3":
            self.mixer = Conv2d(m, m, cfg.dw_kernel, groups=m, rng=rng, dtype=dtype)
        elif cfg.mixer == "lsconv":
            self.mixer = LsConv(m, lsconv_cfg or LsConvConfig(), rng, dtype)
        else:
            raise ValueError(f"unknown mixer {cfg.mixer!r}")
        self.project1 = Conv2d(m // 2, c, 1, rng=rng, dtype=dtype)
        self.norm2 = ChannelNorm(c, dtype)
        self.expand2 = Conv2d(c, m, 1, rng=rng, dtype=dtype)
        self.project2 = Conv2d(m // 2, c, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.mixer(self.expand1(self.norm1(x)))
        y = x + self.project1(simple_gate(h))
        h2 = simple_gate(self.expand2(self.norm2(y)))
        return y + self.project2(h2)


@dataclass
class BackboneConfig:
    width: int = 16
    enc_blocks: tuple = (1, 1)
    middle_blocks: int = 1
    dec_blocks: tuple = (1, 1)
    in_channels: int = 1
    out_channels: int = 1
    mixer: str = "local_dw3"
    dw_kernel: int = 3
    expansion: int = 2
    lsconv: LsConvConfig = dataclass_field(default_factory=LsConvConfig)

    @property
    def levels(self) -> int:
        return len(self.enc_blocks)


class Backbone(Module):
    """U-shaped encoder/decoder of gated blocks with additive skips and a
    global input -> output residual; the final projection starts at zero so
    the backbone is the identity at initialization."""

    def __init__(self, cfg: BackboneConfig, seed=0, dtype=np.float32):
        if len(cfg.enc_blocks) != len(cfg.dec_blocks):
            raise ValueError("encoder and decoder must have the same number of levels")
        if cfg.in_channels != cfg.out_channels:
            raise ValueError("global residual requires in_channels == out_channels")
        rng = np.random.default_rng(seed)  # seed may be an int or a sequence of ints
        self.cfg = cfg
        w = cfg.width
        self.intro = Conv2d(cfg.in_channels, w, 3, rng=rng, dtype=dtype)
        self.encoders = []
        self.downs = []
        width = w
        for n_blocks in cfg.enc_blocks:
            self.encoders.append([self._block(width, rng, dtype) for _ in range(n_blocks)])
            self.downs.append(Conv2d(4 * width, 2 * width, 1, rng=rng, dtype=dtype))
            width *= 2
        self.middle = [self._block(width, rng, dtype) for _ in range(cfg.middle_blocks)]
        self.ups = []
        self.decoders = []
        for n_blocks in cfg.dec_blocks:
            self.ups.append(Conv2d(width, 2 * width, 1, rng=rng, dtype=dtype))
            width //= 2
            self.decoders.append([self._block(width, rng, dtype) for _ in range(n_blocks)])
        self.ending = Conv2d(width, cfg.out_channels, 3, dtype=dtype, zero_init=True)

    def _block(self, channels, rng, dtype) -> GatedBlock:
        block_cfg = BlockConfig(channels, self.cfg.mixer, self.cfg.dw_kernel, self.cfg.expansion)
        return GatedBlock(block_cfg, rng, self.cfg.lsconv, dtype)

    def forward(self, x: Tensor) -> Tensor:
        levels = self.cfg.levels
        n, c, h, w = x.data.shape
        if h % (1 << levels) or w % (1 << levels):
            raise ValueError(f"spatial size {h}x{w} not divisible by 2^{levels}")
        feat = self.intro(x)
        skips = []
        for blocks, down in zip(self.encoders, self.downs):
            for block in blocks:
                feat = block(feat)
            skips.append(feat)
            feat = down(space_to_depth(feat, 2))
        for block in self.middle:
            feat = block(feat)
        for blocks, up, skip in zip(self.decoders, self.ups, reversed(skips)):
            feat = depth_to_space(up(feat), 2)
            feat = feat + skip
            for block in blocks:
                feat = block(feat)
        return x + self.ending(feat)
