"""Slow, obviously-correct reference implementations.

These exist to cross-check the fast paths: explicit loops for the
convolutions, central finite differences for gradients, and per-window
loops for SSIM.  They share no code with the implementations they check.
"""

from __future__ import annotations

import numpy as np


def naive_conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None,
                 groups: int = 1) -> np.ndarray:
    """Same-padded grouped cross-correlation via explicit loops."""
    n, c, h, width = x.shape
    c_out, c_in_g, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, c_out, h, width), x.dtype)
    og = c_out // groups
    for b in range(n):
        for o in range(c_out):
            g = o // og
            for i in range(c_in_g):
                ci = g * c_in_g + i
                for u in range(kh):
                    for v in range(kw):
                        out[b, o] += w[o, i, u, v] * xp[b, ci, u:u + h, v:v + width]
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def naive_lsconv_aggregate(x: np.ndarray, weights: np.ndarray, groups: int,
                           k_small: int) -> np.ndarray:
    """Per-position dynamic aggregation via explicit loops over batch,
    channel, location and tap."""
    n, c, h, w = x.shape
    cg = c // groups
    pad = k_small // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros_like(x)
    for b in range(n):
        for ch in range(c):
            g = ch // cg
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for u in range(k_small):
                        for v in range(k_small):
                            tap = g * k_small * k_small + u * k_small + v
                            acc += weights[b, tap, i, j] * xp[b, ch, i + u, j + v]
                    out[b, ch, i, j] = acc
    return out


def fd_gradient(func, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.asarray(x, np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = func(x)
        flat[i] = orig - h
        f_minus = func(x)
        flat[i] = orig
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Relative error between two arrays, safe for near-zero pairs."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    denom = max(np.linalg.norm(a.reshape(-1)), np.linalg.norm(b.reshape(-1)))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm((a - b).reshape(-1)) / denom)


def naive_ssim_windows(a: np.ndarray, b: np.ndarray, data_range: float,
                       win: int = 7) -> np.ndarray:
    """SSIM per valid window of a 2D pair, one window at a time."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    hh, ww = a.shape[0] - win + 1, a.shape[1] - win + 1
    out = np.zeros((hh, ww))
    for i in range(hh):
        for j in range(ww):
            wa = a[i:i + win, j:j + win].reshape(-1)
            wb = b[i:i + win, j:j + win].reshape(-1)
            mu_a, mu_b = wa.mean(), wb.mean()
            va = np.var(wa, ddof=1)
            vb = np.var(wb, ddof=1)
            vab = ((wa - mu_a) * (wb - mu_b)).sum() / (wa.size - 1)
            out[i, j] = ((2 * mu_a * mu_b + c1) * (2 * vab + c2) /
                         ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return out


def naive_ssim(a: np.ndarray, b: np.ndarray, data_range: float, win: int = 7) -> float:
    return float(naive_ssim_windows(a, b, data_range, win).mean())


def naive_ssim_slice_wise(ref: np.ndarray, est: np.ndarray, win: int = 7) -> float:
    values = [naive_ssim(est[s], ref[s], float(ref[s].max()), win)
              for s in range(ref.shape[0])]
    return float(np.mean(values))


def naive_ssim_volumetric(ref: np.ndarray, est: np.ndarray, win: int = 7) -> float:
    peak = float(ref.max())
    maps = [naive_ssim_windows(est[s], ref[s], peak, win) for s in range(ref.shape[0])]
    return float(np.concatenate([m.reshape(-1) for m in maps]).mean())
