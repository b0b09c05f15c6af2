"""Minimal dense tensors with reverse-mode differentiation.

Values are numpy arrays (float32 or float64) in row-major N,C,H,W layout.
Differentiable operations record ``TapeNode`` entries in creation order;
``backward`` replays the nodes reachable from a scalar loss exactly once, in
reverse creation order.  Creation order is a topological order by
construction (eager evaluation), so accumulation is deterministic and two
backward passes over the same graph produce bit-identical gradients.

Threading: tensors without tape attachment are immutable values, safe to
share; a recorded graph must only ever be touched by one thread.
"""

from __future__ import annotations

import itertools
from typing import Callable, Mapping, Sequence

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that pauses tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class TapeNode:
    """One recorded operation: inputs, output and its adjoint rule."""

    __slots__ = ("op", "inputs", "output", "backward", "id")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.id = next(_node_ids)


class Tensor:
    """Dense real-valued array, optionally attached to the gradient tape.

    ``requires_grad`` marks a leaf whose gradient is accumulated into
    ``grad`` by :func:`backward`.  Tensors produced by differentiable ops
    carry a ``node`` reference describing how to push gradients to their
    inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            if np.issubdtype(arr.dtype, np.complexfloating):
                raise TypeError(
                    "complex values must be stored as real pairs with a trailing extent of 2"
                )
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constants of matching dtype
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __neg__(self):
        return mul(self, _coerce(-1.0, self))


class Parameter:
    """Trainable leaf tensor; its name is assigned by the owning module tree."""

    __slots__ = ("tensor",)

    def __init__(self, data, dtype=None):
        self.tensor = Tensor(data, requires_grad=True, dtype=dtype)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, recording a tape node when gradients are needed.

    ``backward`` maps the output gradient array to a tuple of input gradient
    arrays (``None`` for inputs that do not need one), aligned with ``inputs``.
    """
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), out, backward)
    return out


def trace(loss: Tensor) -> list:
    """Ordered list of tape nodes reachable from ``loss`` (creation order)."""
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        node = stack.pop().node
        if node is not None and id(node) not in seen:
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
    nodes.sort(key=lambda n: n.id)
    return nodes


def backward(loss: Tensor, params: Mapping[str, Parameter] | None = None):
    """Reverse-mode sweep from a scalar loss.

    Gradients are accumulated into ``grad`` of every reachable leaf that
    requires one.  When ``params`` (a name -> Parameter mapping) is given,
    returns ``{name: Tensor}`` with the accumulated gradient per parameter;
    parameters the loss never touched get zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
    else:
        nodes = trace(loss)
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            for t, g_in in zip(node.inputs, node.backward(g_out)):
                if g_in is None or not t.requires_grad:
                    continue
                if t.node is None:
                    t.grad = g_in if t.grad is None else t.grad + g_in
                else:
                    key = id(t)
                    grads[key] = g_in if key not in grads else grads[key] + g_in
    if params is None:
        return None
    out = {}
    for name, p in params.items():
        g = p.tensor.grad
        out[name] = Tensor(g.copy() if g is not None else np.zeros_like(p.tensor.data))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return record("add", data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return record("sub", data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return record("mul", data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)))


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Grouped 2D cross-correlation with zero-padded "same" output.

    x: (N, C_in, H, W); w: (C_out, C_in/groups, kH, kW) with odd kH, kW;
    bias: (C_out,).  Output spatial size equals input spatial size.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError("conv2d expects 4D input and weight")
    n, c, h, wspat = xd.shape
    c_out, c_in_g, kh, kw = wd.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d supports odd kernels only, got {kh}x{kw}")
    if c % groups or c_out % groups:
        raise ValueError(f"groups={groups} must divide C_in={c} and C_out={c_out}")
    if c_in_g != c // groups:
        raise ValueError(f"weight expects C_in/groups={c_in_g}, input has {c // groups}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    pointwise = kh == 1 and kw == 1 and groups == 1
    depthwise = groups == c and c_out == c

    if pointwise:
        out = np.matmul(wd[:, :, 0, 0], xd.reshape(n, c, h * wspat)).reshape(n, c_out, h, wspat)
    elif depthwise:
        out = np.zeros((n, c, h, wspat), xd.dtype)
        for u in range(kh):
            for v in range(kw):
                out += xp[:, :, u:u + h, v:v + wspat] * wd[:, 0, u, v][None, :, None, None]
    elif groups == 1:
        out = np.zeros((n, c_out, h, wspat), xd.dtype)
        for u in range(kh):
            for v in range(kw):
                out += np.einsum("nchw,oc->nohw", xp[:, :, u:u + h, v:v + wspat],
                                 wd[:, :, u, v])
    else:
        og = c_out // groups
        xg = xp.reshape(n, groups, c_in_g, h + 2 * ph, wspat + 2 * pw)
        wg = wd.reshape(groups, og, c_in_g, kh, kw)
        out = np.zeros((n, groups, og, h, wspat), xd.dtype)
        for u in range(kh):
            for v in range(kw):
                out += np.einsum("ngihw,goi->ngohw", xg[:, :, :, u:u + h, v:v + wspat],
                                 wg[:, :, :, u, v], optimize=True)
        out = out.reshape(n, c_out, h, wspat)

    inputs = [x, w]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)

    def backward_fn(g):
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if pointwise:
            g2 = g.reshape(n, c_out, h * wspat)
            x2 = xd.reshape(n, c, h * wspat)
            gw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
            gx = np.matmul(wd[:, :, 0, 0].T, g2).reshape(n, c, h, wspat)
        elif depthwise:
            gw = np.empty_like(wd)
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gw[:, 0, u, v] = (xp[:, :, u:u + h, v:v + wspat] * g).sum(axis=(0, 2, 3))
                    gxp[:, :, u:u + h, v:v + wspat] += g * wd[:, 0, u, v][None, :, None, None]
            gx = gxp[:, :, ph:ph + h, pw:pw + wspat]
        elif groups == 1:
            gw = np.empty_like(wd)
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gw[:, :, u, v] = np.einsum("nohw,nchw->oc", g,
                                               xp[:, :, u:u + h, v:v + wspat])
                    gxp[:, :, u:u + h, v:v + wspat] += np.einsum(
                        "nohw,oc->nchw", g, wd[:, :, u, v])
            gx = gxp[:, :, ph:ph + h, pw:pw + wspat]
        else:
            og = c_out // groups
            gg = g.reshape(n, groups, og, h, wspat)
            xg = xp.reshape(n, groups, c_in_g, h + 2 * ph, wspat + 2 * pw)
            gwg = np.empty((groups, og, c_in_g, kh, kw), wd.dtype)
            gxp = np.zeros_like(xg)
            for u in range(kh):
                for v in range(kw):
                    gwg[:, :, :, u, v] = np.einsum(
                        "ngohw,ngihw->goi", gg, xg[:, :, :, u:u + h, v:v + wspat], optimize=True)
                    gxp[:, :, :, u:u + h, v:v + wspat] += np.einsum(
                        "ngohw,goi->ngihw", gg, wd.reshape(groups, og, c_in_g, kh, kw)[:, :, :, u, v],
                        optimize=True)
            gw = gwg.reshape(c_out, c_in_g, kh, kw)
            gx = gxp.reshape(n, c, h + 2 * ph, wspat + 2 * pw)[:, :, ph:ph + h, pw:pw + wspat]
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    return record("conv2d", out, inputs, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis of (N, C, H, W), then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, xd.dtype))
    xhat = (xd - mu) * inv_std
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        gy = g * gamma.data[None, :, None, None]
        m1 = gy.mean(axis=1, keepdims=True)
        m2 = (gy * xhat).mean(axis=1, keepdims=True)
        gx = (gy - m1 - xhat * m2) * inv_std
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return record("layer_norm", out, (x, gamma, beta), backward_fn)


def narrow_channels(x: Tensor, start: int, length: int) -> Tensor:
    """Slice ``length`` channels beginning at ``start``; adjoint zero-pads."""
    c = x.data.shape[1]
    data = x.data[:, start:start + length]

    def backward_fn(g):
        gx = np.zeros(x.data.shape[:1] + (c,) + x.data.shape[2:], x.data.dtype)
        gx[:, start:start + length] = g
        return (gx,)

    return record("narrow", data, (x,), backward_fn)


def split_channels(x: Tensor):
    """Split (N, 2C, H, W) into its first- and second-half channels."""
    c = x.data.shape[1]
    if c % 2:
        raise ValueError(f"split_channels needs an even channel count, got {c}")
    half = c // 2
    return narrow_channels(x, 0, half), narrow_channels(x, half, half)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def backward_fn(g):
        grads = []
        start = 0
        for s in sizes:
            grads.append(g[:, start:start + s])
            start += s
        return tuple(grads)

    return record("concat", data, tuple(parts), backward_fn)


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), x.data.dtype)
    return record("sum", data, (x,), lambda g: (np.full(x.data.shape, g, x.data.dtype),))


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean(), x.data.dtype)
    return record("mean", data, (x,), lambda g: (np.full(x.data.shape, (g / n), x.data.dtype),))


def absolute(x: Tensor) -> Tensor:
    # subgradient at 0 is 0 (np.sign(0) == 0)
    sign = np.sign(x.data)
    return record("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return record("softmax", y, (x,), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def space_to_depth(x: Tensor, factor: int = 2) -> Tensor:
    """(N, C, H, W) -> (N, C*factor^2, H/factor, W/factor)."""
    n, c, h, w = x.data.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} not divisible by {factor}")
    hf, wf = h // factor, w // factor
    data = (x.data.reshape(n, c, hf, factor, wf, factor)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c * factor * factor, hf, wf))

    def backward_fn(g):
        gx = (g.reshape(n, c, factor, factor, hf, wf)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, c, h, w))
        return (gx,)

    return record("space_to_depth", np.ascontiguousarray(data), (x,), backward_fn)


def depth_to_space(x: Tensor, factor: int = 2) -> Tensor:
    """(N, C, H, W) -> (N, C/factor^2, H*factor, W*factor); inverse of space_to_depth."""
    n, c, h, w = x.data.shape
    if c % (factor * factor):
        raise ValueError(f"channel count {c} not divisible by {factor}^2")
    co = c // (factor * factor)
    data = (x.data.reshape(n, co, factor, factor, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, co, h * factor, w * factor))

    def backward_fn(g):
        gx = (g.reshape(n, co, h, factor, w, factor)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, c, h, w))
        return (gx,)

    return record("depth_to_space", np.ascontiguousarray(data), (x,), backward_fn)
