"""Graph-based reverse-mode autodiff over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks the graph in reverse topological order.
Only the ops the structural language model needs are provided.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True
_finite_guard = True


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, backward_fn) -> Tensor:
    if _finite_guard and data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced in forward pass")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, True)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data) if grad is None else grad}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.backward_fn is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.parents, t.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.data * k, (a,), lambda g: (g * k,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(a.data * pos, (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                            _unbroadcast(np.where(cond, 0.0, g), sb)))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return mul(a, Tensor(keep))


# ---------------------------------------------------------------------------
# shape


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        out = np.zeros(shape, dtype)
        out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(ts, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def index_add(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """``out = zeros((n, ...)); out[idx] += vals`` with repeated indices summed."""
    out = np.zeros((n,) + vals.shape[1:], vals.dtype)
    np.add.at(out, idx, vals)
    return out


def take(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0; ``idx`` may have any shape."""
    shape = a.shape

    def bw(g):
        return (index_add(shape[0], idx.reshape(-1), g.reshape((-1,) + shape[1:])),)

    return _make(a.data[idx], (a,), bw)


def scatter_add(src: Tensor, src_idx, shape, dst_idx) -> Tensor:
    """``out = zeros(shape); out[dst_idx] += src[src_idx]`` with index tuples."""
    dtype = src.data.dtype
    out = np.zeros(shape, dtype)
    np.add.at(out, dst_idx, src.data[src_idx])
    sshape = src.shape

    def bw(g):
        gs = np.zeros(sshape, dtype)
        np.add.at(gs, src_idx, g[dst_idx])
        return (gs,)

    return _make(out, (src,), bw)


# ---------------------------------------------------------------------------
# reductions and linear algebra


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd)
            gb = np.tensordot(g, ad, axes=(list(range(g.ndim)), list(range(ad.ndim - 1))))
            return ga, gb
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return _make(ad @ bd, (a, b), bw)


def max_pool(a: Tensor, mask: np.ndarray, axis: int = -2) -> Tensor:
    """Max over ``axis`` ignoring entries where ``mask`` is False; empty sets give 0."""
    x = np.where(np.expand_dims(mask, -1), a.data, -np.inf) if mask is not None else a.data
    arg = np.argmax(x, axis=axis)
    y = np.take_along_axis(x, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    empty = ~np.isfinite(y)
    y = np.where(empty, 0.0, y).astype(a.data.dtype)
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        out = np.zeros(shape, dtype)
        np.put_along_axis(out, np.expand_dims(arg, axis), np.expand_dims(np.where(empty, 0.0, g), axis), axis=axis)
        return (out,)

    return _make(y, (a,), bw)


# ---------------------------------------------------------------------------
# normalisation


def masked_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked entries get probability 0.

    Rows with no valid entry produce all zeros.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    y = (e / np.where(s > 0, s, 1.0)).astype(a.data.dtype)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), bw)


def masked_log_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax over the last axis; masked entries are ``-inf``."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = (z - lse).astype(a.data.dtype)
    p = np.exp(y)

    def bw(g):
        g = np.where(np.isfinite(y), g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    # -inf entries are intentional here; bypass the finite guard
    if _grad_enabled and a.requires_grad:
        return Tensor(y, (a,), bw, True)
    return Tensor(y)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(xhat * gd + bias.data, (x, gain, bias), bw)


def lstm_gates(z: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM nonlinearity: ``z`` is the (n, 4H) pre-activation [i, f, g, o].

    Returns (n, 2H) holding ``[h, c]``.
    """
    zd, cp = z.data, c_prev.data
    H = cp.shape[-1]
    i = 1.0 / (1.0 + np.exp(-zd[:, :H]))
    f = 1.0 / (1.0 + np.exp(-zd[:, H:2 * H]))
    gg = np.tanh(zd[:, 2 * H:3 * H])
    o = 1.0 / (1.0 + np.exp(-zd[:, 3 * H:]))
    c = f * cp + i * gg
    tc = np.tanh(c)
    h = o * tc

    def bw(g):
        gh, gc = g[:, :H], g[:, H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cp * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        return dz, dc * f

    return _make(np.concatenate([h, c], axis=1), (z, c_prev), bw)
