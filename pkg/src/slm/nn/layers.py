"""LSTM stack and set transformer layer built on :mod:`slm.nn.autograd`.

Parameters are plain ``dict[str, Tensor]`` keyed by dotted names, using the
row-vector convention ``y = x @ W + b``.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class EmptySequence(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def init_lstm(rng, prefix: str, n_in: int, units: int, layers: int) -> dict[str, np.ndarray]:
    out = {}
    for layer in range(layers):
        d_in = n_in if layer == 0 else units
        b = np.zeros(4 * units)
        b[units:2 * units] = 1.0  # forget gate
        out[f"{prefix}.{layer}.Wx"] = glorot(rng, d_in, 4 * units)
        out[f"{prefix}.{layer}.Wh"] = glorot(rng, units, 4 * units)
        out[f"{prefix}.{layer}.b"] = b
    return out


def lstm_step(p: dict[str, Tensor], prefix: str, x: Tensor, h_prev: list, c_prev: list,
              dropout: float = 0.0, rng=None, training: bool = False):
    """One cell step for every layer of the stack; returns new (h, c) lists."""
    hs, cs = [], []
    inp = x
    H = c_prev[0].shape[-1]
    for layer in range(len(h_prev)):
        hp = ag.dropout(h_prev[layer], dropout, rng, training)
        z = inp @ p[f"{prefix}.{layer}.Wx"] + hp @ p[f"{prefix}.{layer}.Wh"] + p[f"{prefix}.{layer}.b"]
        hc = ag.lstm_gates(z, c_prev[layer])
        h, c = hc[:, :H], hc[:, H:]
        hs.append(h)
        cs.append(c)
        inp = h
    return hs, cs


def lstm_forward(inputs, p: dict[str, Tensor], layers: int, prefix: str = "lstm") -> Tensor:
    """Run the stack over one sequence of vectors; return the top final hidden state."""
    inputs = [ag.as_tensor(v) for v in inputs]
    if not inputs:
        raise EmptySequence("LSTM needs at least one input vector")
    units = p[f"{prefix}.0.Wh"].shape[0]
    dtype = inputs[0].data.dtype
    h = [Tensor(np.zeros((1, units), dtype)) for _ in range(layers)]
    c = [Tensor(np.zeros((1, units), dtype)) for _ in range(layers)]
    for v in inputs:
        h, c = lstm_step(p, prefix, v.reshape((1, -1)), h, c)
    return h[-1].reshape((units,))


def init_transformer(rng, prefix: str, dim: int, ffn: int, layers: int) -> dict[str, np.ndarray]:
    out = {}
    for layer in range(layers):
        q = f"{prefix}.{layer}"
        for m in ("q", "k", "v", "o"):
            out[f"{q}.W{m}"] = glorot(rng, dim, dim)
            out[f"{q}.b{m}"] = np.zeros(dim)
        out[f"{q}.W1"] = glorot(rng, dim, ffn)
        out[f"{q}.b1"] = np.zeros(ffn)
        out[f"{q}.W2"] = glorot(rng, ffn, dim)
        out[f"{q}.b2"] = np.zeros(dim)
        for ln in ("ln1", "ln2"):
            out[f"{q}.{ln}.g"] = np.ones(dim)
            out[f"{q}.{ln}.b"] = np.zeros(dim)
    return out


def transformer_layer(p: dict[str, Tensor], prefix: str, X: Tensor, mask: np.ndarray | None,
                      heads: int, dropout: float = 0.0, rng=None, training: bool = False,
                      record: list | None = None) -> Tensor:
    """Post-norm encoder layer over padded sets ``X`` of shape (B, N, D).

    No positional information is used, so the layer is permutation-equivariant
    over the N axis. ``mask`` (B, N) marks real rows.
    """
    B, N, D = X.shape
    dh = D // heads

    def split(t):
        return ag.transpose(t.reshape((B, N, heads, dh)), (0, 2, 1, 3))

    Q = split(X @ p[f"{prefix}.Wq"] + p[f"{prefix}.bq"])
    K = split(X @ p[f"{prefix}.Wk"] + p[f"{prefix}.bk"])
    V = split(X @ p[f"{prefix}.Wv"] + p[f"{prefix}.bv"])
    scores = ag.scale(Q @ ag.transpose(K, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    key_mask = None if mask is None else mask[:, None, None, :]
    A = ag.masked_softmax(scores, key_mask)
    if record is not None:
        record.append(("attention", A.data, None if mask is None else np.broadcast_to(mask[:, None, :, None], A.shape)))
    att = ag.transpose(A @ V, (0, 2, 1, 3)).reshape((B, N, D))
    att = att @ p[f"{prefix}.Wo"] + p[f"{prefix}.bo"]
    X1 = ag.layer_norm(X + ag.dropout(att, dropout, rng, training), p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    ff = ag.relu(X1 @ p[f"{prefix}.W1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.W2"] + p[f"{prefix}.b2"]
    return ag.layer_norm(X1 + ag.dropout(ff, dropout, rng, training), p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, gold: int) -> float:
    return float(-np.log(probs[gold]))
