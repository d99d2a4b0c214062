"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from . import autograd as ag


class InvalidEpsilon(ValueError):
    pass


def grad_check(loss_fn, params: dict[str, np.ndarray], eps: float = 1e-4, sample: int | None = None,
               seed: int = 0, floor: float = 1e-6, oracle_fn=None, oracle_dtype=np.float64) -> float:
    """Max relative error between analytic and numeric gradients.

    ``loss_fn`` maps ``dict[str, Tensor]`` to a scalar Tensor. Numeric
    derivatives use the fourth-order central stencil
    ``(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h``. The relative error of
    a coordinate is ``|a - n| / max(|a|, |n|, floor)``. With ``sample`` only
    that many randomly chosen coordinates per tensor are perturbed.

    The numeric side may run at higher precision: ``oracle_fn`` (default
    ``loss_fn``) is evaluated on copies of the parameters cast to
    ``oracle_dtype``, e.g. ``np.longdouble`` to push finite-difference
    round-off well below the tolerance for tiny gradient coordinates.
    """
    if not eps > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {eps}")
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {arr.dtype}")

    tensors = {k: ag.parameter(v, k) for k, v in params.items()}
    loss = loss_fn(tensors)
    if not np.isfinite(loss.data):
        raise ag.NonFiniteError("loss is not finite")
    ag.backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}

    oracle_fn = oracle_fn or loss_fn
    numeric = {k: np.array(v, dtype=oracle_dtype) for k, v in params.items()}
    eps = np.asarray(eps, dtype=oracle_dtype)

    def f():
        with ag.no_grad():
            val = oracle_fn({k: ag.Tensor(v) for k, v in numeric.items()}).data[()]
        if not np.isfinite(val):
            raise ag.NonFiniteError("loss is not finite")
        return val

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in numeric.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name} must be C-contiguous")
        coords = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            coords = rng.choice(flat.size, size=sample, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            vals = []
            for step in (eps, -eps, 2 * eps, -2 * eps):
                flat[i] = orig + step
                vals.append(f())
            flat[i] = orig
            num = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, float(err))
    return worst
