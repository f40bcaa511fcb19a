"""Central finite-difference checks for autodiff gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def rel_error(a, b, floor: float = 1e-6) -> float:
    """``|a - b| / max(|a|, |b|, floor)``, maximised over elements."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every element of ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def check_op(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between autodiff and finite differences for ``fn(*inputs)``.

    The output is contracted with a fixed random weight so non-scalar ops
    are checked too.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    probe = None

    def value() -> float:
        nonlocal probe
        out = fn(*[Tensor(a) for a in arrays]).data
        if probe is None:
            probe = np.random.default_rng(seed).standard_normal(out.shape)
        return float(np.sum(out * probe))

    value()
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    T.backward(T.tsum(out * probe))
    worst = 0.0
    for t, a in zip(tensors, arrays):
        num = numeric_grad(value, a, h)
        ana = np.zeros_like(a) if t.grad is None else t.grad
        worst = max(worst, rel_error(ana, num))
    return worst


def check_directional(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
                      coords_per_param: int = 2, h: float = 1e-6) -> dict[str, float]:
    """Compare parameter gradients of ``loss_fn()`` against finite differences.

    For each parameter, ``coords_per_param`` random coordinates and one
    random direction over the whole tensor are probed. Returns the worst
    relative error per parameter index.
    """
    for p in params:
        p.grad = None
    T.backward(loss_fn())
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def value() -> float:
        with T.no_grad():
            return float(loss_fn().data)

    errors = {}
    for k, (p, g) in enumerate(zip(params, grads)):
        worst = 0.0
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = value()
            flat[i] = old - h
            down = value()
            flat[i] = old
            worst = max(worst, rel_error(g.reshape(-1)[i], (up - down) / (2 * h)))
        d = rng.standard_normal(p.shape)
        d /= np.linalg.norm(d)
        base = p.data.copy()
        p.data[...] = base + h * d
        up = value()
        p.data[...] = base - h * d
        down = value()
        p.data[...] = base
        worst = max(worst, rel_error(np.sum(g * d), (up - down) / (2 * h)))
        errors[k] = worst
    return errors
