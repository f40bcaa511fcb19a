"""Layers and parameter containers built on :mod:`dkdssd.tensor`."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-registered tree of parameters and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def shape_manifest(self) -> dict[str, tuple[int, ...]]:
        return {k: p.shape for k, p in self.named_parameters()}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# -- initialisers -----------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


# -- layers -----------------------------------------------------------------

class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, *, rng, dtype=np.float64, bias=True):
        kh, kw = T._pair(kernel)
        self.stride, self.padding = T._pair(stride), T._pair(padding)
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, *, rng, dtype=np.float64):
        kh, kw = T._pair(kernel)
        self.stride, self.padding = T._pair(stride), T._pair(padding)
        self.weight = Parameter(kaiming_uniform(rng, (c_in, c_out, kh, kw), c_in * kh * kw, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, d_in, d_out, *, rng, dtype=np.float64, bias=True):
        self.weight = Parameter(kaiming_uniform(rng, (d_out, d_in), d_in, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)


class GRU(Module):
    """Single-layer gated recurrent unit unrolled over the time axis.

    Input is [B, T, D]; output is the hidden sequence [B, T, H]. The input
    projection for all steps is computed in one matmul; only the recurrent
    part runs step by step.
    """

    def __init__(self, d_in: int, hidden: int, *, rng, dtype=np.float64):
        self.hidden = hidden
        self.w_ih = Parameter((kaiming_uniform(rng, (3 * hidden, d_in), d_in, dtype) / np.sqrt(2.0)).astype(dtype))
        self.w_hh = Parameter(
            np.concatenate([orthogonal(rng, hidden, hidden, dtype) for _ in range(3)], axis=0)
        )
        self.b_ih = Parameter(np.zeros(3 * hidden, dtype=dtype))
        self.b_hh = Parameter(np.zeros(3 * hidden, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        b, steps, _ = x.shape
        H = self.hidden
        gates_x = T.affine(x, self.w_ih, self.b_ih)  # B, T, 3H
        h = Tensor(np.zeros((b, H), dtype=x.dtype))
        outs = []
        for t in range(steps):
            gx = gates_x[:, t, :]
            gh = T.affine(h, self.w_hh, self.b_hh)
            r = T.sigmoid(gx[:, :H] + gh[:, :H])
            z = T.sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
            n = T.tanh(gx[:, 2 * H :] + r * gh[:, 2 * H :])
            h = n + z * (h - n)
            outs.append(h)
        return T.stack(outs, axis=1)
