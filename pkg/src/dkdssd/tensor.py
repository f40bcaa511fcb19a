"""Minimal reverse-mode autodiff over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks the graph once in reverse topological
order and then frees it.

Binary elementwise ops accept operands of identical shape, or a scalar. Use
:func:`broadcast_to` to expand a tensor explicitly. Plain numpy constants are
expanded to the tensor operand's shape since they never need a gradient.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_EPS = 1e-8

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, double backward)."""


def _default_dtype():
    return getattr(_state, "dtype", np.float64)


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype).type


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._consumed = False

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._consumed = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; the graph itself is freed so a
    second call on the same loss raises :class:`GraphError`.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already called on this graph; rebuild the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._parents = ()
        node._backward = None
    loss._consumed = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _operands(a, b):
    """Coerce a binary op's operands, enforcing exact-shape-or-scalar."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if ta and tb:
        if a.shape != b.shape and a.size != 1 and b.size != 1:
            raise ShapeError(
                f"elementwise operands must match or be scalar: {a.shape} vs {b.shape}; "
                "use broadcast_to to expand explicitly"
            )
        return a, b
    if ta:
        arr = np.asarray(b, dtype=a.dtype)
        if arr.ndim and arr.shape != a.shape:
            arr = np.broadcast_to(arr, a.shape)
        return a, Tensor(arr, dtype=a.dtype)
    arr = np.asarray(a, dtype=b.dtype)
    if arr.ndim and arr.shape != b.shape:
        arr = np.broadcast_to(arr, b.shape)
    return Tensor(arr, dtype=b.dtype), b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar operand broadcast over the other
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    ad, bd = a.data, b.data

    def fn(g):
        return (
            _reduce_to(g * bd, ad.shape) if a.requires_grad else None,
            _reduce_to(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def fn(g):
        return (
            _reduce_to(g / bd, ad.shape) if a.requires_grad else None,
            _reduce_to(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log of ``max(a, eps)``; zero gradient where clamped."""
    x = a.data
    keep = x > eps
    safe = np.where(keep, x, eps)
    return _make(np.log(safe), (a,), lambda g: (np.where(keep, g / safe, 0.0),), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return _make(x * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)

    def fn(g):
        e = np.exp(-np.abs(x))
        s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * s,)

    return _make(out, (a,), fn, "softplus")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


def detach(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.mean(a.data, axis=axes, keepdims=keepdims), (a,), fn, "mean")


def amax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; gradient goes to the first maximal element."""
    x = a.data
    axis = axis % x.ndim
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def fn(g):
        gx = np.zeros_like(x)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis)
        return (gx,)

    return _make(out, (a,), fn, "amax")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style expansion; the gradient sums the expanded axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def fn(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make(out, (a,), fn, "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(f"concat shapes disagree off axis {axis}: {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


def getitem(a: Tensor, key) -> Tensor:
    x = a.data
    out = x[key]
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (int, slice, type(Ellipsis), type(None))) for k in parts)

    def fn(g):
        gx = np.zeros_like(x)
        if basic:
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _make(out, (a,), fn, "getitem")


def _bincount_rows(g2: np.ndarray, flat_idx: np.ndarray, size: int) -> np.ndarray:
    out = np.empty((g2.shape[0], size), dtype=g2.dtype)
    for r in range(g2.shape[0]):
        out[r] = np.bincount(flat_idx, weights=g2[r], minlength=size)
    return out


def take(a: Tensor, idx, axis: int = -1) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape.

    The index array's dimensions replace ``axis`` in the output. The
    gradient scatter-adds back, so repeated indices accumulate.
    """
    idx = np.asarray(idx, dtype=np.intp)
    x = a.data
    axis = axis % x.ndim
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"take index out of range for axis of length {n}")
    out = np.take(x, idx, axis=axis)

    def fn(g):
        # move the index dims to the end, flatten leading dims
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(g.ndim - idx.ndim, g.ndim)))
        lead = gm.shape[: gm.ndim - idx.ndim]
        g2 = gm.reshape(-1, idx.size)
        gx = _bincount_rows(g2, idx.ravel(), n).astype(x.dtype, copy=False).reshape(lead + (n,))
        return (np.moveaxis(gx, -1, axis),)

    return _make(out, (a,), fn, "take")


def scatter_add(a: Tensor, idx, size: int) -> Tensor:
    """Adjoint of :func:`take` on the last axes: ``out[..., idx[k]] += a[..., k]``.

    The trailing ``idx.ndim`` axes of ``a`` must equal ``idx.shape``.
    Overlap-add is ``scatter_add(frames, frame_index, length)``.
    """
    idx = np.asarray(idx, dtype=np.intp)
    x = a.data
    k = idx.ndim
    if x.shape[x.ndim - k:] != idx.shape:
        raise ShapeError(f"scatter_add trailing shape {x.shape[x.ndim - k:]} != index shape {idx.shape}")
    lead = x.shape[: x.ndim - k]
    flat = idx.ravel()
    out = _bincount_rows(x.reshape(-1, idx.size), flat, size).astype(x.dtype, copy=False).reshape(lead + (size,))

    def fn(g):
        return (np.take(g, idx, axis=-1),)

    return _make(out, (a,), fn, "scatter_add")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` two-dimensional; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul needs (..., n) @ (n, m), got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), fn, "matmul")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"affine needs (..., in) and (out, in), got {x.shape}, {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, fn, "affine")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), fn, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), fn, "log_softmax")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad2(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _conv_forward(x, w, stride, pad):
    sh, sw = stride
    ph, pw = pad
    _, _, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(wd, kw, sw, pw)
    win = _windows(_pad2(x, ph, pw), kh, kw, sh, sw, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_grad_input(g, w, in_shape, stride, pad):
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    sh, sw = stride
    ph, pw = pad
    b, c, h, wd = in_shape
    _, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    cols = np.tensordot(g, w, axes=([1], [0]))  # B, Ho, Wo, C, kh, kw
    gp = np.zeros((b, c, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gp[:, :, ph : ph + h, pw : pw + wd]


def _conv_grad_weight(g, x, w_shape, stride, pad):
    sh, sw = stride
    ph, pw = pad
    _, _, kh, kw = w_shape
    ho, wo = g.shape[2], g.shape[3]
    win = _windows(_pad2(x, ph, pw), kh, kw, sh, sw, ho, wo)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kh, kw


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [C,F,T] or [B,C,F,T] input, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation over the last two axes.

    ``x`` is [C_in, F, T] or [B, C_in, F, T]; ``weight`` is
    [C_out, C_in, kF, kT]. Output size per axis is
    ``(n + 2 * pad - k) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    stride, pad = _pair(stride), _pair(padding)
    if min(stride) <= 0 or min(pad) < 0:
        raise ShapeError(f"stride must be positive and padding nonnegative, got {stride}, {pad}")
    xb, unbatched = _as_batched(x)
    if weight.ndim != 4 or weight.shape[1] != xb.shape[1]:
        raise ShapeError(f"kernel {weight.shape} does not match input channels {xb.shape[1]}")
    kh, kw = weight.shape[2:]
    if xb.shape[2] + 2 * pad[0] < kh or xb.shape[3] + 2 * pad[1] < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {xb.shape[2:]} (pad {pad})")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = xb.data, weight.data
    out = _conv_forward(xd, wd, stride, pad)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def fn(g):
        gx = _conv_grad_input(g, wd, xd.shape, stride, pad) if xb.requires_grad else None
        gw = _conv_grad_weight(g, xd, wd.shape, stride, pad) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    y = _make(out, parents, fn, "conv2d")
    return reshape(y, y.shape[1:]) if unbatched else y


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` in its input.

    ``weight`` is [C_in, C_out, kF, kT]; output size per axis is
    ``(n - 1) * stride - 2 * pad + k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    stride, pad = _pair(stride), _pair(padding)
    xb, unbatched = _as_batched(x)
    if weight.ndim != 4 or weight.shape[0] != xb.shape[1]:
        raise ShapeError(f"kernel {weight.shape} does not match input channels {xb.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    b, _, h, wd_ = xb.shape
    kh, kw = weight.shape[2:]
    ho = (h - 1) * stride[0] - 2 * pad[0] + kh
    wo = (wd_ - 1) * stride[1] - 2 * pad[1] + kw
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"transposed conv output would be empty for input {xb.shape}")
    xd, wd = xb.data, weight.data
    out_shape = (b, weight.shape[1], ho, wo)
    out = _conv_grad_input(xd, wd, out_shape, stride, pad)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def fn(g):
        gx = _conv_forward(g, wd, stride, pad) if xb.requires_grad else None
        gw = _conv_grad_weight(xd, g, wd.shape, stride, pad) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    y = _make(np.ascontiguousarray(out), parents, fn, "conv_transpose2d")
    return reshape(y, y.shape[1:]) if unbatched else y


def pool2d(x: Tensor, window, stride=None, mode: str = "max") -> Tensor:
    """Max or average pooling over the last two axes (no padding)."""
    x = as_tensor(x)
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else (kh, kw))
    if kh <= 0 or kw <= 0:
        raise ShapeError("pooling window must be nonzero")
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    xb, unbatched = _as_batched(x)
    xd = xb.data
    b, c, h, w = xd.shape
    if kh > h or kw > w:
        raise ShapeError(f"pooling window {kh}x{kw} exceeds input {h}x{w}")
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    win = _windows(xd, kh, kw, sh, sw, ho, wo).reshape(b, c, ho, wo, kh * kw)
    if mode == "max":
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], -1)[..., 0]
    else:
        out = win.mean(axis=-1)

    def fn(g):
        gx = np.zeros_like(xd)
        for i in range(kh):
            for j in range(kw):
                if mode == "max":
                    contrib = g * (arg == i * kw + j)
                else:
                    contrib = g / (kh * kw)
                gx[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += contrib
        return (gx,)

    y = _make(np.ascontiguousarray(out), (xb,), fn, f"{mode}pool2d")
    return reshape(y, y.shape[1:]) if unbatched else y


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
