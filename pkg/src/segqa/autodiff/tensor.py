"""Dense tensors with a reverse-mode tape.

Every operation returns a new :class:`Tensor`; when any input requires a
gradient the result records its parents and a closure mapping the output
gradient to one gradient per parent. :meth:`Tensor.backward` walks the tape
in reverse topological order and accumulates into leaf ``.grad`` buffers.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

__all__ = [
    "Tensor",
    "tensor",
    "get_default_dtype",
    "set_default_dtype",
    "precision",
    "no_grad",
    "is_grad_enabled",
    "concat",
    "gather_rows",
    "scatter_add_rows",
    "relu",
    "leaky_relu",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "dropout",
    "batch_norm",
    "conv3d",
    "conv_transpose3d",
    "flatten",
]

_state = {"dtype": np.dtype(np.float32), "grad": True}


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _state["dtype"] = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float dtype (e.g. float64 for gradient checks)."""
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def is_grad_enabled() -> bool:
    return _state["grad"]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        want = np.dtype(dtype) if dtype is not None else get_default_dtype()
        if arr.dtype != want:
            arr = arr.astype(want)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""
        self.name = name

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if _state["grad"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        order = _topological(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._result(a.data + b.data, (a, b), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._result(a.data - b.data, (a, b), bw, "sub")

    def __rsub__(self, other):
        return _wrap(other, self) - self

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = _wrap(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._result(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / (b.data * b.data), b.shape)

        return Tensor._result(a.data / b.data, (a, b), bw, "div")

    def __rtruediv__(self, other):
        return _wrap(other, self) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported")
        a = self

        def bw(g):
            return (g * p * a.data ** (p - 1),)

        return Tensor._result(a.data ** p, (a,), bw, "pow")

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self))

    def __rmatmul__(self, other):
        return matmul(_wrap(other, self), self)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._result(a.data[idx], (a,), bw, "getitem")

    # -- reductions and shape -------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._result(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    # -- elementwise ----------------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        a = self
        return Tensor._result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _check(cond: bool, msg: str, *shapes):
    if not cond:
        raise ShapeMismatch(f"{msg}: " + " vs ".join(str(tuple(s)) for s in shapes))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2], "matmul shape mismatch", a.shape, b.shape)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), bw, "matmul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor._result(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    pos = a.data > 0
    slope = np.where(pos, 1.0, alpha).astype(a.dtype)
    return Tensor._result(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(y, (a,), bw, "log_softmax")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def gather_rows(x: Tensor, index) -> Tensor:
    """``x[index]`` along the first axis."""
    return x[np.asarray(index, dtype=np.int64)]


def scatter_add_rows(src: Tensor, index, n_rows: int) -> Tensor:
    """Rows of ``src`` summed into ``n_rows`` output rows at ``index``."""
    index = np.asarray(index, dtype=np.int64)
    _check(len(index) == src.shape[0], "scatter index length mismatch", index.shape, src.shape)
    out = np.zeros((n_rows,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src.data)
    return Tensor._result(out, (src,), lambda g: (g[index],), "scatter_add_rows")


def flatten(x: Tensor, start: int = 1) -> Tensor:
    return x.reshape(x.shape[:start] + (-1,))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None, mask=None) -> Tensor:
    """Inverted dropout. Identity in eval mode or when ``p == 0``.

    Pass ``mask`` (boolean keep-mask) to fix the stochastic pattern.
    """
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if mask is None:
        rng = rng if rng is not None else np.random.default_rng()
        mask = rng.random(x.shape) >= p
    scale = (np.asarray(mask) / (1.0 - p)).astype(x.dtype)
    return Tensor._result(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-feature normalisation of ``(N, C)`` input over the first axis.

    Training mode uses batch statistics and, unless ``update_stats`` is
    false, updates the running buffers in place (unbiased variance); eval
    mode uses the running buffers.
    """
    _check(x.ndim == 2 and x.shape[1] == gamma.shape[0], "batch_norm expects (N, C) input", x.shape, gamma.shape)
    if train:
        n = x.shape[0]
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if n > 1 and update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv

        def bw(g):
            gg = g * gamma.data
            gx = inv * (gg - gg.mean(axis=0) - xhat * (gg * xhat).mean(axis=0))
            return gx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean.astype(x.dtype)) * inv

        def bw(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = (xhat * gamma.data + beta.data).astype(x.dtype)
    return Tensor._result(out, (x, gamma, beta), bw, "batch_norm")


def _im2col(x: np.ndarray, k: int) -> tuple[np.ndarray, tuple]:
    n, c, d, h, w = x.shape
    od, oh, ow = d - k + 1, h - k + 1, w - k + 1
    win = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))  # n c od oh ow k k k
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * od * oh * ow, c * k * k * k)
    return cols, (n, od, oh, ow)


def _col2im(cols: np.ndarray, out_shape: tuple, k: int) -> np.ndarray:
    n, c, d, h, w = out_shape
    od, oh, ow = d - k + 1, h - k + 1, w - k + 1
    cols = cols.reshape(n, od, oh, ow, c, k, k, k)
    out = np.zeros(out_shape, dtype=cols.dtype)
    for a in range(k):
        for b in range(k):
            for e in range(k):
                out[:, :, a:a + od, b:b + oh, e:e + ow] += cols[..., a, b, e].transpose(0, 4, 1, 2, 3)
    return out


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid (no padding), stride-1 3D cross-correlation.

    ``x`` is ``(N, C, D, H, W)``, ``weight`` is ``(K, C, k, k, k)``; the result
    is ``(N, K, D-k+1, H-k+1, W-k+1)``.
    """
    _check(x.ndim == 5 and weight.ndim == 5 and x.shape[1] == weight.shape[1], "conv3d shape mismatch", x.shape, weight.shape)
    K, C, k = weight.shape[0], weight.shape[1], weight.shape[2]
    _check(all(s >= k for s in x.shape[2:]), "conv3d input smaller than kernel", x.shape, weight.shape)
    cols, (n, od, oh, ow) = _im2col(x.data, k)
    wmat = weight.data.reshape(K, -1)
    y = (cols @ wmat.T).reshape(n, od, oh, ow, K).transpose(0, 4, 1, 2, 3)
    if bias is not None:
        y = y + bias.data.reshape(1, K, 1, 1, 1)
    y = np.ascontiguousarray(y)

    def bw(g):
        G = g.transpose(0, 2, 3, 4, 1).reshape(-1, K)
        gw = (G.T @ cols).reshape(weight.shape)
        gx = _col2im(G @ wmat, x.shape, k)
        gb = g.sum(axis=(0, 2, 3, 4)) if bias is not None else None
        return (gx, gw) + ((gb,) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._result(y, parents, bw, "conv3d")


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, no-padding transposed convolution (adjoint of :func:`conv3d`).

    ``x`` is ``(N, K, d, h, w)``, ``weight`` is ``(K, C, k, k, k)``; the result is
    ``(N, C, d+k-1, h+k-1, w+k-1)``.
    """
    _check(x.ndim == 5 and weight.ndim == 5 and x.shape[1] == weight.shape[0], "conv_transpose3d shape mismatch", x.shape, weight.shape)
    K, C, k = weight.shape[0], weight.shape[1], weight.shape[2]
    n, _, d, h, w = x.shape
    out_shape = (n, C, d + k - 1, h + k - 1, w + k - 1)
    wmat = weight.data.reshape(K, -1)
    X = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, K)
    y = _col2im(X @ wmat, out_shape, k)
    if bias is not None:
        y = y + bias.data.reshape(1, C, 1, 1, 1)

    def bw(g):
        cols, _ = _im2col(g, k)
        gx = (cols @ wmat.T).reshape(n, d, h, w, K).transpose(0, 4, 1, 2, 3)
        gw = (X.T @ cols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3, 4)) if bias is not None else None
        return (np.ascontiguousarray(gx), gw) + ((gb,) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._result(y, parents, bw, "conv_transpose3d")
