"""Minimal reverse-mode autodiff over dense float32 arrays.

Just enough operator coverage for the sculpting pipeline: elementwise math,
reductions, matmul, gather/scatter, padding and slicing. Tensors wrap numpy
arrays; the graph is a DAG of Tensor nodes walked once, in reverse
topological order, by ``backward``. Gradient accumulation is additive, so a
second backward pass through the same node doubles its grad.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "zeros",
    "full",
    "concat",
    "matmul",
    "take0",
    "take1",
    "scatter_add0",
    "scatter_rows",
    "pad2d",
    "backward",
    "inject_grad",
]


def _as_f32(x):
    a = np.asarray(x, dtype=np.float32)
    return a


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float32 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _bw=None, name=None):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._bw = _bw
        self.name = name

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g, dtype=np.float32), self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Populates ``grad`` on every reachable tensor with requires_grad.
        Accumulates into existing grads rather than overwriting them.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward on a tensor that is not connected to "
                             "any parameter with requires_grad")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node._accum(g)
            if node._bw is None:
                continue
            pgrads = node._bw(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float32),
                                  p.data.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            out._bw = lambda g: (g, g)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        out = _node(self.data - other.data, (self, other))
        if out.requires_grad:
            out._bw = lambda g: (g, -g)
        return out

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        other = _wrap(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            a, b = self, other
            out._bw = lambda g: (g * b.data, g * a.data)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            a, b = self, other
            out._bw = lambda g: (g / b.data, -g * a.data / (b.data * b.data))
        return out

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._bw = lambda g: (-g,)
        return out

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data ** p, (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * p * a.data ** (p - 1),)
        return out

    # ------------------------------------------------------------------
    # elementwise functions
    # ------------------------------------------------------------------

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out.requires_grad:
            out._bw = lambda g: (g * out.data,)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g / a.data,)
        return out

    def sqrt(self):
        out = _node(np.sqrt(self.data), (self,))
        if out.requires_grad:
            out._bw = lambda g: (g * 0.5 / np.maximum(out.data, 1e-12),)
        return out

    def tanh(self):
        out = _node(np.tanh(self.data), (self,))
        if out.requires_grad:
            out._bw = lambda g: (g * (1.0 - out.data * out.data),)
        return out

    def sigmoid(self):
        out = _node(1.0 / (1.0 + np.exp(-self.data)), (self,))
        if out.requires_grad:
            out._bw = lambda g: (g * out.data * (1.0 - out.data),)
        return out

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * (a.data > 0.0),)
        return out

    def abs(self):
        out = _node(np.abs(self.data), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * np.sign(a.data),)
        return out

    def sin(self):
        out = _node(np.sin(self.data), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * np.cos(a.data),)
        return out

    def cos(self):
        out = _node(np.cos(self.data), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (-g * np.sin(a.data),)
        return out

    def maximum(self, c):
        """Elementwise max with a scalar; subgradient picks the live branch."""
        out = _node(np.maximum(self.data, c), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * (a.data > c),)
        return out

    def clip(self, lo, hi):
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g * ((a.data > lo) & (a.data < hi)),)
        return out

    # ------------------------------------------------------------------
    # reductions / shape
    # ------------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32),
                    (self,))
        if out.requires_grad:
            a = self

            def bw(g):
                if axis is None:
                    return (np.broadcast_to(g, a.data.shape).astype(np.float32),)
                gg = g if keepdims else np.expand_dims(g, axis)
                return (np.broadcast_to(gg, a.data.shape).astype(np.float32),)

            out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            a = self
            out._bw = lambda g: (g.reshape(a.data.shape),)
        return out

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._bw = lambda g: (g.transpose(inv),)
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out = _node(self.data[idx], (self,))
        if out.requires_grad:
            a = self
            basic = isinstance(idx, (int, slice)) or (
                isinstance(idx, tuple)
                and all(isinstance(i, (int, slice, type(Ellipsis))) for i in idx)
            )

            def bw(g):
                gi = np.zeros_like(a.data)
                if basic:
                    gi[idx] = g
                else:
                    np.add.at(gi, idx, g)  # advanced indices may repeat
                return (gi,)

            out._bw = bw
        return out

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg,
                  _parents=tuple(p for p in parents) if rg else ())


# ----------------------------------------------------------------------
# free functions
# ----------------------------------------------------------------------

def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=requires_grad)


def full(shape, value, requires_grad=False):
    return Tensor(np.full(shape, value, dtype=np.float32),
                  requires_grad=requires_grad)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:
        out._bw = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def concat(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        out._bw = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def take0(x, idx):
    """Row gather: out[k] = x[idx[k]]. idx may repeat; backward scatter-adds."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = _node(x.data[idx], (x,))
    if out.requires_grad:
        n = x.data.shape[0]

        def bw(g):
            g = np.asarray(g, dtype=np.float32)
            if x.data.ndim == 1:
                gi = np.bincount(idx, weights=g.astype(np.float64),
                                 minlength=n).astype(np.float32)
            else:
                cols = int(np.prod(x.data.shape[1:]))
                g2 = g.reshape(len(idx), cols)
                gi = np.empty((n, cols), dtype=np.float32)
                for c in range(cols):
                    gi[:, c] = np.bincount(idx, weights=g2[:, c].astype(np.float64),
                                           minlength=n)
                gi = gi.reshape(x.data.shape)
            return (gi,)

        out._bw = bw
    return out


def take1(x, idx):
    """Column gather on a 2-D tensor: out[:, k] = x[:, idx[k]]."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ValueError("take1 expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    out = _node(x.data[:, idx], (x,))
    if out.requires_grad:
        rows, n = x.data.shape

        def bw(g):
            g = np.asarray(g, dtype=np.float64)
            gi = np.empty((rows, n), dtype=np.float32)
            for r in range(rows):
                gi[r] = np.bincount(idx, weights=g[r], minlength=n)
            return (gi,)

        out._bw = bw
    return out


def scatter_add0(values, idx, size):
    """out[size, ...] with out[idx[k]] += values[k]; idx may repeat."""
    values = _wrap(values)
    idx = np.asarray(idx, dtype=np.int64)
    shp = (size,) + values.data.shape[1:]
    acc = np.zeros(shp, dtype=np.float32)
    if values.data.ndim == 1:
        acc[:] = np.bincount(idx, weights=values.data.astype(np.float64),
                             minlength=size)
    else:
        cols = int(np.prod(values.data.shape[1:]))
        v2 = values.data.reshape(len(idx), cols)
        a2 = acc.reshape(size, cols)
        for c in range(cols):
            a2[:, c] = np.bincount(idx, weights=v2[:, c].astype(np.float64),
                                   minlength=size)
    out = _node(acc, (values,))
    if out.requires_grad:
        out._bw = lambda g: (g[idx],)
    return out


def scatter_rows(values, idx, size, fill=0.0):
    """Place rows at unique indices over a constant-fill buffer.

    out[idx[k]] = values[k]; rows not referenced stay at `fill` and carry no
    gradient. idx must not repeat (each output row written at most once).
    """
    values = _wrap(values)
    idx = np.asarray(idx, dtype=np.int64)
    fill = np.asarray(fill, dtype=np.float32)
    shp = (size,) + values.data.shape[1:]
    buf = np.empty(shp, dtype=np.float32)
    buf[:] = fill
    buf[idx] = values.data
    out = _node(buf, (values,))
    if out.requires_grad:
        out._bw = lambda g: (g[idx],)
    return out


def pad2d(x, pad):
    """Zero-pad the last two axes by `pad` on every side."""
    x = _wrap(x)
    nd = x.data.ndim
    widths = [(0, 0)] * (nd - 2) + [(pad, pad), (pad, pad)]
    out = _node(np.pad(x.data, widths), (x,))
    if out.requires_grad:
        sl = tuple([slice(None)] * (nd - 2) + [slice(pad, -pad), slice(pad, -pad)])
        out._bw = lambda g: (g[sl],)
    return out


def backward(loss, params=()):
    """Run a backward pass and zero-fill grads of parameters the loss never
    touched, so optimizers see a grad on every parameter."""
    loss.backward()
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def inject_grad(x, grad):
    """Scalar node whose backward feeds a precomputed gradient into `x`.

    Used for score-distillation: the loss value itself is a placeholder; what
    matters is the custom gradient flowing into the render.
    """
    x = _wrap(x)
    grad = np.ascontiguousarray(grad, dtype=np.float32)
    if grad.shape != x.data.shape:
        raise ValueError("injected gradient shape mismatch")
    val = float(np.vdot(grad, x.data))  # reported value: <g, x>, arbitrary
    out = Tensor(np.float32(val), requires_grad=x.requires_grad,
                 _parents=(x,) if x.requires_grad else ())
    if out.requires_grad:
        out._bw = lambda g: (g * grad,)
    return out
