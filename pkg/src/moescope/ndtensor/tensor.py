"""Dense float64 tensors with a reverse-mode gradient tape."""
import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ContractError, DimensionError

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    """One recorded primitive application: its inputs and local gradient rule.

    ``backward`` maps the gradient of the output to a tuple with one entry per
    input (``None`` where an input does not need a gradient).
    """

    __slots__ = ("inputs", "backward", "op")

    def __init__(self, inputs, backward, op):
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data, inputs, backward, op):
    """Wrap ``data`` as the output of a primitive, taping it when needed."""
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(inputs, backward, op)
    return out


class Tape:
    """Recorded primitive applications reachable from one output, in topological order."""

    def __init__(self, entries):
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_output(cls, output):
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for inp in reversed(t.node.inputs):
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        return cls(order)

    def replay(self, seed_grad):
        """Propagate ``seed_grad`` from the last entry back to the leaves."""
        if not self.entries:
            return
        grads = {id(self.entries[-1]): seed_grad}
        for t in reversed(self.entries):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
                continue
            in_grads = t.node.backward(g)
            for inp, ig in zip(t.node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig


def backward(output):
    """Accumulate d(output)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if output.size != 1:
        raise ContractError(f"backward() needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ContractError("backward() called on a tensor that is not on the tape")
    Tape.from_output(output).replay(np.ones_like(output.data))


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data + c, (a,), lambda g: (g,), "add_scalar")
    _check_same(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    return record(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def square(a):
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def exp(a):
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tsum(a, axis=None):
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(out, (a,), bw, "sum")


def mean(a, axis=None):
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / count)


def reshape(a, shape):
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got rank {a.ndim}")
    return record(a.data.T, (a,), lambda g: (g.T,), "transpose")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible (axis 1 vs axis 0)")
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def expand(a, shape):
    """Explicit broadcast of ``a`` to ``shape``; the gradient is summed back."""
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"expand: cannot broadcast {src} to {tuple(shape)}") from exc
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(src),)

    return record(out, (a,), bw, "expand")


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return record(a.data[idx], (a,), bw, "take_rows")


def scatter_rows(a, idx, n):
    """Place the rows of ``a`` at positions ``idx`` of an ``n``-row zero tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, idx, a.data)
    return record(out, (a,), lambda g: (g[idx],), "scatter_rows")


def gather(a, rows, cols):
    """Vector of entries ``a[rows[i], cols[i]]``."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return record(a.data[rows, cols], (a,), bw, "gather")


def scale_rows(a, w):
    """Multiply row ``i`` of matrix ``a`` by scalar ``w[i]``."""
    if w.ndim != 1 or a.shape[0] != w.shape[0]:
        raise DimensionError(f"scale_rows: {a.shape} rows vs weights {w.shape} (axis 0)")
    ad, wd = a.data, w.data
    col = (slice(None),) + (None,) * (a.ndim - 1)

    def bw(g):
        return g * wd[col], (g * ad).reshape(ad.shape[0], -1).sum(axis=1)

    return record(ad * wd[col], (a, w), bw, "scale_rows")


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def mask_fill(a, mask, value):
    """Replace entries where ``mask`` is true by a constant; no gradient flows there."""
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    return record(np.where(mask, value, a.data), (a,), lambda g: (g * keep,), "mask_fill")
