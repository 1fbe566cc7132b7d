"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checking) and record a tape of backward closures as operations are
applied.  ``Tensor.backward()`` on a scalar walks the tape in reverse
topological order and accumulates gradients into every reachable input,
summing over shared subexpressions.

The per-row hot loops (softmax, layernorm, GELU) are delegated to the
selected kernel backend; everything else is plain numpy.
"""

import numpy as np

from . import backend


class TensorError(Exception):
    """Base class for tensor engine failures."""


class ShapeError(TensorError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(TensorError):
    """An operation produced NaN or Inf from finite inputs."""


_finite_checks = True


def set_finite_checks(enabled):
    """Toggle the NaN/Inf guard on op outputs; returns the previous value."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


def _guard(data, op):
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return data


class Tensor:
    """A dense multi-dimensional value, optionally differentiable.

    ``data`` is always a numpy array; ``grad`` is lazily allocated with
    the same shape during backward.  Tensors are treated as immutable
    once created (the optimizer mutates parameter data between graphs,
    never inside one).
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None, op="leaf"):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            # numpy returns scalars from 0-d math; keep their precision
            arr = np.asarray(data)
            self.data = arr if np.issubdtype(arr.dtype, np.floating) else arr.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op})"

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None):
    """Wrap arrays/scalars as constant (non-differentiable) tensors.

    Float arrays keep their precision; everything else becomes float32.
    """
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return Tensor(arr)


def constant(x, like):
    """A constant with the dtype of an existing tensor."""
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.reshape(t.data.shape)


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


_grad_enabled = True


class no_grad:
    """Context manager: skip tape construction (forward values unaffected)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _make(data, parents, bwd, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _prev=tuple(parents), _backward=bwd, op=op)
    return Tensor(data, op=op)


# -- arithmetic -----------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = a if b is a else (b if isinstance(b, Tensor) else constant(b, a))
    out_data = _guard(a.data + b.data, "add")

    def bwd():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    out = _make(out_data, (a, b), bwd, "add")
    return out


def mul(a, b):
    a = as_tensor(a)
    b = a if b is a else (b if isinstance(b, Tensor) else constant(b, a))
    out_data = _guard(a.data * b.data, "mul")

    def bwd():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out = _make(out_data, (a, b), bwd, "mul")
    return out


def div(a, b):
    a = as_tensor(a)
    b = b if isinstance(b, Tensor) else constant(b, a)
    out_data = _guard(a.data / b.data, "div")

    def bwd():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out.data / b.data, b.data.shape))

    out = _make(out_data, (a, b), bwd, "div")
    return out


def square(a):
    return mul(a, a)


def sqrt(a):
    a = as_tensor(a)
    out_data = _guard(np.sqrt(a.data), "sqrt")

    def bwd():
        if a.requires_grad:
            _accumulate(a, out.grad * (0.5 / out.data))

    out = _make(out_data, (a,), bwd, "sqrt")
    return out


def matmul(a, b):
    """Matrix product; also stacked (batched) when inputs have >2 dims."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.data.shape} vs {b.data.shape}")
    out_data = _guard(np.matmul(a.data, b.data), "matmul")

    def bwd():
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), bwd, "matmul")
    return out


# -- shape manipulation ---------------------------------------------------


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def bwd():
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), bwd, "reshape")
    return out


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def bwd():
        if a.requires_grad:
            _accumulate(a, np.ascontiguousarray(np.transpose(out.grad, inverse)))

    out = _make(out_data, (a,), bwd, "transpose")
    return out


def broadcast_to(a, shape):
    a = as_tensor(a)
    out_data = np.broadcast_to(a.data, shape)

    def bwd():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))

    out = _make(out_data, (a,), bwd, "broadcast_to")
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, np.ascontiguousarray(g[tuple(sl)]))

    out = _make(out_data, tuple(tensors), bwd, "concat")
    return out


def slice_axis(a, axis, start, stop):
    a = as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out_data = a.data[sl]

    def bwd():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[sl] = out.grad
            _accumulate(a, g)

    out = _make(out_data, (a,), bwd, "slice_axis")
    return out


def take_rows(a, indices):
    """Embedding-style row lookup along axis 0; scatter-add on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = a.data[idx]

    def bwd():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)

    out = _make(out_data, (a,), bwd, "take_rows")
    return out


# -- reductions -----------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out = _make(np.asarray(out_data), (a,), bwd, "sum")
    return out


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])

    def bwd():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, (np.broadcast_to(g, a.data.shape) / count).astype(a.data.dtype))

    out = _make(np.asarray(out_data), (a,), bwd, "mean")
    return out


def reduce_max(a, axis):
    """Max along one axis; gradient routes to the first argmax (tie rule)."""
    a = as_tensor(a)
    moved_shape = np.moveaxis(a.data, axis, -1).shape
    rows = np.ascontiguousarray(np.moveaxis(a.data, axis, -1)).reshape(-1, moved_shape[-1])
    arg = rows.argmax(axis=1)
    out_data = rows.max(axis=1).reshape(moved_shape[:-1])

    def bwd():
        if a.requires_grad:
            gflat = np.zeros_like(rows)
            gflat[np.arange(rows.shape[0]), arg] = out.grad.reshape(-1)
            _accumulate(a, np.moveaxis(gflat.reshape(moved_shape), -1, axis))

    out = _make(out_data, (a,), bwd, "max")
    return out


# -- nonlinearities -------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def bwd():
        if a.requires_grad:
            _accumulate(a, out.grad * (a.data > 0))

    out = _make(out_data, (a,), bwd, "relu")
    return out


def gelu(a):
    a = as_tensor(a)
    flat = np.ascontiguousarray(a.data.reshape(-1))
    out_flat = np.empty_like(flat)
    backend.active.gelu_fwd(flat, out_flat)
    out_data = _guard(out_flat.reshape(a.data.shape), "gelu")

    def bwd():
        if a.requires_grad:
            dx = np.empty_like(flat)
            backend.active.gelu_bwd(flat, np.ascontiguousarray(out.grad.reshape(-1)), dx)
            _accumulate(a, dx.reshape(a.data.shape))

    out = _make(out_data, (a,), bwd, "gelu")
    return out


def sigmoid(a):
    a = as_tensor(a)
    flat = a.data.reshape(-1)
    out_flat = np.empty_like(flat)
    pos = flat >= 0
    out_flat[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out_flat[~pos] = ex / (1.0 + ex)
    out_data = _guard(out_flat.reshape(a.data.shape), "sigmoid")

    def bwd():
        if a.requires_grad:
            _accumulate(a, out.grad * out.data * (1.0 - out.data))

    out = _make(out_data, (a,), bwd, "sigmoid")
    return out


def softmax(a, axis=-1):
    """Softmax along ``axis``; rows sum to 1 and are strictly positive."""
    a = as_tensor(a)
    moved = np.moveaxis(a.data, axis, -1)
    rows = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y = np.empty_like(rows)
    backend.active.softmax_fwd(rows, y)
    out_data = _guard(np.moveaxis(y.reshape(moved.shape), -1, axis), "softmax")

    def bwd():
        if a.requires_grad:
            gm = np.ascontiguousarray(np.moveaxis(out.grad, axis, -1).reshape(rows.shape))
            dx = np.empty_like(rows)
            backend.active.softmax_bwd(y, gm, dx)
            _accumulate(a, np.moveaxis(dx.reshape(moved.shape), -1, axis))

    out = _make(out_data, (a,), bwd, "softmax")
    return out


def layernorm(a, gain, bias, eps=1e-5):
    """Per-row zero-mean unit-variance normalization plus affine transform."""
    a = as_tensor(a)
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layernorm: gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}"
        )
    rows = np.ascontiguousarray(a.data.reshape(-1, d))
    y = np.empty_like(rows)
    xhat = np.empty_like(rows)
    rstd = np.empty(rows.shape[0], dtype=rows.dtype)
    backend.active.layernorm_fwd(rows, gain.data, bias.data, eps, y, xhat, rstd)
    out_data = _guard(y.reshape(a.data.shape), "layernorm")

    def bwd():
        g = np.ascontiguousarray(out.grad.reshape(rows.shape))
        dx = np.empty_like(rows)
        dgain = np.zeros_like(gain.data)
        dbias = np.zeros_like(bias.data)
        backend.active.layernorm_bwd(g, xhat, rstd, gain.data, dx, dgain, dbias)
        if a.requires_grad:
            _accumulate(a, dx.reshape(a.data.shape))
        if gain.requires_grad:
            _accumulate(gain, dgain)
        if bias.requires_grad:
            _accumulate(bias, dbias)

    out = _make(out_data, (a, gain, bias), bwd, "layernorm")
    return out


def cross_entropy_with_logits(logits, onehot):
    """Per-row cross entropy from unnormalized logits against one-hot targets."""
    logits = as_tensor(logits)
    onehot = as_tensor(onehot)
    if logits.data.shape != onehot.data.shape:
        raise ShapeError(
            f"cross_entropy: logits {logits.data.shape} vs targets {onehot.data.shape}"
        )
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))
    out_data = _guard(lse - (z * onehot.data).sum(axis=-1), "cross_entropy")

    def bwd():
        if logits.requires_grad:
            p = np.exp(z - m)
            p /= p.sum(axis=-1, keepdims=True)
            _accumulate(logits, (p - onehot.data) * out.grad[..., None])

    out = _make(out_data, (logits, onehot), bwd, "cross_entropy")
    return out


def dropout(a, rate, rng):
    """Inverted dropout driven by an explicit numpy Generator."""
    if rate <= 0.0:
        return a
    a = as_tensor(a)
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    keep /= 1.0 - rate
    return mul(a, Tensor(keep))
