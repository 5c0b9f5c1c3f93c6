"""Dense n-d float tensors with reverse-mode automatic differentiation.

Storage is float32 by default (float64 arrays are kept as-is so checks can
run the same graphs in double precision). Every reduction accumulates in
float64 regardless of storage dtype. Each executed op is stamped with a
monotonically increasing sequence number; the sequence of reachable ops is
the tape, and backward() replays it in exact reverse order.

Forward outputs are checked for finiteness: an op that would produce NaN or
Inf from finite inputs raises NonFiniteError instead of propagating.

Tensors are immutable once created except for their grad buffers. A graph
(tape) must be owned by a single thread during backward.
"""

import itertools
import math

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced a non-finite value from finite inputs."""


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


_SEQ = itertools.count()


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense value plus its place in the autodiff tape.

    grad is populated by backward() and accumulates across repeated
    backward calls; call zero_grad() (or set grad = None) between runs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._seq = next(_SEQ)

    # -- basic introspection ------------------------------------------------

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
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        # Scalars never promote: a float32 graph stays float32.
        return Tensor(np.asarray(x, dtype=np.float32))
    return Tensor(x)


def _result_dtype(*tensors):
    if any(t.data.dtype == np.float64 for t in tensors):
        return np.float64
    return np.float32


def _make(data, parents, backward_fn):
    """Finalize an op: finiteness guard, grad wiring, tape sequence stamp."""
    # The sum is finite iff every element is (NaN and Inf propagate; all
    # op outputs are O(1)-scaled, far from the overflow threshold).
    if not np.isfinite(data.sum()):
        raise NonFiniteError("op produced non-finite values")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out_dtype = _result_dtype(a, b)
    data = (a.data + b.data).astype(out_dtype, copy=False)

    def backward(g):
        return (_unbroadcast(g, a.shape).astype(a.dtype, copy=False) if a.requires_grad else None,
                _unbroadcast(g, b.shape).astype(b.dtype, copy=False) if b.requires_grad else None)

    return _make(data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out_dtype = _result_dtype(a, b)
    data = (a.data - b.data).astype(out_dtype, copy=False)

    def backward(g):
        return (_unbroadcast(g, a.shape).astype(a.dtype, copy=False) if a.requires_grad else None,
                _unbroadcast(-g, b.shape).astype(b.dtype, copy=False) if b.requires_grad else None)

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_dtype = _result_dtype(a, b)
    data = (a.data * b.data).astype(out_dtype, copy=False)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape).astype(a.dtype, copy=False) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape).astype(b.dtype, copy=False) if b.requires_grad else None)

    return _make(data, (a, b), backward)


def silu(x):
    """x * sigmoid(x); sigmoid via tanh stays stable for any finite input."""
    x = _wrap(x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    data = x.data * sig

    def backward(g):
        return (g * (sig + x.data * sig * (1.0 - sig)),)

    return _make(data, (x,), backward)


# -- matmul -------------------------------------------------------------------


def matmul(a, b):
    """2-D matrix product in the promoted storage dtype."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ: {a.shape} vs {b.shape}")
    out_dtype = _result_dtype(a, b)
    ad_ = a.data.astype(out_dtype, copy=False)
    bd = b.data.astype(out_dtype, copy=False)
    data = ad_ @ bd

    def backward(g):
        ga = (g @ bd.T).astype(a.dtype, copy=False) if a.requires_grad else None
        gb = (ad_.T @ g).astype(b.dtype, copy=False) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward)


def bmm(a, b):
    """Batched 3-D matrix product: (B, m, k) @ (B, k, n)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm expects 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} vs {b.shape}")
    out_dtype = _result_dtype(a, b)
    ad_ = a.data.astype(out_dtype, copy=False)
    bd = b.data.astype(out_dtype, copy=False)
    data = ad_ @ bd

    def backward(g):
        ga = (g @ bd.transpose(0, 2, 1)).astype(a.dtype, copy=False) if a.requires_grad else None
        gb = (ad_.transpose(0, 2, 1) @ g).astype(b.dtype, copy=False) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward)


# -- reductions ---------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = _wrap(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype, copy=False)

    def backward(g):
        if axis is None:
            gx = np.broadcast_to(g, x.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gexp, x.shape)
        return (gx.astype(x.dtype, copy=False),)

    return _make(data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = _wrap(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    data = (np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64) / n).astype(x.dtype, copy=False)

    def backward(g):
        if axis is None:
            gx = np.broadcast_to(g, x.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gexp, x.shape)
        return ((gx / n).astype(x.dtype, copy=False),)

    return _make(data, (x,), backward)


# -- softmax / layer norm -------------------------------------------------------


def softmax(x, axis):
    """Max-stabilized softmax along `axis`; the normalizing sum is
    accumulated in float64."""
    x = _wrap(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    dt = x.dtype
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.sum(e, axis=axis, keepdims=True, dtype=np.float64)
    data = e * (1.0 / denom).astype(dt)

    def backward(g):
        inner = np.sum(g * data, axis=axis, keepdims=True, dtype=np.float64).astype(dt)
        return ((g - inner) * data,)

    return _make(data, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match feature dim {d}")
    dt = x.dtype
    mu = np.mean(x.data, axis=-1, keepdims=True, dtype=np.float64)
    var = np.mean((x.data - mu.astype(dt)) ** 2, axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mu.astype(dt)) * inv
    data = (xhat * gamma.data + beta.data).astype(_result_dtype(x, gamma, beta), copy=False)

    def backward(g):
        dxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            m1 = np.mean(dxhat, axis=-1, keepdims=True, dtype=np.float64).astype(dt)
            m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True, dtype=np.float64).astype(dt)
            gx = (inv * (dxhat - m1 - xhat * m2)).astype(dt, copy=False)
        axes = tuple(range(g.ndim - 1))
        ggamma = None
        if gamma.requires_grad:
            ggamma = np.sum(g * xhat, axis=axes, dtype=np.float64).astype(gamma.dtype, copy=False)
        gbeta = None
        if beta.requires_grad:
            gbeta = np.sum(g, axis=axes, dtype=np.float64).astype(beta.dtype, copy=False)
        return gx, ggamma, gbeta

    return _make(data, (x, gamma, beta), backward)


# -- shape / indexing ops -------------------------------------------------------


def reshape(x, *shape):
    x = _wrap(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), backward)


def transpose(x, axes=None):
    x = _wrap(x)
    data = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(data, (x,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis).astype(
        _result_dtype(*tensors), copy=False)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p.astype(t.dtype, copy=False) for p, t in zip(parts, tensors))

    return _make(data, tuple(tensors), backward)


def narrow(x, axis, start, length):
    """Contiguous slice of `length` entries along `axis` starting at `start`."""
    x = _wrap(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx]

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[idx] = g
        return (gx,)

    return _make(data, (x,), backward)


def take_flat(x, indices):
    """Gather from the flattened tensor; output takes the index array's shape.

    Covers row gathers, embedding lookups and the patchify permutation.
    Duplicate indices accumulate on the backward pass.
    """
    x = _wrap(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.size):
        raise ShapeError(f"take_flat: index out of range for {x.size} elements")
    data = x.data.reshape(-1)[idx]

    def backward(g):
        gx = np.zeros(x.data.size, dtype=x.dtype)
        np.add.at(gx, idx.reshape(-1), g.reshape(-1))
        return (gx.reshape(x.shape),)

    return _make(data, (x,), backward)


def gather_rows(x, row_indices):
    """Gather rows of a 2-D tensor by integer index array."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {x.shape}")
    rows = np.asarray(row_indices, dtype=np.int64)
    d = x.shape[1]
    flat = rows[:, None] * d + np.arange(d, dtype=np.int64)[None, :]
    return take_flat(x, flat)


# -- attention ------------------------------------------------------------------


def scaled_dot_attention(q, k, v):
    """softmax(q @ k.T / sqrt(d)) @ v for 2-D q, k, v."""
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("scaled_dot_attention expects 2-D q, k, v")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"scaled_dot_attention: q/k feature dims differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"scaled_dot_attention: k/v row counts differ: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = mul(matmul(q, transpose(k)), scale)
    return matmul(softmax(scores, axis=1), v)


# -- backward -------------------------------------------------------------------


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    The reachable ops are replayed in exact reverse execution order.
    Repeated calls accumulate (sum) into existing grad buffers.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Collect the sub-tape reachable from the loss.
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes or not t.requires_grad:
            continue
        nodes[id(t)] = t
        stack.extend(t._parents)

    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

    pending = {id(loss): np.ones(loss.data.shape, dtype=loss.dtype)}
    for t in order:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._backward_fn is None:
            continue
        parent_grads = t._backward_fn(g)
        for p, pg in zip(t._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in pending:
                pending[id(p)] = pending[id(p)] + pg
            else:
                pending[id(p)] = pg
