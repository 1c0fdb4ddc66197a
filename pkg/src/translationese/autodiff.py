"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the output records its parents and a backward rule. Calling
:func:`backward` on a scalar loss orders the recorded graph topologically
(a :class:`Tape`), runs the rules once each in reverse order and
accumulates gradients on the leaves. A graph is consumed by its backward
pass; the next forward pass builds a fresh one.

Arrays are float32 by default. ``set_float64(True)`` (or the
``float64_mode()`` context) switches newly created tensors to float64,
which is what the gradient checks and bit-exact reproducibility tests use.
"""

from __future__ import annotations

import contextlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

_DTYPE = np.float32
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def default_dtype():
    return _DTYPE


def set_float64(enabled: bool) -> None:
    global _DTYPE
    _DTYPE = np.float64 if enabled else np.float32


@contextlib.contextmanager
def float64_mode(enabled: bool = True):
    previous = _DTYPE
    set_float64(enabled)
    try:
        yield
    finally:
        set_float64(previous is np.float64)


@dataclass
class RowGrad:
    """Gradient of an embedding table that touches only a few rows."""

    shape: tuple
    rows: np.ndarray
    values: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        np.add.at(out, self.rows, self.values)
        return out

    def coalesce(self) -> "RowGrad":
        rows, inverse = np.unique(self.rows, return_inverse=True)
        values = np.zeros((len(rows),) + tuple(self.shape[1:]), dtype=self.values.dtype)
        np.add.at(values, inverse, self.values)
        return RowGrad(self.shape, rows, values)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "sparse", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, *, name: str | None = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | RowGrad | None = None
        self.sparse = False
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def dense_grad(self) -> np.ndarray | None:
        if isinstance(self.grad, RowGrad):
            return self.grad.dense()
        return self.grad

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap constants in the dtype of the tensor they meet."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.data.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.data.dtype), b
    return as_tensor(a), as_tensor(b)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = (x * cdf).astype(x.dtype)

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(out, (a,), back)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


# ---------------------------------------------------------------- reductions and shape


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)

    def back(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in parts)


def index(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]
    basic = _is_basic(key)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(out, (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, tensors, back)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), back)


def cumulative_sum(a, axis: int = -2) -> Tensor:
    """Running sum along the sequence axis (rows are positions by default)."""
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def back(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _result(out, (a,), back)


def columnwise_dot(x, c, axis: int = -1) -> Tensor:
    """Dot product of matching position vectors: ``sum(x * c, axis)``.

    With inputs laid out ``(..., length, dim)`` this yields one weight per
    position.
    """
    x, c = as_tensor(x), as_tensor(c)
    if x.shape != c.shape:
        raise ShapeError(f"columnwise_dot: shapes {x.shape} and {c.shape} differ")
    out = np.sum(x.data * c.data, axis=axis)

    def back(g):
        g = np.expand_dims(g, axis)
        return g * c.data, g * x.data

    return _result(out, (x, c), back)


def broadcast_mul(x, w, axis: int = -1) -> Tensor:
    """Scale ``x`` by ``w`` repeated along ``axis``, the axis ``w`` lacks."""
    x, w = as_tensor(x), as_tensor(w)
    expected = x.shape[:axis % x.ndim] + x.shape[axis % x.ndim + 1 :]
    if w.shape != expected:
        raise ShapeError(f"broadcast_mul: weight shape {w.shape} does not fit input {x.shape}")
    wx = np.expand_dims(w.data, axis)

    def back(g):
        return g * wx, np.sum(g * x.data, axis=axis)

    return _result(x.data * wx, (x, w), back)


# ---------------------------------------------------------------- normalization and heads


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} and shift {shift.shape} must both be ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def back(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)

    return _result(out, (x, gain, shift), back)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), back)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits, axis=-1)
    picked = index(lp, (np.arange(len(labels)), labels))
    return neg(mean(picked))


def mean_pool(x, mask=None, axis: int = -2) -> Tensor:
    """Average over ``axis``; a 0/1 ``mask`` restricts the average to real positions."""
    x = as_tensor(x)
    if mask is None:
        return mean(x, axis=axis)
    m = np.asarray(mask, dtype=x.data.dtype)
    lead = x.shape[: axis % x.ndim + 1]
    if m.shape != lead:
        raise ShapeError(f"mean_pool: mask {m.shape} does not match {lead} of input {x.shape}")
    counts = m.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ShapeError("mean_pool: a sequence has no unmasked positions")
    weights = np.expand_dims(m / counts, -1)

    def back(g):
        return (np.expand_dims(g, axis) * weights,)

    return _result(np.sum(x.data * weights, axis=axis), (x,), back)


def embedding_lookup(table, ids) -> Tensor:
    """Rows of ``table`` at integer ``ids`` (any shape); output shape ``ids.shape + (dim,)``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: ids outside [0, {table.shape[0]})")
    out = table.data[ids]

    def back(g):
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(-1, table.shape[1])
        if table.sparse:
            return (RowGrad(table.shape, flat_ids, flat_g),)
        full = np.zeros_like(table.data)
        np.add.at(full, flat_ids, flat_g)
        return (full,)

    return _result(out, (table,), back)


# ---------------------------------------------------------------- backward pass


@dataclass
class Tape:
    """Recorded operations reachable from one loss, parents before children."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
        return cls(order)


def _accumulate(store: dict, node: Tensor, g) -> None:
    prev = store.get(id(node))
    if prev is None:
        store[id(node)] = g
    elif isinstance(prev, RowGrad) or isinstance(g, RowGrad):
        parts = [x if isinstance(x, RowGrad) else None for x in (prev, g)]
        if all(parts):
            store[id(node)] = RowGrad(
                prev.shape, np.concatenate([prev.rows, g.rows]), np.concatenate([prev.values, g.values])
            )
        else:
            dense = [x.dense() if isinstance(x, RowGrad) else x for x in (prev, g)]
            store[id(node)] = dense[0] + dense[1]
    else:
        store[id(node)] = prev + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires a gradient."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise TapeError("backward: this graph was already used; run a new forward pass")
    if not loss.requires_grad:
        raise TapeError("backward: loss does not depend on any tensor that requires a gradient")
    tape = Tape.from_loss(loss)
    grads: dict[int, object] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is None:
                continue
            if node.grad is None:
                node.grad = g
            else:
                holder = {id(node): node.grad}
                _accumulate(holder, node, g)
                node.grad = holder[id(node)]
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if parent.requires_grad:
                    _accumulate(grads, parent, pg)
        node._consumed = True
        node._backward = None
        node._parents = ()
        node.requires_grad = False


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update from each parameter's ``.grad``.

    Row-sparse gradients (from tables flagged ``sparse``) update only the
    rows they touch; untouched rows keep their parameters and moments.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if isinstance(g, RowGrad):
            g = g.coalesce()
            rows = g.rows
            m[rows] = beta1 * m[rows] + (1.0 - beta1) * g.values
            v[rows] = beta2 * v[rows] + (1.0 - beta2) * g.values * g.values
            p.data[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + eps)
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"TRNSLTSE-PARAMS\x00"
_VERSION = 1
_DTYPES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
_DTYPES_INV = {v: k for k, v in _DTYPES.items()}


def dumps_params(params: Mapping[str, np.ndarray | Tensor]) -> bytes:
    """Versioned little-endian blob: names, dtypes, shapes and raw values, in name order."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(params))]
    for name in sorted(params):
        arr = params[name]
        arr = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr)
        if arr.dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BI", _DTYPES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(chunks)


def loads_params(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(_MAGIC):
        raise ValueError("not a parameter checkpoint")
    pos = len(_MAGIC)
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        code, ndim = struct.unpack_from("<BI", blob, pos)
        pos += 5
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        dtype = _DTYPES_INV[code].newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return out


def save_params(params: Mapping[str, np.ndarray | Tensor], path: str | Path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    return loads_params(Path(path).read_bytes())
