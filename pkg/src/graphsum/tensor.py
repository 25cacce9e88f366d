"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the summarizer needs are provided. Every op that has at
least one input with ``requires_grad`` appends a record to the active tape;
``backward`` replays that tape in reverse exactly once.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, TapeError, ValidationError

DTYPE = np.float64
# Stand-in for -inf in additive biases; keeps every stored value finite.
NEG_LARGE = -1e9


@dataclass
class Record:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    records: list = field(default_factory=list)
    consumed: bool = False

    def __len__(self):
        return len(self.records)


_current_tape = Tape()
_grad_enabled = True


def current_tape() -> Tape:
    return _current_tape


def new_tape() -> Tape:
    """Start a fresh tape and make it current. Records on the old one are dropped."""
    global _current_tape
    _current_tape = Tape()
    return _current_tape


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

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
        if isinstance(other, Tensor):
            raise ShapeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(op: str, data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = _current_tape
        _current_tape.records.append(Record(op, inputs, out, backward_fn))
    return out


def _check_broadcast(a: tuple, b: tuple, op: str):
    """Allow equal shapes, scalars, equal-rank size-1 expansion, or a trailing-suffix operand."""
    if a == b or a == () or b == ():
        return
    if len(a) == len(b):
        if all(x == y or x == 1 or y == 1 for x, y in zip(a, b)):
            return
    else:
        short, long_ = (a, b) if len(a) < len(b) else (b, a)
        if long_[len(long_) - len(short):] == short:
            return
    raise ShapeError(f"{op}: unsupported broadcast between shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make("mul", ad * bd, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _make("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=()) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _make("getitem", np.array(x.data[idx], dtype=DTYPE), (x,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError(f"token id out of range [0, {table.shape[0]})")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _make("embedding", table.data[ids], (table,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _make("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def dropout(x: Tensor, p: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


def elementwise(x: Tensor, kind: str, p: float = 0.0, train: bool = False, rng=None) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "dropout":
        return dropout(x, p, train, rng)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# fused normalizations


def softmax_with_bias(logits: Tensor, bias=None, mask=None) -> Tensor:
    """Softmax over the last axis of ``logits + bias``.

    ``mask`` is a boolean array broadcastable to the logits, True where a
    position may receive mass. A slice with every position masked is an error.
    """
    logits = as_tensor(logits)
    z = logits
    if bias is not None:
        z = add(logits, bias)
    zd = z.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), zd.shape)
        if not mask.any(axis=-1).all():
            raise ValidationError("softmax slice with every position masked")
        zd = np.where(mask, zd, -np.inf)
    m = zd.max(axis=-1, keepdims=True)
    e = np.exp(zd - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (z,), bw)


def softmax(logits: Tensor, mask=None) -> Tensor:
    return softmax_with_bias(logits, None, mask)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=-1, keepdims=True))
    y = x.data - lse
    p = np.exp(y)
    return _make("log_softmax", y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-8) -> Tensor:
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    d = x.shape[-1]
    if gain.shape != (d,) or offset.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{offset.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data
    gd = gain.data

    def bw(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", out, (x, gain, offset), bw)


def cross_entropy_label_smoothed(logits: Tensor, targets, epsilon: float, pad_id: int,
                                 reduction: str = "mean", kl: bool = False) -> Tensor:
    """Cross entropy of ``logits`` (T x V) against label-smoothed targets.

    The smoothed target puts ``1 - epsilon`` on the gold id and
    ``epsilon / (V - 1)`` on every other id. Positions whose target equals
    ``pad_id`` are skipped. With ``kl=True`` the entropy of the smoothed
    target is subtracted, so the value is a KL divergence with floor 0; the
    gradient is unchanged.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"label smoothing must lie in [0, 1), got {epsilon}")
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} disagree")
    T, V = logits.shape
    if targets.size and targets.max() >= V:
        raise ValidationError(f"target id {targets.max()} >= vocabulary size {V}")
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ValidationError("every target position is padding")
    off = epsilon / (V - 1)
    q = np.full((T, V), off)
    q[np.arange(T), targets] = 1.0 - epsilon
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    logp = z - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))
    per_pos = -(q * logp).sum(axis=-1)
    if kl:
        ent = 0.0
        if epsilon > 0:
            ent -= (V - 1) * off * np.log(off)
        if epsilon < 1:
            ent -= (1.0 - epsilon) * np.log(1.0 - epsilon)
        per_pos = per_pos - ent
    if reduction == "mean":
        scale = 1.0 / n
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ConfigError(f"unknown reduction {reduction!r}")
    value = (per_pos * keep).sum() * scale
    p = np.exp(logp)

    def bw(g):
        return ((p - q) * keep[:, None] * (g * scale),)

    return _make("cross_entropy", np.asarray(value), (logits,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor):
    """Populate ``.grad`` (accumulating) on every leaf that requires it."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced on a tape (no input requires grad?)")
    if tape.consumed:
        raise TapeError("tape already consumed by an earlier backward call")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp._tape is None:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.consumed = True
    tape.records.clear()
    if tape is _current_tape:
        new_tape()


def check_finite(x: Tensor, where: str):
    if not np.isfinite(x.data).all():
        bad = ~np.isfinite(x.data)
        raise NumericError(f"{int(bad.sum())} non-finite values in {where} (first at {np.argwhere(bad)[0].tolist()})")
