"""Small reverse-mode differentiation engine on float32 numpy arrays.

Operations executed while a :class:`Tape` is active are recorded on it
whenever at least one input participates in differentiation.  Calling
:meth:`Tape.backward` walks the records in reverse and accumulates
gradients into the ``grad`` slot of every leaf tensor that has
``requires_grad`` set.  Gradients accumulate additively; zero them
between optimizer steps.

Only the primitives needed by the models in this package are provided.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class ConfigurationError(ValueError):
    """Invalid operator configuration (e.g. even temporal kernel)."""


class BatchSizeError(ValueError):
    """Too few rows to form batch statistics."""


class ContractError(RuntimeError):
    """A caller violated an engine contract (non-scalar loss, missing grad...)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=compute_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def compute_dtype():
    """Float type new tensors are stored in (float32 unless overridden)."""
    return getattr(_local, "dtype", DTYPE)


class precision:
    """Temporarily change the compute dtype on this thread."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype).type

    def __enter__(self):
        self._saved = compute_dtype()
        _local.dtype = self.dtype
        return self

    def __exit__(self, *exc):
        _local.dtype = self._saved


class branch_probe:
    """Record which branch every non-smooth op (relu, clip, abs) takes.

    Used by gradient checking: a finite-difference stencil whose two ends
    take different branches straddles a kink and is not a valid oracle.
    """

    def __enter__(self) -> "branch_probe":
        self.masks: list[np.ndarray] = []
        _local.probes = getattr(_local, "probes", []) + [self]
        return self

    def __exit__(self, *exc):
        _local.probes = _local.probes[:-1]

    def signature(self) -> bytes:
        return b"".join(np.packbits(m.reshape(-1)).tobytes() + b"|" for m in self.masks)


def _note_branch(mask: np.ndarray) -> None:
    probes = getattr(_local, "probes", None)
    if probes:
        probes[-1].masks.append(np.array(mask, dtype=bool))


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


@dataclass
class Tape:
    """Ordered record of differentiable operations (one per thread at a time)."""

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
        """Populate ``grad`` of every leaf reachable from ``loss``.

        Tensors in ``params`` that the loss does not reach receive zero
        gradients, so every listed parameter has a grad afterwards.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.zero_grad()
        if not loss.requires_grad:
            return
        if loss.is_leaf:
            _accumulate(loss, np.ones_like(loss.data))
            return
        if not self.records:
            raise ContractError("backward called on an empty tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.data.dtype)
                if gi.shape != t.shape:
                    raise AssertionError(f"{rec.op}: grad shape {gi.shape} != {t.shape}")
                if t.is_leaf:
                    _accumulate(t, gi)
                else:
                    key = id(t)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.records.append(Record(op, tuple(inputs), out, backward))
    return out


class no_grad:
    """Suspend recording (inference, feature extraction)."""

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(None)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()


# ---------------------------------------------------------------------------
# parameter containers


class ParamSet(OrderedDict):
    """Ordered name -> Tensor map of trainable parameters."""

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=requires_grad, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def count(self) -> int:
        return sum(t.size for t in self.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load_state_dict(self, state) -> None:
        missing = [k for k in self if k not in state]
        unexpected = [k for k in state if k not in self]
        if missing or unexpected:
            raise KeyError(f"missing={missing} unexpected={unexpected}")
        for k, t in self.items():
            arr = np.asarray(state[k], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "sub", (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        "mul", (a, b), ad * bd,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record("square", (a,), ad * ad, lambda g: (2.0 * g * ad,))


def abs_(a: Tensor) -> Tensor:
    ad = a.data
    _note_branch(ad >= 0)
    return _record("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient passes only where the input is strictly inside."""
    ad = a.data
    out = np.clip(ad, lo, hi)
    mask = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        mask &= ad > lo
    if hi is not None:
        mask &= ad < hi
    _note_branch(mask)
    return _record("clip", (a,), out, lambda g: (g * mask,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    _note_branch(mask)
    return _record("relu", (a,), a.data * mask, lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record("sum", (a,), a.data.sum(axis=axis, keepdims=keepdims), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def flatten(a: Tensor) -> Tensor:
    """Row-major flattening to one dimension."""
    return reshape(a, (-1,))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _record(
        "transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
        lambda g: (g.transpose(inverse),),
    )


def swapaxes_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _record(
        "broadcast", (a,), np.broadcast_to(a.data, shape).copy(),
        lambda g: (_unbroadcast(g, src),),
    )


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    src = a.shape

    def backward(g):
        full = np.zeros(src, dtype=g.dtype)
        full[index] += g
        return (full,)

    return _record("take", (a,), np.array(a.data[index]), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    ref = parts[0].shape
    ax = axis % len(ref)
    for i, p in enumerate(parts):
        if len(p.shape) != len(ref) or any(
            d != r for j, (d, r) in enumerate(zip(p.shape, ref)) if j != ax
        ):
            raise ShapeError(
                f"concat part {i} has shape {p.shape}, incompatible with part 0 {ref} on axis {ax}"
            )
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(parts))
        )

    return _record("concat", parts, np.concatenate([p.data for p in parts], axis=ax), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat` at the given boundaries."""
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {a.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        index = [slice(None)] * a.ndim
        index[ax] = slice(start, start + n)
        out.append(take(a, tuple(index)))
        start += n
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as in ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", (a, b), np.matmul(ad, bd), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-vector dense layer ``x @ w + b`` with ``w`` stored (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def temporal_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution along axis 1 of ``x``.

    ``x`` is (C_in, T) or (C_in, T, *rest); trailing axes (e.g. joints)
    are convolved independently with shared weights.  ``w`` is
    (C_out, C_in, k) with odd ``k``; padding is zeros.
    """
    if w.ndim != 3:
        raise ShapeError(f"temporal kernel must be (C_out, C_in, k), got {w.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ConfigurationError(f"temporal kernel size must be odd, got {k}")
    if x.ndim < 2 or x.shape[0] != c_in:
        raise ShapeError(f"temporal_conv1d input {x.shape} does not match kernel {w.shape}")
    xd = x.data
    T = xd.shape[1]
    rest = xd.shape[2:]
    pad = k // 2
    x2 = xd.reshape(c_in, T, -1)
    xp = np.zeros((c_in, T + 2 * pad, x2.shape[2]), dtype=xd.dtype)
    xp[:, pad:pad + T] = x2
    # cols[c, j, t, r] = xp[c, t + j, r]
    cols = np.stack([xp[:, j:j + T] for j in range(k)], axis=1)
    cols = cols.reshape(c_in * k, -1)
    wm = w.data.reshape(c_out, c_in * k)
    out = (wm @ cols).reshape((c_out, T) + rest)
    if b is not None:
        out = out + b.data.reshape((c_out,) + (1,) * (1 + len(rest)))

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = (wm.T @ g2).reshape(c_in, k, T, -1)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + T] += gcols[:, j]
        gx = gxp[:, pad:pad + T].reshape(xd.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record("temporal_conv1d", inputs, out, backward)


# ---------------------------------------------------------------------------
# normalization and probabilities


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (x,), p, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, backward)


def cross_entropy(logits: Tensor, labels, floor: float = -100.0) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[row, label]``.

    The log-probability is clamped below at ``floor``; clamped rows get
    no gradient.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): {labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    picked = logp[np.arange(n), labels]
    live = picked > floor
    _note_branch(live)
    loss = -np.where(live, picked, floor).mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return ((g / n) * p * live[:, None],)

    return _record("cross_entropy", (logits,), np.array(loss, dtype=logits.data.dtype), backward)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, features: int) -> "BatchNormState":
        return cls(np.zeros(features, dtype=DTYPE), np.ones(features, dtype=DTYPE))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize (B, F) rows feature-wise.

    Training mode uses biased batch variance for the output and updates
    the running estimates with the unbiased one; eval mode uses the
    running estimates and leaves them untouched.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm shapes x={x.shape} gamma={gamma.shape} beta={beta.shape}")
    B = x.shape[0]
    xd, gd = x.data, gamma.data
    if training:
        if B < 2:
            raise BatchSizeError(f"batch_norm in training mode needs at least 2 rows, got {B}")
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        m = float(momentum)
        state.mean = ((1 - m) * state.mean + m * mu).astype(state.mean.dtype)
        state.var = ((1 - m) * state.var + m * var * (B / (B - 1))).astype(state.var.dtype)
    else:
        mu, var = state.mean, state.var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu) * inv
    out = xhat * gd + beta.data

    def backward(g):
        gxhat = g * gd
        if training:
            gx = inv / B * (B * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record("batch_norm", (x, gamma, beta), out, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    xd, gd = x.data, gamma.data
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gd + beta.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gxhat = g * gd
        gx = inv / n * (
            n * gxhat - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record("layer_norm", (x, gamma, beta), out, backward)
