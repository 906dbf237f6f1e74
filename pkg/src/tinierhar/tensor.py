"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record themselves when a :class:`Tape` is active in the
current context *and* at least one input requires a gradient, so plain
inference runs without any bookkeeping. The active tape and the MAC counter
live in :mod:`contextvars`, which keeps independent tapes in different
threads fully isolated.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError, UsageError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "active_tape", default=None
)
_MAC_COUNTER: contextvars.ContextVar[Optional["MacCounter"]] = contextvars.ContextVar(
    "mac_counter", default=None
)


class Tensor:
    """N-dimensional float array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=np.float64):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic -----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


@dataclass
class _Node:
    out: Tensor
    parents: Tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations.

    Use as a context manager around a forward pass, then call
    :meth:`backward` on the scalar loss::

        with Tape() as tape:
            loss = cross_entropy(model(x), y)
            tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: BackwardFn) -> None:
        out.is_leaf = False
        self.nodes.append(_Node(out, parents, backward))

    def reset(self) -> None:
        self.nodes.clear()

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into the ``grad`` of every leaf on the tape.

        The tape is consumed: it is empty afterwards.
        """
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.is_leaf or not loss.requires_grad:
            raise UsageError("loss was not produced through this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owned: set[int] = set()  # pending buffers allocated here, safe to update in place
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            owned.discard(id(node.out))
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    _accumulate(parent.grad, pg)
                    continue
                key = id(parent)
                prev = pending.get(key)
                if key not in owned:
                    if prev is None and not isinstance(pg, SliceGrad):
                        pending[key] = pg
                        continue
                    buf = np.zeros_like(parent.data)
                    if prev is not None:
                        buf += prev
                    pending[key] = prev = buf
                    owned.add(key)
                _accumulate(prev, pg)
        self.reset()


class SliceGrad:
    """Gradient that is zero everywhere except ``full[index] = value``."""

    __slots__ = ("index", "value")

    def __init__(self, index, value: np.ndarray):
        self.index = index
        self.value = value


def _accumulate(buf: np.ndarray, g) -> None:
    if isinstance(g, SliceGrad):
        buf[g.index] += g.value
    else:
        buf += g


def backward(tape: Tape, loss: Tensor) -> None:
    """Functional alias of :meth:`Tape.backward`."""
    tape.backward(loss)


class MacCounter:
    """Counts multiplies executed by the matmul and convolution kernels."""

    def __init__(self):
        self.total = 0
        self._token = None

    def add(self, n: int) -> None:
        self.total += int(n)

    def __enter__(self) -> "MacCounter":
        self._token = _MAC_COUNTER.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _MAC_COUNTER.reset(self._token)


def count_macs(n: int) -> None:
    counter = _MAC_COUNTER.get()
    if counter is not None:
        counter.add(n)


def is_recording() -> bool:
    return _ACTIVE_TAPE.get() is not None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` and record the producing op when a gradient is needed."""
    tape = _ACTIVE_TAPE.get()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.is_leaf = True
    out.requires_grad = False
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: a axis -1 is {a.shape[-1]}, b axis -2 is {b.shape[-2]}"
        )
    out = a.data @ b.data
    count_macs(out.size * a.shape[-1])

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


# shape manipulation ---------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape),)

    return make_result(np.asarray(out), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; fancy indexing is not supported."""

    return make_result(a.data[index], (a,), lambda g: (SliceGrad(index, g),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)
