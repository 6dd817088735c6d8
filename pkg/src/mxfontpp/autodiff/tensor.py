"""Dense tensor with tape-recorded reverse-mode differentiation."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class BackwardError(RuntimeError):
    """backward() was called on something it cannot differentiate."""


class Node:
    """One recorded operation: its inputs and the adjoint rule."""

    __slots__ = ("op", "inputs", "backward_fn", "seq", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable, seq: int):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.seq = seq
        self.consumed = False


class Tape:
    """Ordered record of executed operations, confined to the creating thread."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._counter = 0
        self._owner = threading.get_ident()

    def record(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable) -> Node:
        if threading.get_ident() != self._owner:
            raise RuntimeError("a Tape may only be used by the thread that created it")
        node = Node(op, inputs, backward_fn, self._counter)
        self._counter += 1
        self.nodes.append(node)
        return node

    def reset(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()


class _Local(threading.local):
    def __init__(self) -> None:
        self.stack: list[Tape] = [Tape()]
        self.grad_enabled = True


_local = _Local()


def current_tape() -> Tape:
    return _local.stack[-1]


def is_grad_enabled() -> bool:
    return _local.grad_enabled


@contextlib.contextmanager
def no_grad():
    previous = _local.grad_enabled
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# op name -> factor; applied to every adjoint an op emits (negative controls)
_GRAD_SCALE: dict[str, float] = {}


@contextlib.contextmanager
def sabotage(op: str, factor: float = 2.0):
    """Scale the gradients emitted by ``op``; used to prove grad checks can fail."""
    _GRAD_SCALE[op] = factor
    try:
        yield
    finally:
        _GRAD_SCALE.pop(op, None)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        _check_finite(arr, name or "Tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, inputs: Sequence["Tensor"], backward_fn) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = _local.grad_enabled and any(t.requires_grad for t in inputs)
        out.requires_grad = track
        out._node = current_tape().record(op, inputs, backward_fn) if track else None
        return out

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.name = None
        out.requires_grad = False
        out._node = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar (implemented in ops) ------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf that ``loss`` depends on.

    Adjoints are replayed in reverse record order.  A graph can be walked once;
    the second call raises until a fresh forward pass is recorded.
    """
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise BackwardError("loss is detached from the tape (no requires_grad inputs)")
    if loss._node.consumed:
        raise BackwardError("graph already consumed by a previous backward(); rerun forward")

    nodes: dict[int, Node] = {}
    stack = [loss._node]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        if node.consumed:
            raise BackwardError(f"graph node {node.op} already consumed by a previous backward()")
        nodes[id(node)] = node
        for t in node.inputs:
            if t._node is not None and id(t._node) not in nodes:
                stack.append(t._node)
    order = sorted(nodes.values(), key=lambda n: n.seq, reverse=True)

    # adjoints keyed by producing node; leaves accumulate into .grad
    adjoint: dict[int, np.ndarray] = {id(loss._node): np.ones_like(loss.data)}
    for node in order:
        g_out = adjoint.pop(id(node), None)
        node.consumed = True
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        scale = _GRAD_SCALE.get(node.op)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if scale is not None:
                g = g * scale
            if g.shape != t.data.shape:
                raise DimensionError(f"{node.op}: adjoint shape {g.shape} != input shape {t.data.shape}")
            _check_finite(g, f"{node.op} (backward)")
            if t._node is None:
                t.grad = g.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + g
            else:
                key = id(t._node)
                adjoint[key] = g if key not in adjoint else adjoint[key] + g
        node.backward_fn = None
    tape = current_tape()
    tape.nodes = [n for n in tape.nodes if not n.consumed]
