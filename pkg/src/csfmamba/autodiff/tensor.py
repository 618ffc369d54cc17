"""Tensor, tape recording and the primitive registration machinery."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_DTYPE = {32: np.float32, 64: np.float64}
_state = {"dtype": np.float32}
_TAPES: list["Tape"] = []


def set_precision(bits: int) -> None:
    if bits not in _DTYPE:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _state["dtype"] = _DTYPE[bits]


def get_dtype():
    return _state["dtype"]


def get_precision() -> int:
    return 64 if _state["dtype"] is np.float64 else 32


@contextlib.contextmanager
def precision(bits: int):
    old = _state["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _state["dtype"] = old


class Tensor:
    """An n-d array with an optional gradient slot.

    Tensors created by user code are leaves; tensors produced by a
    primitive while a :class:`Tape` is active carry ``requires_grad`` when
    any input does.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operator sugar; the implementations live in ops
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
        return ops.multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.multiply(self, ops.reciprocal(other))

    def __neg__(self):
        from . import ops
        return ops.multiply(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.slice(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=get_dtype()) if not isinstance(x, np.ndarray) or x.dtype.kind != "f" else x
    return Tensor(arr)


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of executed primitives.

    Primitives append to the innermost active tape, so execution order is
    already a topological order of the graph.
    """

    records: list[Record] = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def recording() -> bool:
    return bool(_TAPES)


@contextlib.contextmanager
def no_record():
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")


def primitive(op: str, inputs: Sequence, out: np.ndarray, backward_fn: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and put a backward record on the active tape.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or None) per entry of ``inputs``.
    """
    _check_finite(op, out)
    result = Tensor(out)
    result.is_leaf = False
    if _TAPES and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        result.requires_grad = True
        _TAPES[-1].records.append(Record(op, tuple(inputs), result, backward_fn))
    return result


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse pass over ``tape``; accumulates into ``.grad`` of leaf tensors."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.is_leaf and loss.requires_grad:
        loss.grad = grads[id(loss)] if loss.grad is None else loss.grad + 1.0
        return
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise RuntimeError(f"{rec.op}: gradient shape {gi.shape} != input shape {inp.shape}")
            if inp.is_leaf:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
