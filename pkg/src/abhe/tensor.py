"""Dense float tensors with taped reverse-mode differentiation.

A ``Tensor`` wraps a numpy array (row-major, channels-last for images).
Operations defined in :mod:`abhe.ops` record themselves on the currently
active ``Tape``; ``Tape.backward`` replays the records in exact reverse
execution order and accumulates gradients into every ``requires_grad``
leaf reachable from the loss.

Compute dtype is float32 by default; ``default_dtype`` switches new
tensors to float64 (used by the gradient-check suite to isolate
finite-difference noise).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Tape misuse: non-scalar loss, repeated backward, nesting errors."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


_DEFAULT_DTYPE = np.float32


def get_default_dtype():
    return _DEFAULT_DTYPE


class default_dtype:
    """Context manager that switches the dtype of newly created tensors."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype).type

    def __enter__(self):
        global _DEFAULT_DTYPE
        self._saved = _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self.dtype
        return self

    def __exit__(self, *exc):
        global _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self._saved
        return False


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    Tensors are treated as immutable once created: ops return new
    tensors and never write into their inputs. ``grad`` is populated
    (as a plain ndarray) by ``Tape.backward`` for ``requires_grad``
    leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the real work lives in abhe.ops
    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis=axis, keepdims=keepdims)


class _Node:
    """One executed op: inputs, and the VJP closure producing input grads."""

    __slots__ = ("inputs", "out", "vjp")

    def __init__(self, inputs, out, vjp):
        self.inputs = inputs
        self.out = out
        self.vjp = vjp


class Tape:
    """Ordered record of executed ops for one backward pass.

    Use as a context manager; ops executed inside record themselves when
    any input is differentiable. ``backward`` may be called once per
    tape (call ``reset`` to reuse, which drops the records).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._spent = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape context exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        self._nodes.clear()
        self._spent = False

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every requires_grad leaf reachable from ``loss``."""
        if self._spent:
            raise TapeError("backward already ran on this tape; call reset() first")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise TapeError("backward needs a scalar loss tensor")
        self._spent = True
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            input_grads = node.vjp(g)
            for t, ig in zip(node.inputs, input_grads):
                if ig is None or t is None:
                    continue
                if not (t.requires_grad or t._tape is self):
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = ig if prev is None else prev + ig
        for node in self._nodes:
            for t in node.inputs:
                if t is not None and t.requires_grad:
                    g = grads.get(id(t))
                    if g is not None:
                        t.grad = g if t.grad is None else t.grad + g
                        grads.pop(id(t))
        # a requires_grad loss that is itself a leaf
        if loss.requires_grad and id(loss) in grads:
            g = grads[id(loss)]
            loss.grad = g if loss.grad is None else loss.grad + g


def record_op(out: Tensor, inputs: Sequence[Optional[Tensor]], vjp: Callable) -> Tensor:
    """Attach ``out = op(inputs)`` to the active tape, if any input is live.

    ``vjp(grad_out) -> sequence of grads`` aligned with ``inputs``
    (``None`` entries mean no gradient flows to that input). Called by
    every differentiable op; cheap no-op outside a tape.
    """
    tape = current_tape()
    if tape is None:
        return out
    live = False
    for t in inputs:
        if t is not None and (t.requires_grad or t._tape is tape):
            live = True
            break
    if not live:
        return out
    out._tape = tape
    tape._nodes.append(_Node(list(inputs), out, vjp))
    return out


def zero_grads(params) -> None:
    """Clear ``grad`` on an iterable (or name->Tensor mapping) of tensors."""
    if hasattr(params, "values"):
        params = params.values()
    for p in params:
        p.grad = None


from . import ops as _ops  # noqa: E402  (cycle resolved at import time)
