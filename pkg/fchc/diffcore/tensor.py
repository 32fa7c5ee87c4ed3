"""
Tensors and the tape that records differentiable operations.

Operations register themselves on the innermost active Tape when at least one of
their inputs requires a gradient. `Tape.backward` replays the records in exact
reverse registration order.
"""
import os
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from fchc.errors import NonFiniteValue

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DEBUG = os.getenv("FCHC_DEBUG", "").lower() in ("1", "true", "yes")
_TAPE_STACK: List["Tape"] = []


def set_debug(enabled: bool) -> None:
    """Enable NaN/Inf detection after every primitive."""
    global _DEBUG
    _DEBUG = enabled


def is_debug() -> bool:
    return _DEBUG


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar, see fchc.diffcore.ops
    def __add__(self, other):
        from fchc.diffcore import ops
        return ops.add(self, ops.as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from fchc.diffcore import ops
        return ops.add(self, ops.scale(ops.as_tensor(other), -1.0))

    def __rsub__(self, other):
        from fchc.diffcore import ops
        return ops.add(ops.as_tensor(other), ops.scale(self, -1.0))

    def __mul__(self, other):
        from fchc.diffcore import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, ops.as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from fchc.diffcore import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from fchc.diffcore import ops
        return ops.matmul(self, other)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Tuple[Tensor, ...], backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """
    Ordered record of primitive ops. A tape belongs to a single training worker.

        with Tape() as tape:
            loss = f(params)
        tape.backward(loss)
    """

    def __init__(self):
        self._records: List[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be closed in LIFO order"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...], backward: BackwardFn) -> None:
        self._records.append(_Record(output, inputs, backward))

    def backward(self, root: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(root)/d(input) into `.grad` of every recorded input that requires a gradient."""
        root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for rec in reversed(self._records):
            if rec.output.grad is None:
                continue
            grads = rec.backward(rec.output.grad)
            for tensor, g in zip(rec.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    tensor.grad = tensor.grad + g

    def clear(self) -> None:
        self._records.clear()


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def make_result(data: np.ndarray, inputs: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's forward value and register its backward closure when needed."""
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"Non-finite value produced by '{op}'")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, name=op)
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(out, inputs, backward)
    return out
