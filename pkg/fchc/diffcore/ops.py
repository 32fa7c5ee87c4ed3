"""
Differentiable primitives. Every function takes Tensors, returns a Tensor and
registers a backward closure on the active tape.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from fchc.diffcore.tensor import Tensor, make_result
from fchc.errors import ShapeMismatch


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from e


# ---- linear algebra ----

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return make_result(data, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return make_result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatch("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {e}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tensors, backward, "concat")


def slice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing, e.g. slice(x, (slice(None), slice(0, 3)))."""
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return make_result(np.array(data, copy=True), (a,), backward, "slice")


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {shape}") from e
    return make_result(data.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(a.data[index], (a,), backward, "gather_rows")


def sum(a: Tensor) -> Tensor:
    return make_result(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),), "sum")


# ---- non-linearities ----

def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    positive = a.data > 0
    data = np.where(positive, a.data, slope * a.data)
    return make_result(data, (a,), lambda g: (np.where(positive, g, slope * g),), "leaky_relu")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return make_result(np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so that exp never overflows
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    return make_result(data, (a,), lambda g: (g * data * (1.0 - data),), "sigmoid")


def ln(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return make_result(data, (a,), lambda g: (g / a.data,), "ln")


def identity(a: Tensor) -> Tensor:
    return a


# ---- hierarchy max ----

def max_over_mask(a: Tensor, mask) -> Tensor:
    """
    out[:, A] = max over the columns listed for A. `mask` is a DescendantMatrix
    or a sequence of sorted index arrays. The gradient of every output goes to
    exactly one input, the first (lowest index) maximizer.
    """
    index_lists = getattr(mask, "index_lists", mask)
    if a.ndim != 2 or a.shape[1] != len(index_lists):
        raise ShapeMismatch(f"max_over_mask: input {a.shape} does not match a mask over {len(index_lists)} columns")
    n = a.shape[0]
    arg = np.empty(a.shape, dtype=np.int64)
    for col, idx in enumerate(index_lists):
        arg[:, col] = np.asarray(idx)[np.argmax(a.data[:, idx], axis=1)]
    data = np.take_along_axis(a.data, arg, axis=1)

    def backward(g):
        full = np.zeros_like(a.data)
        rows = np.repeat(np.arange(n), a.shape[1])
        np.add.at(full, (rows, arg.ravel()), g.ravel())
        return (full,)

    return make_result(data, (a,), backward, "max_over_mask")


# ---- segment (neighborhood) ops ----

def segment_sum(values: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if values.shape[0] != segment_ids.shape[0]:
        raise ShapeMismatch(f"segment_sum: {values.shape[0]} values for {segment_ids.shape[0]} segment ids")
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, segment_ids, values.data)
    return make_result(out, (values,), lambda g: (g[segment_ids],), "segment_sum")


def segment_softmax(logits: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of the logits within each segment (one segment per neighborhood)."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if logits.shape[0] != segment_ids.shape[0]:
        raise ShapeMismatch(f"segment_softmax: {logits.shape[0]} logits for {segment_ids.shape[0]} segment ids")
    seg_max = np.full((num_segments,) + logits.shape[1:], -np.inf)
    np.maximum.at(seg_max, segment_ids, logits.data)
    ex = np.exp(logits.data - seg_max[segment_ids])
    denom = np.zeros_like(seg_max)
    np.add.at(denom, segment_ids, ex)
    data = ex / denom[segment_ids]

    def backward(g):
        weighted = np.zeros_like(seg_max)
        np.add.at(weighted, segment_ids, data * g)
        return (data * (g - weighted[segment_ids]),)

    return make_result(data, (logits,), backward, "segment_softmax")


def mean_over_heads(heads: Sequence[Tensor]) -> Tensor:
    heads = tuple(heads)
    shapes = {h.shape for h in heads}
    if len(shapes) != 1:
        raise ShapeMismatch(f"mean_over_heads: heads have different shapes {sorted(shapes)}")
    count = len(heads)
    data = np.mean(np.stack([h.data for h in heads]), axis=0)
    return make_result(data, heads, lambda g: tuple(g / count for _ in heads), "mean_over_heads")


# ---- regularization ----

def dropout_mask(shape: Tuple[int, ...], rate: float, seed: int, epoch: int, layer: int) -> np.ndarray:
    """
    Keep-mask from a counter-based generator keyed by (seed, epoch, layer),
    so any step can be replayed independently of what ran before it.
    """
    key = np.random.SeedSequence([int(seed), int(epoch), int(layer)])
    rng = np.random.Generator(np.random.Philox(key))
    return rng.random(shape) >= rate


def dropout(a: Tensor, rate: float, seed: int, epoch: int = 0, layer: int = 0, training: bool = True) -> Tensor:
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = dropout_mask(a.shape, rate, seed, epoch, layer) / (1.0 - rate)
    return make_result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ---- externally differentiated objectives ----

def objective(inputs: Tensor, value: float, grad: np.ndarray, name: str = "objective") -> Tensor:
    """
    A scalar whose value and gradient with respect to `inputs` were computed
    outside the tape (e.g. by the loss module).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != inputs.shape:
        raise ShapeMismatch(f"objective: gradient {grad.shape} does not match input {inputs.shape}")
    return make_result(np.array(float(value)), (inputs,), lambda g: (g * grad,), name)


def activation(name: Optional[str]):
    """Look up a non-linearity by its config name."""
    table = {
        None: identity,
        "identity": identity,
        "linear": identity,
        "relu": relu,
        "sigmoid": sigmoid,
        "leaky_relu": leaky_relu,
    }
    if name not in table:
        raise ValueError(f"Unknown activation '{name}'")
    return table[name]
