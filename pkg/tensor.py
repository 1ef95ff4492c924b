"""
SpecTf Cloud Screening - Tensor Core

This module implements the minimal dense tensor substrate the architectures
are built from: 1D/2D/3D float64 tensors, the forward operations the models
need, and tape-based reverse-mode differentiation for training.

Key Features:
- float64 storage and accumulation everywhere
- Overflow-safe softmax and layer normalization
- Dynamic gradient tape recorded only inside a ``with GradTape()`` block
- Adjoint replay in exact reverse execution order
- Central finite-difference oracle for checking every gradient

A tape is confined to the thread that opened it; forward ops on distinct
tensors are pure and may run concurrently when no tape is active.
"""

import logging
import math
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from constants import GELU_COEFFICIENT, LAYER_NORM_EPS
from errors import (
    ContractError, DegenerateNormalizationError, DimensionError, NumericInputError
)

logger = logging.getLogger(__name__)

Adjoint = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

GELU_SCALE = math.sqrt(2.0 / math.pi)
FD_STEP = 1e-5
FD_RELATIVE_EPS = 1e-8


class Tensor:
    """
    Dense float64 tensor.

    Attributes:
        data (np.ndarray): values in row-major order
        requires_grad (bool): whether ops on this tensor are recorded
        name (str): optional parameter name
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if array.ndim > 3:
            raise DimensionError(f"tensors are at most 3D, got shape {array.shape}")
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {array.shape}")
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self):
        label = f" name='{self.name}'" if self.name else ""
        return f"<Tensor shape={self.shape}{label} requires_grad={self.requires_grad}>"


@dataclass
class TapeEntry:
    """One executed op: its inputs, its output and the adjoint rule"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    adjoint: Adjoint


class GradTape:
    """
    Ordered record of executed ops.

    Ops executed inside ``with GradTape() as tape:`` whose inputs require
    gradients are appended in execution order; ``backward`` replays their
    adjoints in exact reverse order.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.entries)


_local = threading.local()


def _tape_stack() -> List[GradTape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def _active_tape() -> Optional[GradTape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(op: str, array: np.ndarray, inputs: Tuple[Tensor, ...], adjoint: Adjoint) -> Tensor:
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(array, needs_grad)
    tape = _active_tape()
    if needs_grad and tape is not None:
        tape.entries.append(TapeEntry(op, inputs, out, adjoint))
    return out


def _require_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericInputError(f"{op}: input contains non-finite values")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last(array: np.ndarray) -> np.ndarray:
    return np.swapaxes(array, -1, -2)


# =============================================================================
# LINEAR ALGEBRA
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes, batched over a leading axis.

    Supports (m×k)(k×p), (B×m×k)(k×p) and (B×m×k)(B×k×p).

    Raises:
        DimensionError: if the inner extents (or batch extents) differ
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: batch extents differ for shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def adjoint(g):
        grad_a = _unbroadcast(np.matmul(g, _swap_last(b_data)), a_data.shape)
        grad_b = _unbroadcast(np.matmul(_swap_last(a_data), g), b_data.shape)
        return grad_a, grad_b

    return _emit("matmul", np.matmul(a_data, b_data), (a, b), adjoint)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose: need at least 2 axes, got shape {x.shape}")
    return _emit("transpose", _swap_last(x.data).copy(), (x,),
                 lambda g: (_swap_last(g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a trailing-axes bias such as shape (d,)."""
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot combine shapes {a.shape} and {b.shape}") from exc
    a_shape, b_shape = a.shape, b.shape
    return _emit("add", out, (a, b),
                 lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with the same broadcasting rule as ``add``."""
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"multiply: cannot combine shapes {a.shape} and {b.shape}") from exc
    a_data, b_data = a.data, b.data
    return _emit("multiply", out, (a, b),
                 lambda g: (_unbroadcast(g * b_data, a_data.shape),
                            _unbroadcast(g * a_data, b_data.shape)))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    return _emit("scale", x.data * factor, (x,), lambda g: (g * factor,))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias over the last axis."""
    return add(matmul(x, weight), bias)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``."""
    arrays = [t.data for t in tensors]
    sizes = [array.shape[axis] for array in arrays]
    offsets = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit("concat", np.concatenate(arrays, axis=axis), tuple(tensors), adjoint)


# =============================================================================
# REDUCTIONS
# =============================================================================

def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    shape = x.shape
    return _emit("sum", np.array(x.data.sum()), (x,),
                 lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    """Mean of every element, as a scalar tensor."""
    shape, count = x.shape, x.size
    return _emit("mean", np.array(x.data.sum() / count), (x,),
                 lambda g: (np.full(shape, float(g) / count),))


def max_pool(x: Tensor, axis: int = -2) -> Tensor:
    """
    Maximum along ``axis`` (the sequence axis by default).

    The adjoint routes each gradient to the lowest-index argmax, so ties
    resolve the same way in every run.
    """
    axis = axis % x.ndim
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)
    shape = x.shape

    def adjoint(g):
        grad = np.zeros(shape)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _emit("max_pool", out, (x,), adjoint)


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select ``x[i, indices[i]]`` for each row of a 2D tensor."""
    indices = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or indices.shape != (x.shape[0],):
        raise DimensionError(f"pick: shape {x.shape} does not match {indices.shape[0]} row indices")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def adjoint(g):
        grad = np.zeros(shape)
        grad[rows, indices] = g
        return (grad,)

    return _emit("pick", x.data[rows, indices], (x,), adjoint)


def log_clamped(x: Tensor, floor: float) -> Tensor:
    """log(max(x, floor)); the clamped region has zero gradient."""
    clamped = np.maximum(x.data, floor)
    active = x.data > floor
    data = x.data
    return _emit("log", np.log(clamped), (x,),
                 lambda g: (np.where(active, g / np.where(active, data, 1.0), 0.0),))


# =============================================================================
# NORMALIZATION AND ACTIVATIONS
# =============================================================================

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Softmax along ``axis``, computed after subtracting the maximum.

    Raises:
        NumericInputError: if the input is not finite
    """
    _require_finite(x, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def adjoint(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (x,), adjoint)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """
    Affine layer normalization over the last axis.

    Raises:
        DegenerateNormalizationError: if the feature axis has a single entry
        DimensionError: if gain/bias do not match the feature axis
    """
    d = x.shape[-1]
    if d < 2:
        raise DegenerateNormalizationError("layer_norm needs at least 2 features per row")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must both be ({d},)")
    _require_finite(x, "layer_norm")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * rstd
    gain_data = gain.data

    def adjoint(g):
        g_normed = g * gain_data
        grad_x = rstd * (g_normed
                         - g_normed.mean(axis=-1, keepdims=True)
                         - normed * (g_normed * normed).mean(axis=-1, keepdims=True))
        grad_gain = (g * normed).reshape(-1, d).sum(axis=0)
        grad_bias = g.reshape(-1, d).sum(axis=0)
        return grad_x, grad_gain, grad_bias

    return _emit("layer_norm", normed * gain_data + bias.data, (x, gain, bias), adjoint)


class Activation(Enum):
    """Elementwise activations used by the architectures"""
    TANH = "tanh"
    GELU = "gelu"


def activation(x: Tensor, kind: Union[Activation, str]) -> Tensor:
    """
    Elementwise activation.

    gelu is the tanh approximation
    0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    """
    kind = Activation(kind)
    _require_finite(x, kind.value)
    data = x.data
    if kind is Activation.TANH:
        out = np.tanh(data)
        return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out ** 2),))

    inner = GELU_SCALE * (data + GELU_COEFFICIENT * data ** 3)
    t = np.tanh(inner)
    out = 0.5 * data * (1.0 + t)

    def adjoint(g):
        d_inner = GELU_SCALE * (1.0 + 3.0 * GELU_COEFFICIENT * data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * data * (1.0 - t ** 2) * d_inner),)

    return _emit("gelu", out, (x,), adjoint)


def tanh(x: Tensor) -> Tensor:
    return activation(x, Activation.TANH)


def gelu(x: Tensor) -> Tensor:
    return activation(x, Activation.GELU)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ContractError(f"dropout rate must be below 1, got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# =============================================================================
# REVERSE MODE
# =============================================================================

def backward(tape: GradTape, loss: Tensor,
             params: Union[Sequence[Tensor], Mapping[str, Tensor]]):
    """
    Replay the tape's adjoints in reverse order.

    Args:
        tape: tape the loss was recorded on
        loss: scalar tensor
        params: tensors to return gradients for (a sequence or a name mapping)

    Returns:
        Gradients shaped like ``params``: a list for a sequence, a dict for a
        mapping. Parameters not on the path to the loss get exact zeros.

    Raises:
        ContractError: if the loss is not a scalar
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    adjoints: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = adjoints.pop(id(entry.output), None)
        if g is None:
            continue
        for inp, grad in zip(entry.inputs, entry.adjoint(g)):
            if grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad
            else:
                adjoints[key] = grad

    def gradient_of(param: Tensor) -> np.ndarray:
        grad = adjoints.get(id(param))
        if grad is None:
            return np.zeros_like(param.data)
        return np.asarray(grad, dtype=np.float64).reshape(param.shape)

    if isinstance(params, Mapping):
        return {name: gradient_of(param) for name, param in params.items()}
    return [gradient_of(param) for param in params]


def finite_difference_gradients(f: Callable[[], Tensor], params: Sequence[Tensor],
                                h: float = FD_STEP) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Analytic gradients and their central-difference estimates.

    ``f`` rebuilds the scalar loss from the current parameter values; it is
    called once under a tape and twice per coordinate without one.

    Returns:
        (analytic, numeric): one array per parameter, shaped like it
    """
    params = list(params)
    with GradTape() as tape:
        loss = f()
    analytic = backward(tape, loss, params)

    numeric = []
    for param in params:
        estimate = np.zeros_like(param.data)
        for index in np.ndindex(param.shape):
            original = param.data[index]
            param.data[index] = original + h
            up = f().item()
            param.data[index] = original - h
            down = f().item()
            param.data[index] = original
            estimate[index] = (up - down) / (2.0 * h)
        numeric.append(estimate)
    return analytic, numeric


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|analytic − numeric| / (|analytic| + 1e-8), per coordinate."""
    return np.abs(analytic - numeric) / (np.abs(analytic) + FD_RELATIVE_EPS)


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            h: float = FD_STEP) -> float:
    """
    Max over every coordinate of |analytic − numeric| / (|analytic| + 1e-8).

    A constant ``f`` scores 0: both gradients are exactly zero.
    """
    analytic, numeric = finite_difference_gradients(f, params, h)
    worst = max((float(relative_gradient_error(a, n).max(initial=0.0))
                 for a, n in zip(analytic, numeric)), default=0.0)
    logger.debug("finite difference check over %d tensors: max relative error %.3e",
                 len(analytic), worst)
    return worst
