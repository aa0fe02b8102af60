#!env python3
# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Dense float64 tensors with an explicit reverse-mode gradient tape.

Tensors are immutable once created. Operations record themselves on the active
`GradientTape` when at least one of their inputs is tracked by it; `backward`
then walks the tape in reverse order.

    with GradientTape() as tape:
        tape.watch(weights)
        loss = reduce_sum(square(matmul(x, weights)))
    grads = tape.backward(loss)
    grads[weights]  # numpy array with the shape of weights
"""

__all__ = [
    "ContractError",
    "DimensionError",
    "DomainError",
    "NumericError",
    "Tensor",
    "GradientTape",
    "current_tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "exp",
    "log",
    "tanh",
    "softplus",
    "scale",
    "absolute",
    "square",
    "elementwise",
    "reduce_sum",
    "reduce_mean",
    "reduce",
    "concat",
    "split",
    "gather_rows",
    "tile_rows",
    "finite_diff_check",
]

import threading
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit


class DimensionError(ValueError):
    """Raised when tensor shapes do not agree for an operation."""

    def __init__(self, op: str, *shapes: Tuple[int, ...], added_message: str = "") -> None:
        message = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if added_message:
            message += f" ({added_message})"
        super().__init__(message)


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or infinite values."""


class ContractError(ValueError):
    """Raised when a caller breaks a documented precondition."""


VectorJacobian = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Immutable dense array of float64 values."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self.data = array

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Wraps a freshly computed array without copying it."""
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor.data = array
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the tensor, () for a scalar."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Rank of the tensor."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of values."""
        return self.data.size

    @property
    def grad_id(self) -> Optional[int]:
        """Position of this tensor on the active tape, if it is tracked there."""
        tape = current_tape()
        if tape is None:
            return None
        return tape.index_of(self)

    def numpy(self) -> np.ndarray:
        """Returns a writable copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        """Returns the value of a one-element tensor."""
        if self.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


class _Node(NamedTuple):
    inputs: Tuple[Optional[int], ...]
    output: int
    vjp: Optional[VectorJacobian]


_local = threading.local()


def _tape_stack() -> List["GradientTape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Optional["GradientTape"]:
    """Returns the innermost active tape of this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradientTape:
    """Append-only record of operations, consumed by a single backward pass."""

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self.tensors: List[Tensor] = []
        self._index: Dict[int, int] = {}
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def index_of(self, tensor: Tensor) -> Optional[int]:
        """Returns the tape position of a tensor, or None if it is not tracked."""
        return self._index.get(id(tensor))

    def _register(self, tensor: Tensor) -> int:
        position = len(self.tensors)
        self.tensors.append(tensor)
        self._index[id(tensor)] = position
        return position

    def watch(self, *tensors: Union[Tensor, Iterable[Tensor]]) -> None:
        """Starts tracking leaf tensors (usually the model parameters)."""
        for item in tensors:
            group = [item] if isinstance(item, Tensor) else list(item)
            for tensor in group:
                if self.index_of(tensor) is None:
                    self.nodes.append(_Node((), self._register(tensor), None))

    def record(self, output: Tensor, inputs: Tuple[Optional[int], ...], vjp: VectorJacobian) -> None:
        """Appends one operation; its inputs are already on the tape."""
        self.nodes.append(_Node(inputs, self._register(output), vjp))

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        """Returns d(loss)/d(tensor) for every tensor recorded on the tape."""
        if self._consumed:
            raise ContractError("This gradient tape has already been used for a backward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss_index = self.index_of(loss)
        if loss_index is None:
            raise ContractError("The loss was not produced under this tape")

        grads: List[Optional[np.ndarray]] = [None] * len(self.tensors)
        grads[loss_index] = np.ones(loss.shape)
        for node in reversed(self.nodes):
            grad_out = grads[node.output]
            if grad_out is None or node.vjp is None:
                continue
            for position, grad_in in zip(node.inputs, node.vjp(grad_out)):
                if position is None or grad_in is None:
                    continue
                if grads[position] is None:
                    grads[position] = np.array(grad_in, dtype=np.float64)
                else:
                    grads[position] = grads[position] + grad_in

        self._consumed = True
        return {
            tensor: (grad if grad is not None else np.zeros(tensor.shape))
            for tensor, grad in zip(self.tensors, grads)
        }


def backward(loss: Tensor, tape: Optional[GradientTape] = None) -> Dict[Tensor, np.ndarray]:
    """Runs the backward pass of the given tape, or of the active one."""
    tape = tape if tape is not None else current_tape()
    if tape is None:
        raise ContractError("backward needs an active gradient tape")
    return tape.backward(loss)


def _finish(op: str, array: np.ndarray, inputs: Sequence[Tensor], vjp: VectorJacobian) -> Tensor:
    """Wraps the result of an operation, checks it is finite and records it."""
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{op} produced non-finite values")
    output = Tensor._wrap(array)
    tape = current_tape()
    if tape is not None:
        positions = tuple(tape.index_of(tensor) for tensor in inputs)
        if any(position is not None for position in positions):
            tape.record(output, positions, vjp)
    return output


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)


## Linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m, k] and b [k, n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    A, B = a.data, b.data
    return _finish("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


## Elementwise operations
def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b for tensors of identical shape."""
    _same_shape("add", a, b)
    return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b for tensors of identical shape."""
    _same_shape("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise product for tensors of identical shape."""
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _finish("mul", A * B, (a, b), lambda g: (g * B, g * A))


def exp(a: Tensor) -> Tensor:
    """Pointwise exponential."""
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _finish("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    """Pointwise natural logarithm of strictly positive values."""
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value {a.data.min()}")
    A = a.data
    return _finish("log", np.log(A), (a,), lambda g: (g / A,))


def tanh(a: Tensor) -> Tensor:
    """Pointwise hyperbolic tangent."""
    y = np.tanh(a.data)
    return _finish("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    """Pointwise log(1 + e^a)."""
    A = a.data
    return _finish("softplus", np.logaddexp(0.0, A), (a,), lambda g: (g * expit(A),))


def scale(a: Tensor, alpha: float) -> Tensor:
    """Multiplies every value by the scalar alpha."""
    alpha = float(alpha)
    return _finish("scale", a.data * alpha, (a,), lambda g: (g * alpha,))


def absolute(a: Tensor) -> Tensor:
    """Pointwise absolute value (subgradient 0 at 0)."""
    A = a.data
    return _finish("abs", np.abs(A), (a,), lambda g: (g * np.sign(A),))


def square(a: Tensor) -> Tensor:
    """Pointwise square."""
    A = a.data
    return _finish("square", A * A, (a,), lambda g: (2.0 * g * A,))


_UNARY = {
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "softplus": softplus,
    "abs": absolute,
    "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None, alpha: Optional[float] = None) -> Tensor:
    """Dispatches a pointwise operation by name ("scale" takes alpha instead of b)."""
    if op == "scale":
        if alpha is None:
            raise ContractError("scale needs alpha")
        return scale(a, alpha)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two tensors")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ContractError(f"Unknown elementwise operation '{op}'")


## Reductions
def _check_axis(op: str, a: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not 0 <= axis < a.ndim:
        raise DimensionError(op, a.shape, added_message=f"invalid axis {axis}")


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum over one axis, or over everything when axis is None."""
    _check_axis("sum", a, axis)
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", np.sum(a.data, axis=axis), (a,), vjp)


def reduce_mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Mean over one axis, or over everything when axis is None."""
    _check_axis("mean", a, axis)
    count = a.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def reduce(op: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Dispatches "sum" or "mean"."""
    if op == "sum":
        return reduce_sum(a, axis)
    if op == "mean":
        return reduce_mean(a, axis)
    raise ContractError(f"Unknown reduction '{op}'")


## Structural operations
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Joins tensors along an axis; every other dimension must agree."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = tensors[0]
    for tensor in tensors:
        _check_axis("concat", tensor, axis)
        other = tuple(d for i, d in enumerate(tensor.shape) if i != axis)
        expected = tuple(d for i, d in enumerate(first.shape) if i != axis)
        if tensor.ndim != first.ndim or other != expected:
            raise DimensionError("concat", first.shape, tensor.shape)
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=axis))

    return _finish("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    """Inverse of concat: cuts a into consecutive parts of the given sizes."""
    _check_axis("split", a, axis)
    if any(size < 1 for size in sizes) or sum(sizes) != a.shape[axis]:
        raise DimensionError("split", a.shape, added_message=f"sizes {tuple(sizes)} along axis {axis}")
    parts = []
    start = 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, start + size)
        window = tuple(index)

        def vjp(g: np.ndarray, window=window) -> Tuple[np.ndarray]:
            full = np.zeros(a.shape)
            full[window] = g
            return (full,)

        parts.append(_finish("split", a.data[window].copy(), (a,), vjp))
        start += size
    return parts


def gather_rows(a: Tensor, rows: Sequence[int]) -> Tensor:
    """Selects rows of a 2-D tensor (repeats allowed); gradients scatter back."""
    if a.ndim != 2:
        raise DimensionError("gather_rows", a.shape, added_message="needs a matrix")
    index = np.asarray(rows, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError("gather_rows", a.shape, added_message=f"row index out of range {index.max()}")

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _finish("gather_rows", a.data[index], (a,), vjp)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Stacks n copies of a vector [d] into a matrix [n, d]."""
    if v.ndim != 1:
        raise DimensionError("tile_rows", v.shape, added_message="needs a vector")
    return _finish("tile_rows", np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),))


## Gradient checking
def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Largest relative gap between the taped gradient of f at x and central differences.

    The relative error of one coordinate is |analytic - numeric| / max(1e-8, |numeric|).
    """
    with GradientTape() as tape:
        tape.watch(x)
        value = f(x)
    analytic = tape.backward(value)[x]

    base = x.numpy()
    worst = 0.0
    for position in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[position] += eps
        upper = f(Tensor(shifted)).item()
        shifted[position] -= 2 * eps
        lower = f(Tensor(shifted)).item()
        numeric = (upper - lower) / (2 * eps)
        if not np.isfinite(numeric):
            raise NumericError(f"Non-finite finite difference at coordinate {position}")
        error = abs(analytic[position] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, error)
    return worst
