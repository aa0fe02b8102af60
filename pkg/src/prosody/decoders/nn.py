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
"""Neural building blocks: parameters, layers, the Adam optimizer."""

__all__ = [
    "VocabularyError",
    "ParameterStore",
    "AdamState",
    "init_linear",
    "init_embedding",
    "init_residual_mlp",
    "linear",
    "embedding_lookup",
    "residual_mlp",
    "adam_step",
    "clip_grad_norm",
    "parameter_gradients",
    "finite_diff_check_params",
]

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .defaults import DefaultParams
from .tensor import (
    ContractError,
    DimensionError,
    GradientTape,
    Tensor,
    add,
    gather_rows,
    matmul,
    tanh,
    tile_rows,
    finite_diff_check,
)


class VocabularyError(IndexError):
    """Raised for an embedding id outside of its table."""

    def __init__(self, bad_id: int, vocab: int, table: str = "") -> None:
        message = f"Id {bad_id} out of range for vocabulary of size {vocab}"
        if table:
            message += f" ({table})"
        super().__init__(message)


class ParameterStore:
    """Ordered map of dotted parameter names to tensors.

    Insertion order is the serialization order. Tensors are immutable, so
    updates replace entries instead of writing into them.
    """

    def __init__(self) -> None:
        self._entries: Dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        """Registers a new parameter."""
        if name in self._entries:
            raise ContractError(f"Parameter '{name}' already exists")
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        self._entries[name] = tensor
        return tensor

    def replace(self, name: str, value) -> None:
        """Swaps the tensor behind an existing name (same shape)."""
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        current = self[name]
        if current.shape != tensor.shape:
            raise ContractError(f"Shape mismatch for '{name}': {current.shape} != {tensor.shape}")
        self._entries[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError as ex:
            raise ContractError(f"Unknown parameter '{name}'") from ex

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> List[str]:
        """Parameter names in insertion order."""
        return list(self._entries)

    def items(self) -> List[Tuple[str, Tensor]]:
        """(name, tensor) pairs in insertion order."""
        return list(self._entries.items())

    def tensors(self) -> List[Tensor]:
        """Parameter tensors in insertion order."""
        return list(self._entries.values())

    def size(self) -> int:
        """Total number of scalar parameters."""
        return sum(tensor.size for tensor in self._entries.values())


## Initialization
def init_linear(
    store: ParameterStore, prefix: str, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False
) -> None:
    """Adds `prefix.weight` [d_in, d_out] uniform in +-sqrt(1/d_in) and a zero `prefix.bias`."""
    if zero:
        weight = np.zeros((d_in, d_out))
    else:
        bound = np.sqrt(1.0 / d_in)
        weight = rng.uniform(-bound, bound, size=(d_in, d_out))
    store.add(f"{prefix}.weight", weight)
    store.add(f"{prefix}.bias", np.zeros(d_out))


def init_embedding(
    store: ParameterStore, prefix: str, vocab: int, dim: int, rng: np.random.Generator
) -> None:
    """Adds a `prefix.weight` table [vocab, dim] drawn from N(0, 1)."""
    store.add(f"{prefix}.weight", rng.standard_normal((vocab, dim)))


def init_residual_mlp(
    store: ParameterStore, prefix: str, dim: int, hidden: int, depth: int, rng: np.random.Generator
) -> None:
    """Adds the parameters of `depth` residual blocks dim -> hidden -> dim."""
    if depth < 1:
        raise ContractError(f"Residual MLP depth must be >= 1, got {depth}")
    for block in range(depth):
        init_linear(store, f"{prefix}.block{block}.fc1", dim, hidden, rng)
        init_linear(store, f"{prefix}.block{block}.fc2", hidden, dim, rng)


## Layers
def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """xW + b for x [n, d_in], W [d_in, d_out], b [d_out]."""
    if x.ndim != 2 or W.ndim != 2 or b.shape != (W.shape[1],):
        raise DimensionError("linear", x.shape, W.shape, b.shape)
    return add(matmul(x, W), tile_rows(b, x.shape[0]))


def embedding_lookup(table: Tensor, ids: Sequence[int], name: str = "") -> Tensor:
    """Gathers rows of an embedding table [V, d] for the given ids."""
    vocab = table.shape[0]
    for token in ids:
        if not 0 <= int(token) < vocab:
            raise VocabularyError(int(token), vocab, name)
    return gather_rows(table, ids)


def dense(x: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    """Applies the linear layer stored under `prefix`."""
    return linear(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"])


def residual_mlp(x: Tensor, store: ParameterStore, prefix: str, depth: int) -> Tensor:
    """`depth` blocks of x + fc2(tanh(fc1(x)))."""
    if depth < 1:
        raise ContractError(f"Residual MLP depth must be >= 1, got {depth}")
    for block in range(depth):
        hidden = tanh(dense(x, store, f"{prefix}.block{block}.fc1"))
        x = add(x, dense(hidden, store, f"{prefix}.block{block}.fc2"))
    return x


## Optimization
@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter store."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = DefaultParams.learning_rate
    b1: float = DefaultParams.adam_b1
    b2: float = DefaultParams.adam_b2
    eps: float = DefaultParams.adam_eps

    @classmethod
    def create(cls, store: ParameterStore, **hyper) -> "AdamState":
        """Zero moments mirroring the shapes of the store."""
        state = cls(**hyper)
        for name, tensor in store.items():
            state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        return state


def adam_step(
    store: ParameterStore, grads: Mapping[str, np.ndarray], state: AdamState
) -> Tuple[ParameterStore, AdamState]:
    """One bias-corrected Adam update of every parameter in the store."""
    missing = [name for name in store if name not in grads]
    if missing:
        raise ContractError(f"Missing gradients for {', '.join(missing)}")

    state.t += 1
    correction1 = 1.0 - state.b1**state.t
    correction2 = 1.0 - state.b2**state.t
    for name, tensor in store.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        state.m[name] = state.b1 * state.m[name] + (1.0 - state.b1) * g
        state.v[name] = state.b2 * state.v[name] + (1.0 - state.b2) * (g * g)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        store.replace(name, tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return store, state


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescales all gradients together so their global L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    factor = max_norm / norm if norm > max_norm else 1.0
    return {name: g * factor for name, g in grads.items()}, norm


def parameter_gradients(
    store: ParameterStore, loss_fn: Callable[[ParameterStore], Tensor]
) -> Tuple[Tensor, Dict[str, np.ndarray]]:
    """Evaluates loss_fn under a tape and returns the loss with per-name gradients."""
    with GradientTape() as tape:
        tape.watch(store.tensors())
        loss = loss_fn(store)
    grads = tape.backward(loss)
    return loss, {name: grads[tensor] for name, tensor in store.items()}


def finite_diff_check_params(
    store: ParameterStore, loss_fn: Callable[[ParameterStore], Tensor], eps: float = 1e-5
) -> Dict[str, float]:
    """Runs finite_diff_check on every parameter of a store in turn."""
    errors = {}
    for name in store.names():
        original = store[name]

        def as_function(value: Tensor, name=name) -> Tensor:
            store.replace(name, value)
            return loss_fn(store)

        try:
            errors[name] = finite_diff_check(as_function, original, eps)
        finally:
            store.replace(name, original)
    return errors
