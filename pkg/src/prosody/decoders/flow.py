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
"""Conditional normalizing-flow decoder built from affine coupling steps.

The flow maps a target x to a latent z with an N(0, I) prior. Each step keeps
one half of the features and rescales/shifts the other half with values
computed from the kept half and the conditioning:

    log s, t = net([h_a, c]);  log s <- s_max * tanh(log s / s_max)
    h'_b = h_b * exp(log s) + t

Even steps transform the second half, odd steps the first one. The output
layer of every coupling net starts at zero, so a fresh flow is the identity.
"""

__all__ = [
    "FlowConfig",
    "FlowLatent",
    "FlowModel",
    "init_flow",
    "coupling_forward",
    "coupling_inverse",
    "flow_forward",
    "flow_inverse",
    "flow_nll",
    "flow_sample",
    "train_flow",
]

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import UtteranceRecord
from .defaults import DefaultParams
from .encoder import ConditioningSequence
from .nn import ParameterStore, dense, init_linear, init_residual_mlp, residual_mlp
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    concat,
    exp,
    gather_rows,
    mul,
    reduce_sum,
    scale,
    split,
    square,
    sub,
    tanh,
)
from .training import (
    Batch,
    ConditionalModel,
    LossCurve,
    RandomStreams,
    TrainConfig,
    fit,
    standard_normal_rows,
)

PREFIX = "flow"
HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FlowConfig:
    """Number of coupling steps and sizes of their networks."""

    n_steps: int = DefaultParams.flow_steps
    target_dim: int = 2
    hidden: int = DefaultParams.decoder_hidden
    depth: int = DefaultParams.decoder_depth
    s_max: float = DefaultParams.flow_s_max

    def __post_init__(self) -> None:
        if self.n_steps < 2 or self.target_dim < 2:
            raise ContractError(f"A flow needs n_steps >= 2 and target_dim >= 2: {self}")
        if self.hidden < 1 or self.depth < 1 or self.s_max <= 0:
            raise ContractError(f"Invalid coupling network settings: {self}")

    def halves(self, swap: bool) -> Tuple[int, int]:
        """(kept, transformed) widths of a step."""
        first = self.target_dim // 2
        second = self.target_dim - first
        return (second, first) if swap else (first, second)


@dataclass(frozen=True)
class FlowLatent:
    """Latent z of every row with the log-determinant accumulated per row."""

    z: Tensor
    log_det: Tensor

    def per_utterance(self, lengths: Sequence[int]) -> np.ndarray:
        """Total log-determinant of each utterance."""
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        return np.add.reduceat(self.log_det.numpy(), starts)


def _step_prefix(step: int, prefix: str) -> str:
    return f"{prefix}.step{step}"


def init_flow(
    store: ParameterStore, cond_dim: int, config: FlowConfig, rng: np.random.Generator, prefix: str = PREFIX
) -> None:
    """Adds the coupling networks of every step."""
    for step in range(config.n_steps):
        kept, moved = config.halves(swap=step % 2 == 1)
        name = _step_prefix(step, prefix)
        init_linear(store, f"{name}.proj_in", kept + cond_dim, config.hidden, rng)
        init_residual_mlp(store, f"{name}.mlp", config.hidden, config.hidden, config.depth, rng)
        init_linear(store, f"{name}.out", config.hidden, 2 * moved, rng, zero=True)


def _conditioning(c: Union[ConditioningSequence, Tensor]) -> Tensor:
    return c.values if isinstance(c, ConditioningSequence) else c


def _split_halves(h: Tensor, swap: bool) -> Tuple[Tensor, Tensor]:
    """(kept, transformed) halves of h."""
    first = h.shape[1] // 2
    head, tail = split(h, [first, h.shape[1] - first], axis=1)
    return (tail, head) if swap else (head, tail)


def _join_halves(kept: Tensor, moved: Tensor, swap: bool) -> Tensor:
    return concat([moved, kept], axis=1) if swap else concat([kept, moved], axis=1)


def _scale_shift(
    kept: Tensor, c: Tensor, store: ParameterStore, prefix: str, depth: int, s_max: float
) -> Tuple[Tensor, Tensor]:
    net_in = concat([kept, c], axis=1)
    hidden = residual_mlp(dense(net_in, store, f"{prefix}.proj_in"), store, f"{prefix}.mlp", depth)
    raw = dense(hidden, store, f"{prefix}.out")
    raw_log_s, shift = split(raw, [raw.shape[1] // 2, raw.shape[1] // 2], axis=1)
    log_s = scale(tanh(scale(raw_log_s, 1.0 / s_max)), s_max)
    return log_s, shift


def _check_rows(h: Tensor, c: Tensor) -> None:
    if h.ndim != 2 or c.ndim != 2 or h.shape[0] != c.shape[0] or h.shape[1] < 2:
        raise DimensionError("coupling", h.shape, c.shape)


def coupling_forward(
    h: Tensor,
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    prefix: str,
    swap: bool = False,
    s_max: float = DefaultParams.flow_s_max,
    depth: int = DefaultParams.decoder_depth,
) -> Tuple[Tensor, Tensor]:
    """One affine coupling step; returns h' and the log-determinant of each row."""
    c = _conditioning(c)
    _check_rows(h, c)
    kept, moved = _split_halves(h, swap)
    log_s, shift = _scale_shift(kept, c, store, prefix, depth, s_max)
    moved = add(mul(moved, exp(log_s)), shift)
    return _join_halves(kept, moved, swap), reduce_sum(log_s, axis=1)


def coupling_inverse(
    h: Tensor,
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    prefix: str,
    swap: bool = False,
    s_max: float = DefaultParams.flow_s_max,
    depth: int = DefaultParams.decoder_depth,
) -> Tuple[Tensor, Tensor]:
    """Undoes coupling_forward; the log-determinant is the negated forward one."""
    c = _conditioning(c)
    _check_rows(h, c)
    kept, moved = _split_halves(h, swap)
    log_s, shift = _scale_shift(kept, c, store, prefix, depth, s_max)
    moved = mul(sub(moved, shift), exp(scale(log_s, -1.0)))
    return _join_halves(kept, moved, swap), scale(reduce_sum(log_s, axis=1), -1.0)


def flow_forward(
    x: Tensor,
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    config: FlowConfig,
    prefix: str = PREFIX,
) -> FlowLatent:
    """Data to latent through all the steps."""
    if x.ndim != 2 or x.shape[1] != config.target_dim:
        raise DimensionError("flow_forward", x.shape, added_message=f"expected width {config.target_dim}")
    h = x
    log_det: Optional[Tensor] = None
    for step in range(config.n_steps):
        h, step_log_det = coupling_forward(
            h, c, store, _step_prefix(step, prefix), step % 2 == 1, config.s_max, config.depth
        )
        log_det = step_log_det if log_det is None else add(log_det, step_log_det)
    assert log_det is not None
    return FlowLatent(z=h, log_det=log_det)


def flow_inverse(
    z: Tensor,
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    config: FlowConfig,
    prefix: str = PREFIX,
) -> Tuple[Tensor, Tensor]:
    """Latent to data, running the steps in reverse order; returns (x, per-row log-det)."""
    if z.ndim != 2 or z.shape[1] != config.target_dim:
        raise DimensionError("flow_inverse", z.shape, added_message=f"expected width {config.target_dim}")
    h = z
    log_det: Optional[Tensor] = None
    for step in reversed(range(config.n_steps)):
        h, step_log_det = coupling_inverse(
            h, c, store, _step_prefix(step, prefix), step % 2 == 1, config.s_max, config.depth
        )
        log_det = step_log_det if log_det is None else add(log_det, step_log_det)
    assert log_det is not None
    return h, log_det


def flow_nll(
    x: Union[Tensor, np.ndarray],
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    config: FlowConfig,
    mask: Optional[np.ndarray] = None,
    prefix: str = PREFIX,
) -> Tensor:
    """Negative log-likelihood per valid position and dimension under the N(0, I) prior."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    valid = np.ones(x.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != (x.shape[0],):
        raise ContractError(f"Mask of shape {valid.shape} for {x.shape[0]} rows")
    rows = np.flatnonzero(valid)
    if rows.size == 0:
        raise ContractError("NLL over an empty set of positions")

    latent = flow_forward(x, c, store, config, prefix)
    energy = scale(reduce_sum(square(gather_rows(latent.z, rows))), 0.5)
    log_det = reduce_sum(mul(latent.log_det, Tensor(valid.astype(np.float64))))
    per_dim = scale(sub(energy, log_det), 1.0 / (rows.size * config.target_dim))
    return add(per_dim, Tensor(HALF_LOG_2PI))


def flow_sample(
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    config: FlowConfig,
    tau: float,
    rng: RandomStreams,
    prefix: str = PREFIX,
) -> Tensor:
    """Inverse image of z ~ N(0, tau^2 I); tau = 0 gives the modal prediction."""
    if tau < 0:
        raise ContractError(f"Temperature must be >= 0, got {tau}")
    lengths = c.lengths if isinstance(c, ConditioningSequence) else (c.shape[0],)
    z = tau * standard_normal_rows(lengths, config.target_dim, rng)
    x, _ = flow_inverse(Tensor(z), c, store, config, prefix)
    return x


class FlowModel(ConditionalModel):
    """Encoder plus conditional flow, trained by exact maximum likelihood."""

    kind = "flow"

    def __init__(self, *args, config: Optional[FlowConfig] = None, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.config = config if config is not None else FlowConfig(target_dim=self.target_dim)
        if self.config.target_dim != self.target_dim:
            raise ContractError(
                f"Flow width {self.config.target_dim} does not match targets of {self.target_dim}"
            )

    def _init_head(self, rng: np.random.Generator) -> None:
        init_flow(self.store, self.encoder_config.cond_dim, self.config, rng)

    def loss_terms(self, batch: Batch, rng: np.random.Generator) -> Dict[str, Tensor]:
        return {"loss": flow_nll(batch.targets, self.condition(batch), self.store, self.config)}

    def generate(self, batch: Batch, tau: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        return flow_sample(self.condition(batch), self.store, self.config, tau, rngs).numpy()

    def head_config(self) -> Dict[str, Any]:
        return dict(self.config.__dict__)


def train_flow(
    records: Sequence[UtteranceRecord], model: FlowModel, config: TrainConfig, seed: int
) -> Tuple[FlowModel, LossCurve]:
    """Trains the flow in place and returns it with its NLL curve."""
    curve, _ = fit(model, records, config, seed)
    return model, curve
