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
"""Deterministic regression decoder trained with an L2 (prosody) or L1 (frames) loss."""

__all__ = [
    "RegressionConfig",
    "RegressionModel",
    "init_regression",
    "predict",
    "loss_l2",
    "loss_l1",
    "train_regression",
]

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import UtteranceRecord
from .defaults import DefaultParams
from .encoder import ConditioningSequence
from .nn import ParameterStore, dense, init_linear, init_residual_mlp, residual_mlp
from .tensor import ContractError, DimensionError, Tensor, absolute, gather_rows, reduce_mean, square, sub
from .training import FRAMES, Batch, ConditionalModel, LossCurve, TrainConfig, fit

PREFIX = "decoder"


@dataclass(frozen=True)
class RegressionConfig:
    """Sizes of the regression head."""

    hidden: int = DefaultParams.decoder_hidden
    depth: int = DefaultParams.decoder_depth

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.depth < 1:
            raise ContractError(f"Invalid regression head sizes: {self}")


def init_regression(
    store: ParameterStore,
    cond_dim: int,
    target_dim: int,
    config: RegressionConfig,
    rng: np.random.Generator,
    prefix: str = PREFIX,
) -> None:
    """Adds proj_in, a residual MLP and a zero-initialized output layer."""
    init_linear(store, f"{prefix}.proj_in", cond_dim, config.hidden, rng)
    init_residual_mlp(store, f"{prefix}.mlp", config.hidden, config.hidden, config.depth, rng)
    init_linear(store, f"{prefix}.out", config.hidden, target_dim, rng, zero=True)


def predict(
    c: Union[ConditioningSequence, Tensor],
    store: ParameterStore,
    config: RegressionConfig,
    prefix: str = PREFIX,
) -> Tensor:
    """One prediction per conditioning row; no sampling involved."""
    values = c.values if isinstance(c, ConditioningSequence) else c
    expected = store[f"{prefix}.proj_in.weight"].shape[0]
    if values.ndim != 2 or values.shape[1] != expected:
        raise ContractError(f"Regression head expects conditioning of width {expected}, got {values.shape}")
    hidden = residual_mlp(dense(values, store, f"{prefix}.proj_in"), store, f"{prefix}.mlp", config.depth)
    return dense(hidden, store, f"{prefix}.out")


def _valid_difference(pred: Tensor, target: Union[Tensor, np.ndarray], mask: Optional[np.ndarray]) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError("loss", pred.shape, target.shape)
    diff = sub(pred, target)
    if mask is None:
        if pred.shape[0] == 0:
            raise ContractError("Loss over an empty set of positions")
        return diff
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(mask) != pred.shape[0] or rows.size == 0:
        raise ContractError(f"Mask of {len(mask)} entries with {rows.size} valid for {pred.shape[0]} rows")
    return gather_rows(diff, rows)


def loss_l2(pred: Tensor, target: Union[Tensor, np.ndarray], mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error over valid rows and all dimensions."""
    return reduce_mean(square(_valid_difference(pred, target, mask)))


def loss_l1(pred: Tensor, target: Union[Tensor, np.ndarray], mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean absolute error over valid rows and all dimensions."""
    return reduce_mean(absolute(_valid_difference(pred, target, mask)))


class RegressionModel(ConditionalModel):
    """Encoder plus regression head; L2 on the prosody task, L1 on frames."""

    kind = "l2"

    def __init__(self, *args, config: Optional[RegressionConfig] = None, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.config = config if config is not None else RegressionConfig()

    def _init_head(self, rng: np.random.Generator) -> None:
        init_regression(self.store, self.encoder_config.cond_dim, self.target_dim, self.config, rng)

    def loss_terms(self, batch: Batch, rng: np.random.Generator) -> Dict[str, Tensor]:
        pred = predict(self.condition(batch), self.store, self.config)
        loss = loss_l1 if self.task == FRAMES else loss_l2
        return {"loss": loss(pred, batch.targets)}

    def generate(self, batch: Batch, tau: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        return predict(self.condition(batch), self.store, self.config).numpy()

    def head_config(self) -> Dict[str, Any]:
        return dict(self.config.__dict__)


def train_regression(
    records: Sequence[UtteranceRecord], model: RegressionModel, config: TrainConfig, seed: int
) -> Tuple[RegressionModel, LossCurve]:
    """Trains the model in place and returns it with its loss curve."""
    curve, _ = fit(model, records, config, seed)
    return model, curve
