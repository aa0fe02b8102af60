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
"""Score-based diffusion decoder with an informative N(mu, I) prior.

The forward process noises x0 towards the prior mean mu predicted from the
conditioning. With B(t) = beta0 t + (beta1 - beta0) t^2 / 2 its marginal is

    x_t ~ N(mu + (x0 - mu) e^(-B/2), (1 - e^(-B)) I)

Training combines a lambda-weighted score-matching term with an L1 loss on
mu. Sampling integrates the reverse SDE with Euler-Maruyama steps from t = 1
down to t_min; the temperature scales both the initial draw and the noise
injected at each step.
"""

__all__ = [
    "DiffusionSchedule",
    "DiffusionConfig",
    "DiffusionModel",
    "ScoreFunction",
    "init_diffusion",
    "marginal_stats",
    "forward_sample",
    "time_embed",
    "prior_mean",
    "score_net",
    "diffusion_loss_terms",
    "diffusion_loss",
    "reverse_sample",
    "train_diffusion",
]

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import UtteranceRecord
from .defaults import DefaultParams
from .encoder import ConditioningSequence
from .nn import ParameterStore, dense, init_linear, init_residual_mlp, residual_mlp
from .regression import loss_l1
from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    add,
    concat,
    gather_rows,
    mul,
    reduce_sum,
    scale,
    square,
    sub,
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

logger = logging.getLogger(__name__)

PREFIX = "diffusion"

ScoreFunction = Callable[[np.ndarray, float], np.ndarray]
Conditioning = Union[ConditioningSequence, Tensor]


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear noise schedule beta(t) = beta0 + (beta1 - beta0) t on [0, 1]."""

    beta0: float = DefaultParams.beta0
    beta1: float = DefaultParams.beta1
    t_min: float = DefaultParams.t_min
    n_sample_steps: int = DefaultParams.n_sample_steps

    def __post_init__(self) -> None:
        if self.beta0 <= 0 or self.beta1 < self.beta0:
            raise ContractError(f"Need 0 < beta0 <= beta1, got {self.beta0}, {self.beta1}")
        if not 0 < self.t_min < 1 or self.n_sample_steps < 1:
            raise ContractError(f"Need t_min in (0, 1) and n_sample_steps >= 1: {self}")

    def beta(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Noise rate at time t."""
        return self.beta0 + (self.beta1 - self.beta0) * t

    def cumulative(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """B(t), the integral of beta from 0 to t."""
        return self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t

    def marginal_stats(self, t: Union[float, np.ndarray]) -> Tuple[Any, Any]:
        """(shrink, lam) of the forward marginal at t."""
        t_array = np.asarray(t, dtype=np.float64)
        if np.any(t_array < 0) or np.any(t_array > 1):
            raise ContractError(f"Diffusion time must lie in [0, 1], got {t}")
        cumulative = self.cumulative(t_array)
        shrink = np.exp(-0.5 * cumulative)
        lam = -np.expm1(-cumulative)
        if np.ndim(t) == 0:
            return float(shrink), float(lam)
        return shrink, lam


def marginal_stats(t: float, schedule: DiffusionSchedule) -> Tuple[float, float]:
    """shrink = e^(-B(t)/2) and lam = 1 - e^(-B(t))."""
    return schedule.marginal_stats(t)


@dataclass(frozen=True)
class DiffusionConfig:
    """Sizes of the prior projector and score network, with the noise schedule."""

    target_dim: int = 2
    hidden: int = DefaultParams.decoder_hidden
    depth: int = DefaultParams.decoder_depth
    time_dim: int = DefaultParams.time_embed_dim
    beta0: float = DefaultParams.beta0
    beta1: float = DefaultParams.beta1
    t_min: float = DefaultParams.t_min
    n_sample_steps: int = DefaultParams.n_sample_steps

    def __post_init__(self) -> None:
        if min(self.target_dim, self.hidden, self.depth, self.time_dim) < 1:
            raise ContractError(f"Invalid diffusion head sizes: {self}")
        if self.time_dim % 2:
            raise ContractError(f"time_dim must be even, got {self.time_dim}")
        # validates the schedule fields
        _ = self.schedule

    @property
    def schedule(self) -> DiffusionSchedule:
        """The noise schedule part of the settings."""
        return DiffusionSchedule(self.beta0, self.beta1, self.t_min, self.n_sample_steps)


def init_diffusion(
    store: ParameterStore,
    cond_dim: int,
    config: DiffusionConfig,
    rng: np.random.Generator,
    prefix: str = PREFIX,
) -> None:
    """Adds the zero-initialized projector and the score network."""
    init_linear(store, f"{prefix}.projector", cond_dim, config.target_dim, rng, zero=True)
    d_in = config.target_dim + cond_dim + config.time_dim
    init_linear(store, f"{prefix}.score.proj_in", d_in, config.hidden, rng)
    init_residual_mlp(store, f"{prefix}.score.mlp", config.hidden, config.hidden, config.depth, rng)
    init_linear(store, f"{prefix}.score.out", config.hidden, config.target_dim, rng, zero=True)


def _time_features(t: np.ndarray, dim: int) -> np.ndarray:
    if dim % 2:
        raise ContractError(f"Time embedding size must be even, got {dim}")
    frequencies = np.geomspace(1.0, 1000.0, dim // 2)
    angles = np.outer(np.asarray(t, dtype=np.float64).reshape(-1), frequencies)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def time_embed(t: float, dim: int) -> Tensor:
    """[sin(t w_k)..., cos(t w_k)...] with w_k geometrically spaced in [1, 1000]."""
    return Tensor(_time_features(np.asarray([t]), dim)[0])


def _values(c: Conditioning) -> Tensor:
    return c.values if isinstance(c, ConditioningSequence) else c


def _lengths(c: Conditioning) -> Tuple[int, ...]:
    return c.lengths if isinstance(c, ConditioningSequence) else (c.shape[0],)


def prior_mean(c: Conditioning, store: ParameterStore, prefix: str = PREFIX) -> Tensor:
    """mu = projector(c)."""
    return dense(_values(c), store, f"{prefix}.projector")


def score_net(
    x_t: Tensor,
    c: Conditioning,
    t_rows: np.ndarray,
    store: ParameterStore,
    config: DiffusionConfig,
    prefix: str = PREFIX,
) -> Tensor:
    """s_theta(x_t, c, t) for every row; t_rows holds the time of each row."""
    values = _values(c)
    if x_t.shape != (values.shape[0], config.target_dim):
        raise DimensionError("score_net", x_t.shape, values.shape)
    embedded = Tensor(_time_features(t_rows, config.time_dim))
    net_in = concat([x_t, values, embedded], axis=1)
    hidden = dense(net_in, store, f"{prefix}.score.proj_in")
    hidden = residual_mlp(hidden, store, f"{prefix}.score.mlp", config.depth)
    return dense(hidden, store, f"{prefix}.score.out")


def _as_tensor(value: Union[Tensor, np.ndarray]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _row_constant(per_row: np.ndarray, n_rows: int, dim: int) -> Tensor:
    return Tensor(np.repeat(np.broadcast_to(per_row, (n_rows,)).reshape(-1, 1), dim, axis=1))


def forward_sample(
    x0: Union[Tensor, np.ndarray],
    mu: Union[Tensor, np.ndarray],
    t: Union[float, np.ndarray],
    eps: Union[Tensor, np.ndarray],
    schedule: DiffusionSchedule,
) -> Tensor:
    """x_t = mu + (x0 - mu) shrink + sqrt(lam) eps; t is a scalar or one value per row."""
    x0, mu, eps = _as_tensor(x0), _as_tensor(mu), _as_tensor(eps)
    if x0.shape != mu.shape or x0.shape != eps.shape or x0.ndim != 2:
        raise DimensionError("forward_sample", x0.shape, mu.shape, eps.shape)
    n_rows, dim = x0.shape
    shrink, lam = schedule.marginal_stats(np.asarray(t, dtype=np.float64))
    shrink_rows = _row_constant(shrink, n_rows, dim)
    noise = mul(_row_constant(np.sqrt(lam), n_rows, dim), eps)
    return add(add(mu, mul(sub(x0, mu), shrink_rows)), noise)


def _valid_rows(n_rows: int, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        rows = np.arange(n_rows)
    else:
        if len(mask) != n_rows:
            raise ContractError(f"Mask of {len(mask)} entries for {n_rows} rows")
        rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise ContractError("Diffusion loss over an empty set of positions")
    return rows


def diffusion_loss_terms(
    x0: Union[Tensor, np.ndarray],
    c: Conditioning,
    store: ParameterStore,
    config: DiffusionConfig,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
    t: Optional[Union[float, np.ndarray]] = None,
    eps: Optional[np.ndarray] = None,
    prefix: str = PREFIX,
) -> Dict[str, Tensor]:
    """Loss with its score-matching and L1 components.

    One time t is drawn per utterance from U(t_min, 1). Fixed `t` (scalar, or one
    value per utterance) and `eps` can be supplied instead of `rng`.
    """
    x0 = _as_tensor(x0)
    lengths = _lengths(c)
    n_rows, dim = x0.shape
    if dim != config.target_dim:
        raise DimensionError("diffusion_loss", x0.shape, added_message=f"expected width {config.target_dim}")
    rows = _valid_rows(n_rows, mask)
    schedule = config.schedule
    if t is None or eps is None:
        if rng is None:
            raise ContractError("diffusion_loss needs a random generator or fixed (t, eps)")
        if t is None:
            t = rng.uniform(schedule.t_min, 1.0, size=len(lengths))
        if eps is None:
            eps = rng.standard_normal((n_rows, dim))
    t_utt = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(lengths),))
    t_rows = np.repeat(t_utt, lengths)
    eps = np.asarray(eps, dtype=np.float64)

    mu = prior_mean(c, store, prefix)
    x_t = forward_sample(x0, mu, t_rows, eps, schedule)
    _, lam = schedule.marginal_stats(t_rows)
    score = score_net(x_t, c, t_rows, store, config, prefix)
    residual = add(score, Tensor(eps / np.sqrt(lam)[:, None]))
    weighted = mul(square(residual), _row_constant(lam, n_rows, dim))
    score_term = scale(reduce_sum(gather_rows(weighted, rows)), 1.0 / rows.size)
    l1_term = loss_l1(mu, x0, None if mask is None else np.asarray(mask, dtype=bool))
    return {"loss": add(score_term, l1_term), "score_term": score_term, "l1_term": l1_term}


def diffusion_loss(
    x0: Union[Tensor, np.ndarray],
    c: Conditioning,
    store: ParameterStore,
    config: DiffusionConfig,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
    **fixed,
) -> Tensor:
    """Weighted score matching plus L1 between mu and x0."""
    return diffusion_loss_terms(x0, c, store, config, rng, mask, **fixed)["loss"]


def reverse_sample(
    c: Conditioning,
    store: ParameterStore,
    config: DiffusionConfig,
    tau: float,
    n_steps: Optional[int],
    rng: RandomStreams,
    score_fn: Optional[ScoreFunction] = None,
    x_init: Optional[np.ndarray] = None,
    prefix: str = PREFIX,
) -> Tensor:
    """Euler-Maruyama integration of the reverse SDE from t = 1 to t_min.

    Each step is x <- x + h beta(t) (0.5 (x - mu) + s(x, t)) + tau sqrt(h beta(t)) xi,
    with the time taken at the middle of the step. `score_fn(x, t)` replaces the
    learned score network when given; `x_init` replaces the N(mu, tau^2 I) start.
    """
    if tau < 0:
        raise ContractError(f"Temperature must be >= 0, got {tau}")
    schedule = config.schedule
    n_steps = schedule.n_sample_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ContractError(f"n_steps must be >= 1, got {n_steps}")
    lengths = _lengths(c)
    mu = prior_mean(c, store, prefix).numpy()
    n_rows, dim = mu.shape

    if x_init is None:
        x = mu + tau * standard_normal_rows(lengths, dim, rng)
    else:
        x = np.array(x_init, dtype=np.float64)
        if x.shape != mu.shape:
            raise DimensionError("reverse_sample", x.shape, mu.shape)
    h = (1.0 - schedule.t_min) / n_steps
    for step in range(n_steps):
        t = 1.0 - (step + 0.5) * h
        beta = float(schedule.beta(t))
        if score_fn is not None:
            score = np.asarray(score_fn(x, t), dtype=np.float64)
        else:
            score = score_net(Tensor(x), c, np.full(n_rows, t), store, config, prefix).numpy()
        noise = standard_normal_rows(lengths, dim, rng)
        x = x + h * beta * (0.5 * (x - mu) + score) + tau * np.sqrt(h * beta) * noise
        if not np.all(np.isfinite(x)):
            raise NumericError(f"Reverse diffusion diverged at step {step} (t = {t:.4f})")
    return Tensor(x)


class DiffusionModel(ConditionalModel):
    """Encoder plus prior projector and score network."""

    kind = "diff"
    loss_names = ("loss", "score_term", "l1_term")

    def __init__(self, *args, config: Optional[DiffusionConfig] = None, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.config = config if config is not None else DiffusionConfig(target_dim=self.target_dim)
        if self.config.target_dim != self.target_dim:
            raise ContractError(
                f"Diffusion width {self.config.target_dim} does not match targets of {self.target_dim}"
            )

    def _init_head(self, rng: np.random.Generator) -> None:
        init_diffusion(self.store, self.encoder_config.cond_dim, self.config, rng)

    def loss_terms(self, batch: Batch, rng: np.random.Generator) -> Dict[str, Tensor]:
        return diffusion_loss_terms(batch.targets, self.condition(batch), self.store, self.config, rng)

    def generate(self, batch: Batch, tau: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        c = self.condition(batch)
        return reverse_sample(c, self.store, self.config, tau, None, rngs).numpy()

    def head_config(self) -> Dict[str, Any]:
        return dict(self.config.__dict__)


def train_diffusion(
    records: Sequence[UtteranceRecord], model: DiffusionModel, config: TrainConfig, seed: int
) -> Tuple[DiffusionModel, LossCurve]:
    """Trains the head in place and returns it with its loss curve (and components)."""
    curve, _ = fit(model, records, config, seed)
    logger.debug(f"Final diffusion losses: {dict(zip(curve.names, curve.values[-1]))}")
    return model, curve
