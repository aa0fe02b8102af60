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
"""Shared training plumbing for the three decoder families."""

__all__ = [
    "PROSODY",
    "FRAMES",
    "TASKS",
    "TrainingError",
    "TrainConfig",
    "TargetScaler",
    "Batch",
    "LossCurve",
    "ConditionalModel",
    "task_targets",
    "make_batch",
    "fit",
    "RandomStreams",
    "standard_normal_rows",
]

import csv
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import UtteranceRecord
from .defaults import DefaultParams
from .encoder import ConditioningSequence, EncoderConfig, encode_batch, init_encoder, upsample
from .nn import AdamState, ParameterStore, adam_step, clip_grad_norm
from .tensor import ContractError, GradientTape, NumericError, Tensor

logger = logging.getLogger(__name__)

PROSODY = "prosody"
FRAMES = "frames"
TASKS = (PROSODY, FRAMES)


class TrainingError(NumericError):
    """Raised when the training loss stops being finite."""

    def __init__(self, step: int, added_message: str = "") -> None:
        message = f"Training diverged at step {step}"
        if added_message:
            message += f" ({added_message})"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch Adam settings."""

    steps: int = DefaultParams.train_steps
    batch_size: int = DefaultParams.batch_size
    lr: float = DefaultParams.learning_rate
    clip_norm: float = DefaultParams.clip_norm
    log_every: int = DefaultParams.log_every

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0 or self.clip_norm <= 0:
            raise ContractError(f"Invalid training settings: {self}")


@dataclass
class TargetScaler:
    """Per-dimension standardisation of the targets, fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetScaler":
        """Mean and std of each column (a constant column keeps std 1)."""
        std = targets.std(axis=0)
        return cls(mean=targets.mean(axis=0), std=np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "TargetScaler":
        """A scaler that leaves values unchanged."""
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]]) -> "TargetScaler":
        """Builds a scaler from its JSON form."""
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64), std=np.asarray(data["std"], dtype=np.float64)
        )

    def to_dict(self) -> Dict[str, List[float]]:
        """JSON form of the scaler."""
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Raw to standardised values."""
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Standardised to raw values."""
        return values * self.std + self.mean


@dataclass
class Batch:
    """Utterances packed row-wise for one task."""

    utt_ids: List[str]
    phonemes: np.ndarray
    lengths: Tuple[int, ...]
    labels: np.ndarray
    durations: np.ndarray
    log_f0: np.ndarray
    targets: Optional[np.ndarray] = None

    @property
    def row_lengths(self) -> Tuple[int, ...]:
        """Number of target rows per utterance (phonemes, or frames for the frame task)."""
        return self.lengths


def task_targets(records: Sequence[UtteranceRecord], task: str) -> np.ndarray:
    """Raw target rows: (log-f0, duration) per phoneme, or the frame vectors."""
    if task == PROSODY:
        rows = [np.column_stack([r.log_f0, r.duration]) for r in records]
        return np.concatenate(rows).astype(np.float64)
    if task == FRAMES:
        if any(r.frames is None for r in records):
            raise ContractError("The frame task needs records with frames")
        return np.concatenate([np.asarray(r.frames, dtype=np.float64) for r in records])
    raise ContractError(f"Unknown task '{task}', expected one of {TASKS}")


def make_batch(
    records: Sequence[UtteranceRecord], task: str, scaler: Optional[TargetScaler] = None
) -> Batch:
    """Packs records; targets are standardised when a scaler is given."""
    if not records:
        raise ContractError("Cannot build an empty batch")
    lengths = tuple(len(r.phonemes) for r in records)
    if task == FRAMES:
        labels = np.asarray([r.speaker for r in records], dtype=np.int64)
    else:
        labels = np.asarray([r.style for r in records], dtype=np.int64)
    targets = None
    if scaler is not None:
        targets = scaler.transform(task_targets(records, task))
    return Batch(
        utt_ids=[r.utt_id for r in records],
        phonemes=np.concatenate([np.asarray(r.phonemes, dtype=np.int64) for r in records]),
        lengths=lengths,
        labels=labels,
        durations=np.concatenate([np.asarray(r.duration, dtype=np.int64) for r in records]),
        log_f0=np.concatenate([np.asarray(r.log_f0, dtype=np.float64) for r in records]),
        targets=targets,
    )


@dataclass
class LossCurve:
    """Loss (and named components) recorded before each optimizer step."""

    names: Tuple[str, ...] = ("loss",)
    steps: List[int] = field(default_factory=list)
    values: List[Tuple[float, ...]] = field(default_factory=list)

    def append(self, step: int, terms: Dict[str, float]) -> None:
        """Stores the values of one step."""
        self.steps.append(step)
        self.values.append(tuple(terms[name] for name in self.names))

    def column(self, name: str = "loss") -> List[float]:
        """All values of one component."""
        index = self.names.index(name)
        return [row[index] for row in self.values]

    def to_csv(self, path: Union[str, PathLike]) -> None:
        """Writes `step,loss[,components]`."""
        with Path(path).open("w", newline="") as csv_file:
            writer = csv.writer(csv_file, lineterminator="\n")
            writer.writerow(("step",) + self.names)
            for step, row in zip(self.steps, self.values):
                writer.writerow((step,) + tuple(repr(v) for v in row))


class ConditionalModel:
    """Encoder plus one decoder head, trained on standardised targets.

    Subclasses set `kind`, `loss_names`, add their head parameters in
    `_init_head`, and implement `loss_terms` and `generate`.
    """

    kind = ""
    loss_names: Tuple[str, ...] = ("loss",)

    def __init__(
        self,
        task: str,
        encoder_config: EncoderConfig,
        target_dim: int,
        scaler: Optional[TargetScaler] = None,
        store: Optional[ParameterStore] = None,
    ) -> None:
        if task not in TASKS:
            raise ContractError(f"Unknown task '{task}', expected one of {TASKS}")
        if task == FRAMES and encoder_config.extra_dim != 1:
            raise ContractError("The frame task appends phoneme-level log-f0 (extra_dim = 1)")
        self.task = task
        self.encoder_config = encoder_config
        self.target_dim = target_dim
        self.scaler = scaler if scaler is not None else TargetScaler.identity(target_dim)
        self.store = store if store is not None else ParameterStore()
        self.adam: Optional[AdamState] = None

    def initialize(self, seed: int) -> "ConditionalModel":
        """Fills the store; parameters are a pure function of (seed, sizes)."""
        if len(self.store):
            raise ContractError("Model parameters are already initialized")
        rng = np.random.default_rng([seed, 0])
        init_encoder(self.store, self.encoder_config, rng)
        self._init_head(rng)
        return self

    def _init_head(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def condition(self, batch: Batch) -> ConditioningSequence:
        """Conditioning c per target row."""
        extra = batch.log_f0.reshape(-1, 1) if self.task == FRAMES else None
        c = encode_batch(batch.phonemes, batch.lengths, batch.labels, self.store, self.encoder_config, extra)
        if self.task == FRAMES:
            c = upsample(c, batch.durations)
        return c

    def loss_terms(self, batch: Batch, rng: np.random.Generator) -> Dict[str, Tensor]:
        """Training objective; the "loss" entry is minimised."""
        raise NotImplementedError

    def generate(self, batch: Batch, tau: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        """Standardised target rows, using one random stream per utterance."""
        raise NotImplementedError

    def head_config(self) -> Dict[str, Any]:
        """JSON form of the decoder settings."""
        raise NotImplementedError

    def metadata(self) -> Dict[str, Any]:
        """Everything needed to rebuild the model around a checkpoint."""
        return {
            "kind": self.kind,
            "task": self.task,
            "target_dim": self.target_dim,
            "encoder": dict(self.encoder_config.__dict__),
            "head": self.head_config(),
            "scaler": self.scaler.to_dict(),
        }


def fit(
    model: ConditionalModel,
    records: Sequence[UtteranceRecord],
    config: TrainConfig,
    seed: int,
    fit_scaler: bool = True,
) -> Tuple[LossCurve, AdamState]:
    """Minibatch Adam with a global gradient-norm cap; deterministic given seed."""
    if not records:
        raise ContractError("Cannot train on an empty corpus")
    if fit_scaler:
        model.scaler = TargetScaler.fit(task_targets(records, model.task))
    if not len(model.store):
        model.initialize(seed)

    rng = np.random.default_rng([seed, 1])
    state = AdamState.create(model.store, lr=config.lr)
    curve = LossCurve(names=model.loss_names)
    batch_size = min(config.batch_size, len(records))
    logger.info(f"Training {model.kind} ({model.store.size()} parameters) for {config.steps} steps")
    for step in range(config.steps):
        chosen = np.sort(rng.choice(len(records), size=batch_size, replace=False))
        batch = make_batch([records[i] for i in chosen], model.task, model.scaler)
        try:
            with GradientTape() as tape:
                tape.watch(model.store.tensors())
                terms = model.loss_terms(batch, rng)
            grads = tape.backward(terms["loss"])
        except NumericError as ex:
            raise TrainingError(step, str(ex)) from ex
        values = {name: terms[name].item() for name in model.loss_names}
        if not np.isfinite(values["loss"]):
            raise TrainingError(step, "loss is not finite")
        curve.append(step, values)

        named = {name: grads[tensor] for name, tensor in model.store.items()}
        clipped, _ = clip_grad_norm(named, config.clip_norm)
        adam_step(model.store, clipped, state)
        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            logger.info(f"{model.kind} step {step}: " + ", ".join(f"{k}={v:.5f}" for k, v in values.items()))
    model.adam = state
    return curve, state


RandomStreams = Union[np.random.Generator, Sequence[np.random.Generator]]


def standard_normal_rows(lengths: Sequence[int], dim: int, rng: RandomStreams) -> np.ndarray:
    """N(0, I) rows for packed utterances.

    With a sequence of generators, utterance i draws its rows from rng[i] only,
    so the values do not depend on how utterances are batched.
    """
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((int(sum(lengths)), dim))
    if len(rng) != len(lengths):
        raise ContractError(f"{len(rng)} random streams for {len(lengths)} utterances")
    return np.concatenate([stream.standard_normal((int(n), dim)) for stream, n in zip(rng, lengths)])
