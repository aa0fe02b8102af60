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
"""Shared conditioning encoder and duration-driven length regulator."""

__all__ = [
    "EncoderConfig",
    "ConditioningSequence",
    "init_encoder",
    "encode",
    "encode_batch",
    "length_regulate",
    "upsample",
]

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .defaults import DefaultParams
from .nn import (
    ParameterStore,
    dense,
    embedding_lookup,
    init_embedding,
    init_linear,
    init_residual_mlp,
    residual_mlp,
)
from .tensor import ContractError, Tensor, concat, gather_rows


@dataclass(frozen=True)
class EncoderConfig:
    """Sizes of the conditioning encoder.

    `style_vocab` is the size of the categorical label table: speaking styles
    for prosody models, speakers for the frame-level task. `extra_dim` features
    (phoneme-level log-f0 for the frame task) are appended to the encodings.
    """

    phone_vocab: int
    style_vocab: int
    phone_dim: int = DefaultParams.phone_dim
    style_dim: int = DefaultParams.style_dim
    context_width: int = DefaultParams.context_width
    hidden: int = DefaultParams.encoder_hidden
    depth: int = DefaultParams.encoder_depth
    out_dim: int = DefaultParams.encoder_out_dim
    extra_dim: int = 0

    def __post_init__(self) -> None:
        sizes = (self.phone_vocab, self.style_vocab, self.phone_dim, self.style_dim)
        sizes += (self.context_width, self.hidden, self.depth, self.out_dim)
        if min(sizes) < 1 or self.extra_dim < 0:
            raise ContractError(f"Encoder sizes must be >= 1: {self}")
        if self.context_width % 2 == 0:
            raise ContractError(f"context_width must be odd, got {self.context_width}")

    @property
    def cond_dim(self) -> int:
        """Width of the conditioning vectors handed to the decoders."""
        return self.out_dim + self.extra_dim


@dataclass(frozen=True)
class ConditioningSequence:
    """Per-position conditioning c of one or more utterances packed row-wise."""

    values: Tensor
    lengths: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or sum(self.lengths) != self.values.shape[0]:
            raise ContractError(
                f"{self.values.shape[0]} rows do not match lengths summing to {sum(self.lengths)}"
            )

    @property
    def n_rows(self) -> int:
        """Number of positions over all utterances."""
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        """Width of each conditioning vector."""
        return self.values.shape[1]

    def row_utterance(self) -> np.ndarray:
        """Index of the utterance owning each row."""
        return np.repeat(np.arange(len(self.lengths)), self.lengths)


def init_encoder(
    store: ParameterStore, config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder"
) -> None:
    """Adds the encoder parameters to the store."""
    init_embedding(store, f"{prefix}.phone_emb", config.phone_vocab, config.phone_dim, rng)
    init_embedding(store, f"{prefix}.style_emb", config.style_vocab, config.style_dim, rng)
    d_in = config.context_width * config.phone_dim + config.style_dim
    init_linear(store, f"{prefix}.proj_in", d_in, config.out_dim, rng)
    init_residual_mlp(store, f"{prefix}.mlp", config.out_dim, config.hidden, config.depth, rng)


def _window_rows(lengths: Sequence[int], offset: int) -> np.ndarray:
    """Row of each position's neighbour at `offset`, or the zero row past an edge."""
    total = int(sum(lengths))
    rows = np.full(total, total, dtype=np.int64)
    start = 0
    for length in lengths:
        local = np.arange(length) + offset
        inside = (local >= 0) & (local < length)
        rows[start : start + length][inside] = start + local[inside]
        start += length
    return rows


def encode_batch(
    phonemes: Sequence[int],
    lengths: Sequence[int],
    styles: Sequence[int],
    store: ParameterStore,
    config: EncoderConfig,
    extra: Optional[np.ndarray] = None,
    prefix: str = "encoder",
) -> ConditioningSequence:
    """Encodes utterances packed row-wise; windows never cross utterance boundaries."""
    lengths = tuple(int(n) for n in lengths)
    if sum(lengths) != len(phonemes) or len(styles) != len(lengths) or min(lengths, default=0) < 1:
        raise ContractError("Phoneme ids, utterance lengths and style ids do not agree")
    if (extra is None) != (config.extra_dim == 0):
        raise ContractError(f"Encoder expects {config.extra_dim} extra features per position")

    embedded = embedding_lookup(store[f"{prefix}.phone_emb.weight"], phonemes, "phonemes")
    half = config.context_width // 2
    if half:
        padded = concat([embedded, Tensor(np.zeros((1, config.phone_dim)))], axis=0)
        shifted = [gather_rows(padded, _window_rows(lengths, k)) for k in range(-half, half + 1)]
        windows = concat(shifted, axis=1)
    else:
        windows = embedded
    style_ids = np.repeat(np.asarray(styles, dtype=np.int64), lengths)
    style_rows = embedding_lookup(store[f"{prefix}.style_emb.weight"], style_ids, "styles")

    hidden = dense(concat([windows, style_rows], axis=1), store, f"{prefix}.proj_in")
    values = residual_mlp(hidden, store, f"{prefix}.mlp", config.depth)
    if extra is not None:
        extra_rows = np.asarray(extra, dtype=np.float64).reshape(len(phonemes), -1)
        values = concat([values, Tensor(extra_rows)], axis=1)
    return ConditioningSequence(values=values, lengths=lengths)


def encode(
    phonemes: Sequence[int],
    style: int,
    store: ParameterStore,
    config: EncoderConfig,
    extra: Optional[np.ndarray] = None,
    prefix: str = "encoder",
) -> ConditioningSequence:
    """Encodes a single utterance."""
    return encode_batch(phonemes, [len(phonemes)], [style], store, config, extra, prefix)


def length_regulate(c: ConditioningSequence, durations: Sequence[int]) -> Tensor:
    """Repeats row i of c durations[i] times, keeping the order."""
    counts = np.asarray(durations, dtype=np.int64)
    if counts.size != c.n_rows:
        raise ContractError(f"{counts.size} durations for {c.n_rows} phonemes")
    if counts.size and counts.min() < 1:
        raise ContractError(f"Durations must be >= 1, got {counts.min()}")
    return gather_rows(c.values, np.repeat(np.arange(c.n_rows), counts))


def upsample(c: ConditioningSequence, durations: Sequence[int]) -> ConditioningSequence:
    """Frame-level conditioning, keeping utterance boundaries."""
    counts = np.asarray(durations, dtype=np.int64)
    frames = length_regulate(c, counts)
    starts = np.concatenate([[0], np.cumsum(c.lengths)[:-1]]).astype(np.int64)
    frame_lengths = tuple(int(counts[s : s + n].sum()) for s, n in zip(starts, c.lengths))
    return ConditioningSequence(values=frames, lengths=frame_lengths)
