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
"""Shared fixtures: tiny corpora, encoder sizes and parameter randomization."""

import json
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest

from prosody.decoders.corpus import Corpus, SyntheticSpec, gen_corpus
from prosody.decoders.encoder import EncoderConfig
from prosody.decoders.nn import ParameterStore


@pytest.fixture
def rng() -> np.random.Generator:
    """Fresh seeded generator for each test."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    """4 phonemes x 2 styles, short utterances."""
    return SyntheticSpec(
        n_phonemes=4, n_styles=2, n_speakers=2, n_train=60, n_dev=10, n_test=20, min_len=3, max_len=6, seed=3
    )


@pytest.fixture
def tiny_corpus(tiny_spec: SyntheticSpec) -> Corpus:
    """Prosody-only corpus of the tiny spec."""
    return gen_corpus(tiny_spec)


@pytest.fixture
def frame_corpus() -> Corpus:
    """Tiny corpus carrying 8-dimensional frame vectors."""
    spec = SyntheticSpec(
        n_phonemes=4,
        n_styles=2,
        n_speakers=2,
        n_train=24,
        n_dev=4,
        n_test=6,
        min_len=2,
        max_len=4,
        seed=5,
        frame_dim=8,
    )
    return gen_corpus(spec)


@pytest.fixture
def tiny_encoder() -> EncoderConfig:
    """Small encoder matching the tiny spec vocabularies."""
    return EncoderConfig(
        phone_vocab=4, style_vocab=2, phone_dim=3, style_dim=2, context_width=3, hidden=5, depth=1, out_dim=4
    )


@pytest.fixture
def randomize() -> Callable[[ParameterStore, np.random.Generator, float], ParameterStore]:
    """Replaces every parameter (zero-initialized layers included) with N(0, scale^2) values."""

    def _randomize(store: ParameterStore, rng: np.random.Generator, scale: float = 0.5) -> ParameterStore:
        for name, tensor in store.items():
            store.replace(name, rng.normal(0.0, scale, tensor.shape))
        return store

    return _randomize


@pytest.fixture
def tiny_config_data(tiny_spec: SyntheticSpec) -> Dict[str, Any]:
    """Experiment configuration sized for fast command-line runs."""
    return {
        "seed": 7,
        "data": tiny_spec.to_dict(),
        "encoder": {
            "phone_dim": 3,
            "style_dim": 2,
            "context_width": 3,
            "hidden": 6,
            "depth": 1,
            "out_dim": 4,
        },
        "regression": {"hidden": 6, "depth": 1},
        "flow": {"n_steps": 2, "hidden": 6, "depth": 1},
        "diffusion": {"hidden": 6, "depth": 1, "time_dim": 4, "n_sample_steps": 10},
        "training": {"steps": 30, "batch_size": 8, "lr": 0.01, "log_every": 10},
        "eval": {"n_bins": 16, "sensitivity_bins": [8, 16]},
    }


@pytest.fixture
def config_file(tmp_path: Path, tiny_config_data: Dict[str, Any]) -> Path:
    """The tiny configuration written to disk."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_config_data), encoding="utf-8")
    return path
