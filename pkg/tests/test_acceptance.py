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
"""Full-size experiments on the synthetic corpus: mean collapse, distribution recovery
and temperature behaviour of the three decoder families.

These take minutes; run them with `pytest -m slow`.
"""

import json
from collections import defaultdict
from dataclasses import replace
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from prosody.decoders.commands import EXIT_OK, evaluate, gen_data, sample, train
from prosody.decoders.corpus import (
    CellLaw,
    Corpus,
    SyntheticSpec,
    cell_law,
    gen_corpus,
    oracle_conditional_mean,
)
from prosody.decoders.diffusion import prior_mean
from prosody.decoders.experiment import ExperimentConfig, sample_records, sweep_tau, train_model
from prosody.decoders.metrics import EvalReport, build_report
from prosody.decoders.training import PROSODY, ConditionalModel, make_batch

pytestmark = pytest.mark.slow

TAUS = (0.2, 0.4, 0.6, 0.8)


@pytest.fixture(scope="module")
def experiment() -> Tuple[ExperimentConfig, Corpus, Dict[str, ConditionalModel]]:
    """The default corpus (8 phonemes x 4 styles, 5000 training utterances) and three trained models."""
    config = ExperimentConfig()
    corpus = gen_corpus(config.data)
    models = {kind: train_model(config, corpus, kind)[0] for kind in ("l2", "flow", "diff")}
    return config, corpus, models


@pytest.fixture(scope="module")
def report(experiment) -> EvalReport:
    config, corpus, models = experiment
    samples = {kind: sample_records(model, corpus.test, 1.0, seed=1) for kind, model in models.items()}
    return build_report(corpus.test, samples, config.eval)


def test_regression_collapses_to_cell_means(experiment, report):
    _, corpus, models = experiment
    predictions = sample_records(models["l2"], corpus.test, 0.0)
    by_cell = defaultdict(list)
    for record in predictions:
        for phoneme, value in zip(record.phonemes, record.log_f0):
            by_cell[(phoneme, record.style)].append(value)
    for (p, s), values in by_cell.items():
        assert np.mean(values) == pytest.approx(oracle_conditional_mean(p, s, corpus.spec)[0], abs=0.05)
    assert report.models["l2"].std_logf0 / report.oracle.std_logf0 < 0.85


def log_f0_median(law: CellLaw) -> float:
    """Median of the log-f0 marginal of a cell."""

    def cdf(x: float) -> float:
        return sum(w * norm.cdf(x, m[0], s[0]) for w, m, s in zip(law.weights, law.means, law.stds)) - 0.5

    low = min(m[0] for m in law.means) - 1.0
    high = max(m[0] for m in law.means) + 1.0
    return brentq(cdf, low, high)


def test_diffusion_prior_mean_collapses(experiment):
    _, corpus, models = experiment
    model = models["diff"]
    batch = make_batch(corpus.test, PROSODY)
    mu = model.scaler.inverse(prior_mean(model.condition(batch), model.store).numpy())[:, 0]
    styles = np.repeat(batch.labels, batch.lengths)
    by_cell = defaultdict(list)
    for phoneme, style, value in zip(batch.phonemes, styles, mu):
        by_cell[(int(phoneme), int(style))].append(value)
    symmetric = 0
    for (p, s), values in by_cell.items():
        law = cell_law(p, s, corpus.spec)
        if law.weights[0] == 0.5:
            # equal weights and stds: the L1 optimum is the mixture mean
            assert np.mean(values) == pytest.approx(oracle_conditional_mean(p, s, corpus.spec)[0], abs=0.05)
            symmetric += 1
        elif abs(law.weights[0] - 0.5) >= 0.1:
            assert np.mean(values) == pytest.approx(log_f0_median(law), abs=0.05)
    assert symmetric > 0


def test_diffusion_recovers_both_modes(experiment):
    _, corpus, models = experiment
    generated = sample_records(models["diff"], corpus.test, 1.0, draws=4, seed=5)
    by_cell = defaultdict(list)
    for record in generated:
        for phoneme, value in zip(record.phonemes, record.log_f0):
            by_cell[(phoneme, record.style)].append(value)
    checked = 0
    for (p, s), values in by_cell.items():
        law = cell_law(p, s, corpus.spec)
        if (p + s) % 2:
            continue
        split = 0.5 * (law.means[0][0] + law.means[1][0])
        low_mass = np.mean(np.asarray(values) < split)
        assert low_mass == pytest.approx(law.weights[0], abs=0.1)
        checked += 1
    assert checked == corpus.spec.n_phonemes * corpus.spec.n_styles // 2


def test_generative_heads_recover_the_distribution(report):
    l2 = report.models["l2"]
    for kind in ("flow", "diff"):
        row = report.models[kind]
        assert 1.5 * row.jsd_logf0 <= l2.jsd_logf0
        assert 1.5 * row.jsd_dur <= l2.jsd_dur
        assert l2.std_logf0 < row.std_logf0
        assert row.std_logf0 == pytest.approx(report.oracle.std_logf0, rel=0.15)


def test_temperature_matters_more_for_the_flow(experiment):
    config, corpus, models = experiment
    generative = [(kind, models[kind]) for kind in ("flow", "diff")]
    sweep = sweep_tau(generative, corpus.test, TAUS, config.eval, seed=2)
    for kind in ("flow", "diff"):
        stds = [row["std_logf0"] for row in sweep["models"][kind]["rows"]]
        assert all(a <= b for a, b in zip(stds, stds[1:]))
    assert sweep["models"]["flow"]["std_logf0_range"] > sweep["models"]["diff"]["std_logf0_range"]


@pytest.mark.parametrize("kind", ["l2", "flow", "diff"])
def test_frame_task_trains(kind):
    spec = SyntheticSpec(n_train=300, n_dev=10, n_test=20, frame_dim=8)
    config = ExperimentConfig(task="frames", data=spec)
    config = replace(config, training=replace(config.training, steps=300))
    corpus = gen_corpus(spec)
    model, curve = train_model(config, corpus, kind)
    losses = curve.column()
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    for generated, record in zip(sample_records(model, corpus.test, 0.5), corpus.test):
        assert len(generated.frames) == sum(record.duration)
        assert all(len(frame) == 8 for frame in generated.frames)


def run_recipe(root: Path) -> bytes:
    """gen-data, train, sample and eval in `root`; returns the report bytes."""
    spec = SyntheticSpec(n_train=400, n_dev=20, n_test=50)
    config = {"seed": 11, "data": spec.to_dict(), "training": {"steps": 200, "log_every": 0}}
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    common = ["--config", str(config_path)]
    corpus = str(root / "corpus")
    assert gen_data.main(common + ["--out", corpus]) == EXIT_OK
    generated = []
    for kind in ("l2", "flow", "diff"):
        ckpt = str(root / f"ckpt_{kind}")
        assert train.main(common + ["--corpus", corpus, "--model", kind, "--out", ckpt]) == EXIT_OK
        out = str(root / f"{kind}.jsonl")
        assert sample.main(common + ["--ckpt", ckpt, "--corpus", corpus, "--out", out]) == EXIT_OK
        generated.append(out)
    report = root / "report.json"
    argv = common + ["--oracle", corpus, "--generated", *generated]
    assert evaluate.main(argv + ["--out", str(report)]) == EXIT_OK
    return report.read_bytes()


def test_recipe_is_byte_reproducible(tmp_path):
    first = run_recipe(tmp_path)
    assert run_recipe(tmp_path) == first
