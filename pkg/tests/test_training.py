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
"""Tests for batching, the shared training loop and per-utterance sampling."""

import numpy as np
import pytest

from prosody.decoders.diffusion import DiffusionConfig, DiffusionModel
from prosody.decoders.experiment import sample_records
from prosody.decoders.flow import FlowConfig, FlowModel
from prosody.decoders.regression import RegressionConfig, RegressionModel
from prosody.decoders.tensor import ContractError, scale
from prosody.decoders.training import (
    FRAMES,
    PROSODY,
    LossCurve,
    TargetScaler,
    TrainConfig,
    TrainingError,
    fit,
    make_batch,
    standard_normal_rows,
    task_targets,
)

SHORT = TrainConfig(steps=40, batch_size=12, lr=0.01, log_every=0)


def flow_model(tiny_encoder) -> FlowModel:
    return FlowModel(PROSODY, tiny_encoder, 2, config=FlowConfig(n_steps=2, hidden=6, depth=1))


class TestBatches:
    def test_prosody_targets(self, tiny_corpus):
        records = tiny_corpus.train[:3]
        targets = task_targets(records, PROSODY)
        assert targets.shape == (sum(len(r.phonemes) for r in records), 2)
        assert list(targets[:, 1]) == [d for r in records for d in r.duration]

    def test_frame_targets(self, tiny_corpus, frame_corpus):
        targets = task_targets(frame_corpus.train[:2], FRAMES)
        assert targets.shape == (sum(sum(r.duration) for r in frame_corpus.train[:2]), 8)
        with pytest.raises(ContractError):
            task_targets(tiny_corpus.train[:1], FRAMES)
        with pytest.raises(ContractError):
            task_targets(tiny_corpus.train[:1], "pitch")

    def test_make_batch(self, tiny_corpus):
        records = tiny_corpus.train[:4]
        batch = make_batch(records, PROSODY)
        assert batch.targets is None
        assert batch.lengths == tuple(len(r.phonemes) for r in records)
        assert list(batch.labels) == [r.style for r in records]
        assert batch.utt_ids == [r.utt_id for r in records]

        scaler = TargetScaler.fit(task_targets(tiny_corpus.train, PROSODY))
        scaled = make_batch(tiny_corpus.train, PROSODY, scaler)
        np.testing.assert_allclose(scaled.targets.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.targets.std(axis=0), 1.0, rtol=1e-12)
        with pytest.raises(ContractError):
            make_batch([], PROSODY)

    def test_frame_batches_use_speakers(self, frame_corpus):
        batch = make_batch(frame_corpus.train[:3], FRAMES)
        assert list(batch.labels) == [r.speaker for r in frame_corpus.train[:3]]

    def test_scaler(self, rng):
        values = np.column_stack([rng.normal(3.0, 2.0, 50), np.full(50, 4.0)])
        scaler = TargetScaler.fit(values)
        assert scaler.std[1] == 1.0
        np.testing.assert_allclose(scaler.inverse(scaler.transform(values)), values, atol=1e-12)
        again = TargetScaler.from_dict(scaler.to_dict())
        np.testing.assert_array_equal(again.mean, scaler.mean)


class TestRandomRows:
    def test_single_generator(self):
        rows = standard_normal_rows([2, 3], 2, np.random.default_rng(4))
        np.testing.assert_array_equal(rows, np.random.default_rng(4).standard_normal((5, 2)))

    def test_one_stream_per_utterance(self):
        rows = standard_normal_rows([2, 1], 3, [np.random.default_rng(1), np.random.default_rng(2)])
        np.testing.assert_array_equal(rows[:2], np.random.default_rng(1).standard_normal((2, 3)))
        np.testing.assert_array_equal(rows[2:], np.random.default_rng(2).standard_normal((1, 3)))
        with pytest.raises(ContractError):
            standard_normal_rows([2, 1], 3, [np.random.default_rng(1)])


class TestFit:
    def test_deterministic(self, tiny_corpus, tiny_encoder):
        first, _ = fit(flow_model(tiny_encoder), tiny_corpus.train, SHORT, seed=9)
        second, _ = fit(flow_model(tiny_encoder), tiny_corpus.train, SHORT, seed=9)
        other, _ = fit(flow_model(tiny_encoder), tiny_corpus.train, SHORT, seed=10)
        assert first.values == second.values
        assert first.values != other.values

    @pytest.mark.parametrize("kind", ["flow", "diff"])
    def test_loss_decreases(self, tiny_corpus, tiny_encoder, kind):
        if kind == "flow":
            model = flow_model(tiny_encoder)
        else:
            head = DiffusionConfig(hidden=6, depth=1, time_dim=4)
            model = DiffusionModel(PROSODY, tiny_encoder, 2, config=head)
        curve, state = fit(model, tiny_corpus.train, TrainConfig(steps=150, batch_size=20, lr=0.01), seed=1)
        losses = curve.column()
        assert np.mean(losses[-20:]) < np.mean(losses[:20])
        assert state.t == 150
        assert model.adam is state

    def test_curve_csv(self, tmp_path):
        curve = LossCurve(names=DiffusionModel.loss_names)
        curve.append(0, {"loss": 1.5, "score_term": 1.0, "l1_term": 0.5})
        curve.append(1, {"loss": 1.25, "score_term": 0.75, "l1_term": 0.5})
        curve.to_csv(tmp_path / "loss.csv")
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines == ["step,loss,score_term,l1_term", "0,1.5,1.0,0.5", "1,1.25,0.75,0.5"]
        assert curve.column("l1_term") == [0.5, 0.5]

    def test_divergence(self, tiny_corpus, tiny_encoder):
        class Diverging(RegressionModel):
            def loss_terms(self, batch, rng):
                return {"loss": scale(super().loss_terms(batch, rng)["loss"], float("nan"))}

        model = Diverging(PROSODY, tiny_encoder, 2, config=RegressionConfig(hidden=4, depth=1))
        with pytest.raises(TrainingError) as error:
            fit(model, tiny_corpus.train, SHORT, seed=0)
        assert error.value.step == 0

    def test_empty_corpus(self, tiny_encoder):
        with pytest.raises(ContractError):
            fit(flow_model(tiny_encoder), [], SHORT, seed=0)

    def test_invalid_settings(self):
        with pytest.raises(ContractError):
            TrainConfig(steps=0)


class TestSampleRecords:
    @pytest.fixture
    def trained_flow(self, tiny_corpus, tiny_encoder) -> FlowModel:
        model = flow_model(tiny_encoder)
        fit(model, tiny_corpus.train, SHORT, seed=2)
        return model

    def test_order_and_draws(self, trained_flow, tiny_corpus):
        records = tiny_corpus.test[:5]
        samples = sample_records(trained_flow, records, 0.5, draws=2, seed=1)
        assert [(r.utt_id, r.draw) for r in samples] == [(r.utt_id, k) for r in records for k in range(2)]
        for sample, record in zip(samples[::2], records):
            assert sample.phonemes == record.phonemes
            assert all(d >= 1 for d in sample.duration)

    def test_workers_do_not_change_results(self, trained_flow, tiny_corpus):
        serial = sample_records(trained_flow, tiny_corpus.test, 0.8, draws=2, seed=3, chunk_size=4)
        threaded = sample_records(
            trained_flow, tiny_corpus.test, 0.8, draws=2, seed=3, workers=3, chunk_size=4
        )
        assert serial == threaded

    def test_chunking_does_not_change_results(self, trained_flow, tiny_corpus):
        whole = sample_records(trained_flow, tiny_corpus.test, 0.8, seed=3, chunk_size=64)
        chunked = sample_records(trained_flow, tiny_corpus.test, 0.8, seed=3, chunk_size=3)
        for a, b in zip(whole, chunked):
            assert a.utt_id == b.utt_id
            np.testing.assert_allclose(a.log_f0, b.log_f0, atol=1e-10)
        assert len(whole) == len(chunked)

    def test_seed_matters(self, trained_flow, tiny_corpus):
        first = sample_records(trained_flow, tiny_corpus.test, 0.8, seed=3)
        second = sample_records(trained_flow, tiny_corpus.test, 0.8, seed=4)
        assert [r.log_f0 for r in first] != [r.log_f0 for r in second]

    def test_regression_ignores_draws(self, tiny_corpus, tiny_encoder):
        model = RegressionModel(PROSODY, tiny_encoder, 2, config=RegressionConfig(hidden=4, depth=1))
        fit(model, tiny_corpus.train, SHORT, seed=0)
        samples = sample_records(model, tiny_corpus.test, 0.5, draws=3, seed=0)
        assert len(samples) == len(tiny_corpus.test)
        assert sample_records(model, tiny_corpus.test, 0.5, seed=99) == samples

    def test_negative_temperature(self, trained_flow, tiny_corpus):
        with pytest.raises(ContractError):
            sample_records(trained_flow, tiny_corpus.test, -0.5)
