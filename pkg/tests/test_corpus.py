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
"""Tests for the synthetic corpus, its oracle and JSON-Lines persistence."""

import json

import numpy as np
import pytest

from prosody.decoders.corpus import (
    CellLaw,
    CorpusParseError,
    FrameRecord,
    SyntheticSpec,
    UtteranceRecord,
    cell_law,
    gen_corpus,
    load_corpus,
    load_jsonl,
    oracle_cell_std,
    oracle_conditional_mean,
    oracle_sample,
    round_duration,
    save_corpus,
    save_jsonl,
)
from prosody.decoders.tensor import ContractError


def single_cell_spec(law: CellLaw, **kwargs) -> SyntheticSpec:
    return SyntheticSpec(n_phonemes=1, n_styles=1, n_speakers=1, cells=(law,), **kwargs)


class TestCellLaws:
    def test_pure_function_of_seed(self, tiny_spec):
        assert cell_law(1, 1, tiny_spec) == cell_law(1, 1, tiny_spec)
        other = SyntheticSpec.from_dict({**tiny_spec.to_dict(), "seed": 4})
        assert cell_law(1, 1, tiny_spec) != cell_law(1, 1, other)

    def test_invariants(self):
        spec = SyntheticSpec()
        separated = 0
        for p in range(spec.n_phonemes):
            for s in range(spec.n_styles):
                law = cell_law(p, s, spec)
                assert sum(law.weights) == pytest.approx(1.0)
                assert all(std > 0 for pair in law.stds for std in pair)
                assert all(mean[1] >= 2.0 for mean in law.means)
                gap = abs(law.means[1][0] - law.means[0][0])
                if gap >= 2 * max(law.stds[0][0], law.stds[1][0]):
                    separated += 1
        assert separated >= 0.25 * spec.n_phonemes * spec.n_styles

    def test_invalid_cell(self, tiny_spec):
        with pytest.raises(ContractError):
            cell_law(tiny_spec.n_phonemes, 0, tiny_spec)
        with pytest.raises(ContractError):
            oracle_conditional_mean(0, -1, tiny_spec)


class TestOracle:
    def test_single_component(self):
        spec = single_cell_spec(CellLaw(weights=(1.0,), means=((0.2, 6.0),), stds=((0.1, 1.5),)))
        assert oracle_conditional_mean(0, 0, spec) == pytest.approx((0.2, 6.0))
        assert oracle_cell_std(0, 0, spec) == pytest.approx((0.1, 1.5))

    def test_symmetric_pair(self):
        law = CellLaw(weights=(0.5, 0.5), means=((-1.0, 4.0), (1.0, 4.0)), stds=((0.0, 0.0), (0.0, 0.0)))
        spec = single_cell_spec(law)
        assert oracle_conditional_mean(0, 0, spec)[0] == pytest.approx(0.0)
        assert oracle_cell_std(0, 0, spec)[0] == pytest.approx(1.0)

    def test_moments_match_monte_carlo(self, tiny_spec):
        law = cell_law(0, 0, tiny_spec)
        rng = np.random.default_rng(99)
        n = 200_000
        component = rng.choice(2, size=n, p=law.weights)
        means = np.asarray(law.means)[component]
        stds = np.asarray(law.stds)[component]
        draws = means + stds * rng.standard_normal((n, 2))
        mean, std = law.mean(), law.std()
        for dim in range(2):
            assert abs(draws[:, dim].mean() - mean[dim]) < 0.01 * std[dim]
            assert draws[:, dim].std() == pytest.approx(std[dim], rel=0.01)

    def test_oracle_sample_rounds_duration(self, tiny_spec, rng):
        for _ in range(20):
            log_f0, duration = oracle_sample(1, 0, tiny_spec, rng)
            assert isinstance(duration, int) and duration >= 1
            assert np.isfinite(log_f0)

    @pytest.mark.parametrize("value, expected", [(2.5, 3), (2.49, 2), (0.2, 1), (-3.0, 1), (7.0, 7)])
    def test_round_duration(self, value, expected):
        assert round_duration(value) == expected


class TestGenCorpus:
    def test_degenerate_mixture(self):
        law = CellLaw(weights=(1.0,), means=((0.3, 5.0),), stds=((0.0, 0.0),))
        corpus = gen_corpus(single_cell_spec(law, n_train=5, n_dev=1, n_test=1))
        for record in corpus.train + corpus.dev + corpus.test:
            assert record.log_f0 == [0.3] * len(record.phonemes)
            assert record.duration == [5] * len(record.phonemes)

    def test_counts_and_disjoint_splits(self, tiny_spec, tiny_corpus):
        assert len(tiny_corpus.train) == tiny_spec.n_train
        assert len(tiny_corpus.dev) == tiny_spec.n_dev
        assert len(tiny_corpus.test) == tiny_spec.n_test
        ids = [r.utt_id for r in tiny_corpus.train + tiny_corpus.dev + tiny_corpus.test]
        assert len(set(ids)) == len(ids)
        for record in tiny_corpus.train:
            assert tiny_spec.min_len <= len(record.phonemes) <= tiny_spec.max_len
            assert record.frames is None

    def test_deterministic(self, tiny_spec, tiny_corpus):
        again = gen_corpus(tiny_spec)
        assert [r.to_json_struct() for r in again.train] == [r.to_json_struct() for r in tiny_corpus.train]
        other = gen_corpus(tiny_spec, seed=tiny_spec.seed + 1)
        assert [r.log_f0 for r in other.train] != [r.log_f0 for r in tiny_corpus.train]

    def test_frames_follow_durations(self, frame_corpus):
        for record in frame_corpus.train:
            assert len(record.frames) == sum(record.duration)
            assert all(len(frame) == 8 for frame in record.frames)

    def test_degenerate_spec(self):
        with pytest.raises(ContractError):
            SyntheticSpec(n_phonemes=0)
        with pytest.raises(ContractError):
            SyntheticSpec(min_len=5, max_len=3)

    @pytest.mark.slow
    def test_corpus_std_matches_mixture_of_mixtures(self):
        spec = SyntheticSpec(n_train=10_000, n_dev=0, n_test=0)
        corpus = gen_corpus(spec)
        values = np.concatenate([r.log_f0 for r in corpus.train])
        laws = [cell_law(p, s, spec) for p in range(spec.n_phonemes) for s in range(spec.n_styles)]
        first = np.mean([law.mean()[0] for law in laws])
        second = np.mean([law.std()[0] ** 2 + law.mean()[0] ** 2 for law in laws])
        assert np.std(values) == pytest.approx(np.sqrt(second - first**2), rel=0.02)


class TestJsonl:
    def test_empty_roundtrip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        save_jsonl([], path)
        assert path.read_text() == ""
        assert load_jsonl(path) == []

    def test_roundtrip_is_bit_exact(self, tmp_path, frame_corpus):
        path = tmp_path / "train.jsonl"
        save_jsonl(frame_corpus.train, path)
        loaded = load_jsonl(path)
        assert loaded == frame_corpus.train
        for before, after in zip(frame_corpus.train, loaded):
            assert np.array_equal(np.asarray(before.log_f0), np.asarray(after.log_f0))

    def test_frame_records(self, tmp_path):
        record = FrameRecord(
            utt_id="u1",
            frame_f0=[100.0, 0.0, 120.0],
            voicing=[True, False, True],
            alignment=[1, 2],
            speaker=0,
            style=1,
            phonemes=[3, 4],
        )
        path = tmp_path / "frames.jsonl"
        save_jsonl([record], path)
        assert load_jsonl(path, FrameRecord) == [record]

    def test_truncated_line(self, tmp_path, tiny_corpus):
        path = tmp_path / "bad.jsonl"
        save_jsonl(tiny_corpus.test[:3], path)
        lines = path.read_text().splitlines()
        lines[1] = lines[1][: len(lines[1]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusParseError) as error:
            load_jsonl(path)
        assert error.value.line_number == 2
        assert "line 2" in str(error.value)

    def test_record_invariants(self):
        with pytest.raises(ContractError):
            UtteranceRecord(utt_id="u", phonemes=[1, 2], style=0, speaker=0, log_f0=[0.1], duration=[1, 1])
        with pytest.raises(ContractError):
            UtteranceRecord(utt_id="u", phonemes=[1], style=0, speaker=0, log_f0=[0.1], duration=[0])

    def test_corpus_directory(self, tmp_path, tiny_corpus):
        save_corpus(tiny_corpus, tmp_path / "corpus", provenance={"seed": 3})
        manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
        assert manifest["counts"] == {"train": 60, "dev": 10, "test": 20}
        assert manifest["provenance"] == {"seed": 3}
        loaded = load_corpus(tmp_path / "corpus")
        assert loaded.spec == tiny_corpus.spec
        assert loaded.test == tiny_corpus.test

    def test_bad_manifest(self, tmp_path, tiny_corpus):
        save_corpus(tiny_corpus, tmp_path / "corpus")
        (tmp_path / "corpus" / "manifest.json").write_text('{"spec": {"n_phonemes": -1}}')
        with pytest.raises(CorpusParseError):
            load_corpus(tmp_path / "corpus")
