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
"""Tests for the regression head and its losses."""

import numpy as np
import pytest

from prosody.decoders.nn import (
    AdamState,
    ParameterStore,
    adam_step,
    finite_diff_check_params,
    parameter_gradients,
)
from prosody.decoders.regression import (
    RegressionConfig,
    RegressionModel,
    init_regression,
    loss_l1,
    loss_l2,
    predict,
    train_regression,
)
from prosody.decoders.tensor import ContractError, DimensionError, Tensor
from prosody.decoders.training import TrainConfig


@pytest.fixture
def head(rng) -> ParameterStore:
    store = ParameterStore()
    init_regression(store, 3, 2, RegressionConfig(hidden=4, depth=1), rng)
    return store


class TestPredict:
    def test_zero_output_layer(self, head, rng):
        out = predict(Tensor(rng.normal(size=(5, 3))), head, RegressionConfig(hidden=4, depth=1))
        assert out.shape == (5, 2)
        assert np.all(out.numpy() == 0.0)

    def test_width_mismatch(self, head):
        with pytest.raises(ContractError):
            predict(Tensor(np.ones((2, 4))), head, RegressionConfig(hidden=4, depth=1))


class TestLosses:
    def test_l2_examples(self, rng):
        x = rng.normal(size=(4, 2))
        assert loss_l2(Tensor(x), x).item() == 0.0
        assert loss_l2(Tensor(x + 1.0), x).item() == pytest.approx(1.0)

    def test_l1_examples(self, rng):
        x = rng.normal(size=(4, 2))
        assert loss_l1(Tensor(x), x).item() == 0.0
        assert loss_l1(Tensor(x - 2.0), x).item() == pytest.approx(2.0)

    def test_masked_losses_match_loops(self, rng):
        pred, target = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        mask = np.array([True, False, True, True, False, True])
        squared, absolute, count = 0.0, 0.0, 0
        for i in range(6):
            if not mask[i]:
                continue
            for d in range(2):
                squared += (pred[i, d] - target[i, d]) ** 2
                absolute += abs(pred[i, d] - target[i, d])
                count += 1
        assert loss_l2(Tensor(pred), target, mask).item() == pytest.approx(squared / count, rel=1e-12)
        assert loss_l1(Tensor(pred), target, mask).item() == pytest.approx(absolute / count, rel=1e-12)

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            loss_l2(Tensor(np.ones((2, 2))), np.zeros((2, 2)), np.array([False, False]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss_l1(Tensor(np.ones((2, 2))), np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("loss", [loss_l2, loss_l1])
    def test_gradcheck(self, seed, loss, randomize):
        rng = np.random.default_rng(seed)
        config = RegressionConfig(hidden=3, depth=1)
        store = ParameterStore()
        init_regression(store, 2, 2, config, rng)
        randomize(store, rng)
        c = Tensor(rng.normal(size=(5, 2)))
        # odd row count keeps the L1 sign sums away from zero
        target = rng.normal(size=(5, 2)) * 3.0

        errors = finite_diff_check_params(store, lambda params: loss(predict(c, params, config), target))
        assert max(errors.values()) < 1e-4


def test_head_fits_linear_targets():
    rng = np.random.default_rng(3)
    config = RegressionConfig(hidden=8, depth=1)
    store = ParameterStore()
    init_regression(store, 3, 2, config, rng)
    c = rng.normal(size=(64, 3))
    target = c @ rng.normal(size=(3, 2)) * 0.5
    state = AdamState.create(store, lr=0.01)
    for _ in range(3000):
        loss, grads = parameter_gradients(
            store, lambda params: loss_l2(predict(Tensor(c), params, config), target)
        )
        adam_step(store, grads, state)
    assert loss.item() < 1e-4


class TestTraining:
    def test_deterministic_and_decreasing(self, tiny_corpus, tiny_encoder):
        config = TrainConfig(steps=200, batch_size=16, lr=0.01, log_every=0)

        def run():
            model = RegressionModel("prosody", tiny_encoder, 2, config=RegressionConfig(hidden=8, depth=1))
            return train_regression(tiny_corpus.train, model, config, seed=4)

        model, curve = run()
        _, again = run()
        assert curve.values == again.values
        losses = curve.column()
        assert len(losses) == 200
        assert np.mean(losses[-20:]) < losses[0]
        assert model.scaler.std.shape == (2,)
