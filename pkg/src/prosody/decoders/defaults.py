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
"""Default experiment parameters in one object."""


class DefaultParams:
    """Store the default hyperparameters shared by all experiments."""

    # Adam
    learning_rate = 1e-3
    adam_b1 = 0.9
    adam_b2 = 0.999
    adam_eps = 1e-8
    clip_norm = 5.0

    # Training loop
    train_steps = 3000
    batch_size = 32
    log_every = 100

    # Encoder
    phone_dim = 16
    style_dim = 8
    context_width = 5
    encoder_hidden = 64
    encoder_depth = 2
    encoder_out_dim = 32

    # Decoders
    decoder_hidden = 64
    decoder_depth = 2
    flow_steps = 8
    flow_s_max = 3.0
    time_embed_dim = 16

    # Diffusion schedule
    beta0 = 0.05
    beta1 = 20.0
    t_min = 1e-4
    n_sample_steps = 100

    # Sampling temperatures per model family
    tau = {
        "l2": 0.0,
        "flow": 0.4,
        "diff": 0.8,
    }
    tau_grid = (0.2, 0.4, 0.6, 0.8)

    # Evaluation
    n_bins = 64
    range_expand = 0.01
    smoothing = 1e-6
    duration_cap = 40
    sensitivity_bins = (32, 64, 128)

    # Synthetic corpus
    frame_dim = 8
