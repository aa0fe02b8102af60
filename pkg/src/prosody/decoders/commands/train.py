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
"""Train one decoder on a corpus and write its checkpoint with a loss.csv curve."""

import argparse
import sys
from typing import List, Optional

from . import base_parser, run_command
from ..corpus import load_corpus
from ..experiment import MODEL_KINDS, load_config, save_model, train_model


def train(args: argparse.Namespace) -> None:
    """Trains the selected model and saves it."""
    config = load_config(args.config).with_overrides(seed=args.seed, model=args.model, task=args.task)
    corpus = load_corpus(args.corpus)
    model, curve = train_model(config, corpus)
    out_dir = save_model(model, args.out, config, curve)
    losses = curve.column("loss")
    print(f"Trained {model.kind} for {len(losses)} steps: loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    print(f"Checkpoint written to {out_dir}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint."""
    parser = base_parser(__doc__)
    parser.add_argument("--corpus", type=str, required=True, help="Corpus directory")
    parser.add_argument("--model", type=str, choices=sorted(MODEL_KINDS), help="Decoder family")
    parser.add_argument("--task", type=str, choices=["prosody", "frames"], help="Target features")
    parser.add_argument("--out", type=str, required=True, help="Checkpoint directory to write")
    return run_command(parser, train, argv)


if __name__ == "__main__":
    sys.exit(main())
