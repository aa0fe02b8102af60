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
"""Generate prosody (or frame) sequences for every utterance of a corpus split."""

import argparse
import sys
from typing import List, Optional

from . import base_parser, run_command
from ..corpus import load_corpus
from ..experiment import ExperimentConfig, default_tau, load_config, load_model, sample_records, save_samples


def sample(args: argparse.Namespace) -> None:
    """Samples from a checkpoint and writes the records with their manifest."""
    model, metadata = load_model(args.ckpt)
    if args.config:
        config = load_config(args.config)
    else:
        config = ExperimentConfig.from_dict(metadata.get("config", {}))
    config = config.with_overrides(seed=args.seed, tau=args.tau, draws=args.draws, workers=args.workers)
    sampling = config.sampling
    tau = sampling.tau if sampling.tau is not None else default_tau(model.kind)

    records = load_corpus(args.corpus).split(args.split)
    samples = sample_records(
        model, records, tau, sampling.draws, config.seed, sampling.workers, sampling.chunk_size
    )
    manifest = {
        "checkpoint": str(args.ckpt),
        "corpus": str(args.corpus),
        "split": args.split,
        "model": model.kind,
        "task": model.task,
        "tau": tau,
        "draws": len(samples) // max(1, len(records)),
        "seed": config.seed,
        "config": config.to_dict(),
    }
    out_path = save_samples(samples, args.out, manifest)
    print(f"Wrote {len(samples)} {model.kind} records (tau={tau}) to {out_path}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint."""
    parser = base_parser(__doc__)
    parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint directory")
    parser.add_argument("--corpus", type=str, required=True, help="Corpus directory")
    parser.add_argument("--split", type=str, default="test", help="Split to condition on (default: test)")
    parser.add_argument("--tau", type=float, help="Sampling temperature (default: 0.4 flow, 0.8 diff)")
    parser.add_argument("--draws", type=int, help="Independent draws per utterance")
    parser.add_argument("--workers", type=int, help="Sampling threads (results do not depend on it)")
    parser.add_argument("--out", type=str, required=True, help="Output JSONL file")
    return run_command(parser, sample, argv)


if __name__ == "__main__":
    sys.exit(main())
