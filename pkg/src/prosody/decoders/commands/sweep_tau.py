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
"""Temperature sweep: STD and JSD of generative checkpoints over a grid of tau values."""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from . import base_parser, run_command
from ..corpus import load_corpus
from ..experiment import ConfigError, ExperimentConfig, load_config, load_model, render_sweep_table, sweep_tau
from ..training import ConditionalModel


def parse_taus(text: str) -> Tuple[float, ...]:
    """Parses a comma-separated list of temperatures."""
    try:
        taus = tuple(float(value) for value in text.split(",") if value.strip())
    except ValueError as ex:
        raise ConfigError(f"Invalid temperature list '{text}'") from ex
    if not taus or any(tau < 0 for tau in taus):
        raise ConfigError(f"Temperatures must be a non-empty list of values >= 0, got '{text}'")
    return taus


def sweep(args: argparse.Namespace) -> None:
    """Runs the sweep for every checkpoint and writes the report."""
    models: List[Tuple[str, ConditionalModel]] = []
    config: Optional[ExperimentConfig] = load_config(args.config) if args.config else None
    for ckpt in args.ckpt:
        model, metadata = load_model(ckpt)
        if config is None:
            config = ExperimentConfig.from_dict(metadata.get("config", {}))
        name = model.kind if model.kind not in dict(models) else Path(ckpt).name
        models.append((name, model))
    assert config is not None
    config = config.with_overrides(seed=args.seed, draws=args.draws, workers=args.workers)
    taus = parse_taus(args.taus) if args.taus else config.sampling.taus

    oracle = load_corpus(args.corpus).split(args.split)
    sampling = config.sampling
    report = sweep_tau(models, oracle, taus, config.eval, sampling.draws, config.seed, sampling.workers)
    report["provenance"] = {
        "checkpoints": [str(ckpt) for ckpt in args.ckpt],
        "corpus": str(args.corpus),
        "split": args.split,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as report_file:
        json.dump(report, report_file, indent=2)
        report_file.write("\n")
    table = render_sweep_table(report)
    out_path.with_suffix(".txt").write_text(table, encoding="utf-8")
    print(table, end="")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint."""
    parser = base_parser(__doc__)
    parser.add_argument(
        "--ckpt", type=str, nargs="+", required=True, help="Flow and/or diffusion checkpoints"
    )
    parser.add_argument("--corpus", type=str, required=True, help="Corpus directory")
    parser.add_argument("--split", type=str, default="test", help="Split to condition on (default: test)")
    parser.add_argument("--taus", type=str, help="Comma-separated temperatures (default: 0.2,0.4,0.6,0.8)")
    parser.add_argument("--draws", type=int, help="Independent draws per utterance")
    parser.add_argument("--workers", type=int, help="Sampling threads (results do not depend on it)")
    parser.add_argument("--out", type=str, required=True, help="Report file (JSON)")
    return run_command(parser, sweep, argv)


if __name__ == "__main__":
    sys.exit(main())
