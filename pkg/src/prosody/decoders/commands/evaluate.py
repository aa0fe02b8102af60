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
"""Compare generated records with the oracle corpus: pooled STDs and JSDs."""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import base_parser, run_command
from ..corpus import UtteranceRecord, load_corpus
from ..experiment import load_config, load_samples
from ..metrics import build_report, render_table


def _model_name(path: Path, manifest: Dict, taken: Dict) -> str:
    name = manifest.get("model") or path.stem
    if name in taken:
        name = path.stem
    suffix = 2
    base = name
    while name in taken:
        name = f"{base}-{suffix}"
        suffix += 1
    return name


def evaluate(args: argparse.Namespace) -> None:
    """Builds the report, writes it as JSON with a text table next to it."""
    config = load_config(args.config)
    oracle = load_corpus(args.oracle).split(args.split)
    samples: Dict[str, List[UtteranceRecord]] = {}
    manifests = {}
    for generated in args.generated:
        path = Path(generated)
        records, manifest = load_samples(path)
        name = _model_name(path, manifest, samples)
        samples[name] = records
        manifests[name] = manifest

    provenance = {
        "oracle": str(args.oracle),
        "split": args.split,
        "generated": {name: str(path) for name, path in zip(samples, args.generated)},
        "samples": manifests,
        "config": config.to_dict(),
    }
    report = build_report(oracle, samples, config.eval, provenance)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as report_file:
        json.dump(report.to_json_struct(), report_file, indent=2)
        report_file.write("\n")
    table = render_table(report)
    out_path.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint."""
    parser = base_parser(__doc__)
    parser.add_argument("--oracle", type=str, required=True, help="Corpus directory with the oracle records")
    parser.add_argument("--split", type=str, default="test", help="Oracle split (default: test)")
    parser.add_argument("--generated", type=str, nargs="+", required=True, help="Generated JSONL files")
    parser.add_argument("--out", type=str, required=True, help="Report file (JSON)")
    return run_command(parser, evaluate, argv)


if __name__ == "__main__":
    sys.exit(main())
