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
"""Generate the synthetic train/dev/test corpus described by a configuration."""

import argparse
import sys
from typing import List, Optional

from . import base_parser, run_command
from ..corpus import gen_corpus, save_corpus
from ..experiment import ConfigError, load_config


def gen_data(args: argparse.Namespace) -> None:
    """Writes train/dev/test JSONL files and the corpus manifest."""
    if args.config is None:
        raise ConfigError("--config is required")
    config = load_config(args.config).with_overrides(seed=args.seed)
    corpus = gen_corpus(config.data)
    out_dir = save_corpus(corpus, args.out, provenance={"seed": config.seed, "config": config.to_dict()})
    counts = f"{len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)}"
    print(f"Wrote {counts} train/dev/test utterances to {out_dir}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entrypoint."""
    parser = base_parser(__doc__)
    parser.add_argument("--out", type=str, required=True, help="Output corpus directory")
    return run_command(parser, gen_data, argv)


if __name__ == "__main__":
    sys.exit(main())
